import itertools
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

import Core.lattice as lattice
from Core.dirichlet import (
    DirichletEnergy,
    color_classes,
    gauss_seidel_minimize,
    newton_minimize,
)
from Core.errors import DomainTooSmall, InvalidConfig, UnsupportedDimension
from Core.geometry import box_polytope, lp_combine
from Core.lattice import FREE, INTERIOR, OUTER, GridConfig, rasterize


@pytest.mark.parametrize("kwargs, error", [
    ({"h": 0.0}, InvalidConfig),
    ({"h": 0.01, "box_radius": 8.0}, InvalidConfig),
    ({"h": 1.0, "box_radius": 3.0}, InvalidConfig),
    ({"boundary_mode": "neumann"}, InvalidConfig),
    ({"minimizer": "adam"}, InvalidConfig),
    ({"cut_floor": 0.6}, InvalidConfig),
    ({"measure_method": "exact"}, InvalidConfig),
    ({"n": 4}, UnsupportedDimension),
])
def test_grid_config_validation(kwargs, error):
    with pytest.raises(error):
        GridConfig(**kwargs)


def test_grid_config_helpers():
    cfg = GridConfig(n=3, h=0.25, box_radius=4.5)
    assert cfg.half_cells == 18
    assert cfg.points_per_axis == 37
    coarse = cfg.coarsened()
    assert coarse.h == 0.5 and not coarse.richardson
    assert cfg.memory_estimate() > 0


def test_rasterize_cube(coarse_grid, cube):
    raster = rasterize(cube, coarse_grid)
    assert raster.shape == (37, 37, 37)
    assert int(raster.interior.sum()) == 9 ** 3
    assert raster.outer[0].all() and raster.outer[:, :, -1].all()
    assert set(np.unique(raster.mask)) == {FREE, INTERIOR, OUTER}
    # lattice points on the boundary count as interior, so cut edges have full length
    assert np.allclose(np.concatenate([L.ravel() for L in raster.edge_len]), 1.0)
    assert raster.facet_edge_counts(6).tolist() == [81] * 6


def test_cut_edge_lengths(coarse_grid):
    box = box_polytope([0.6, 0.6, 0.6])
    raster = rasterize(box, coarse_grid)
    k = coarse_grid.half_cells
    # edge from x=0.5 (inside) to x=0.75 (free); the boundary sits 0.15 = 0.6h from the free end
    assert raster.edge_len[0][k + 2, k, k] == pytest.approx(0.6)
    assert raster.edge_inv[0][k + 2, k, k] == pytest.approx(1.0 / (0.6 * 0.25))
    assert raster.edge_len[0][k - 3, k, k] == pytest.approx(0.6)
    assert raster.facet_edge_counts(6).tolist() == [25] * 6


def test_short_cut_edges_are_clipped(coarse_grid):
    raster = rasterize(box_polytope([0.749, 1.0, 1.0]), coarse_grid)
    k = coarse_grid.half_cells
    assert raster.edge_len[0][k + 2, k, k] == pytest.approx(coarse_grid.cut_floor)
    assert raster.cuts[0].clipped.any()


def test_redundant_halfspaces_do_not_change_the_raster(coarse_grid, cube):
    # the Wulff shape of the cube's own samples adds planes touching only edges and corners
    wulff = lp_combine(cube, None, 2.0)
    assert int(wulff.active.sum()) == 6
    plain, sampled = rasterize(cube, coarse_grid), rasterize(wulff, coarse_grid)
    assert np.array_equal(plain.mask, sampled.mask)
    for a, b in zip(plain.edge_len, sampled.edge_len):
        assert np.allclose(a, b)
    counts = sampled.facet_edge_counts(len(wulff.facets))
    assert counts[:6].tolist() == plain.facet_edge_counts(6).tolist()
    assert not counts[6:].any()


def test_domain_too_small(coarse_grid):
    with pytest.raises(DomainTooSmall):
        rasterize(box_polytope([2.0, 2.0, 2.0]), coarse_grid)


def test_dimension_mismatch(coarse_grid):
    with pytest.raises(InvalidConfig):
        rasterize(box_polytope([0.5, 0.5]), coarse_grid)


def test_memory_warning(monkeypatch, coarse_grid, cube, warnings_seen):
    monkeypatch.setattr(lattice.psutil, "virtual_memory", lambda: SimpleNamespace(available=1024))
    rasterize(cube, coarse_grid)
    assert any(module == "Lattice" for module, _ in warnings_seen)


# ─── Discrete energy ───

@pytest.fixture
def small_energy():
    cfg = GridConfig(n=2, h=0.25, box_radius=1.5, min_box_ratio=2.5, energy_tol=1e-10, max_iters=100)
    raster = rasterize(box_polytope([0.3, 0.3]), cfg)
    return cfg, raster


def _field(raster, rng):
    u = rng.uniform(0.1, 0.9, raster.shape)
    u[raster.interior] = 1.0
    u[raster.outer] = 0.0
    return u


@pytest.mark.parametrize("pexp", [1.5, 2.0, 3.0])
def test_gradient_matches_finite_differences(small_energy, rng, pexp):
    _, raster = small_energy
    energy = DirichletEnergy(raster, pexp)
    u = _field(raster, rng)
    grad = energy.linearize(u).gradient()
    eps = 1e-6
    for idx in list(zip(*np.nonzero(raster.free)))[:15]:
        up, down = u.copy(), u.copy()
        up[idx] += eps
        down[idx] -= eps
        fd = (energy.value(up, exact=False) - energy.value(down, exact=False)) / (2 * eps)
        assert grad[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


@pytest.mark.parametrize("pexp", [1.5, 2.5])
def test_hessian_products_and_diagonal(small_energy, rng, pexp):
    _, raster = small_energy
    energy = DirichletEnergy(raster, pexp)
    u = _field(raster, rng)
    lin = energy.linearize(u)
    v = rng.normal(size=u.shape) * raster.free
    eps = 1e-6
    fd = (energy.linearize(u + eps * v).gradient() - energy.linearize(u - eps * v).gradient()) / (2 * eps)
    assert np.allclose(lin.hessp(v), fd, rtol=1e-4, atol=1e-8)

    w = rng.normal(size=u.shape) * raster.free
    assert float(np.sum(w * lin.hessp(v))) == pytest.approx(float(np.sum(v * lin.hessp(w))), rel=1e-9)

    diag = lin.diagonal()
    for idx in list(zip(*np.nonzero(raster.free)))[:10]:
        e = np.zeros(u.shape)
        e[idx] = 1.0
        assert diag[idx] == pytest.approx(lin.hessp(e)[idx], rel=1e-9)


def test_color_classes_separate_stencils():
    shape = (6, 6, 6)
    colors = color_classes(shape)
    assert set(np.unique(colors)) == {0, 1, 2, 3}
    corner = np.array([2, 2, 2])
    for backward in (False, True):
        step = -1 if backward else 1
        stencil = [corner] + [corner + step * np.eye(3, dtype=int)[d] for d in range(3)]
        assert len({int(colors[tuple(p)]) for p in stencil}) == 4


def test_minimizers_agree(small_energy):
    cfg, raster = small_energy
    energy = DirichletEnergy(raster, 2.0)
    u0 = np.zeros(raster.shape)
    u0[raster.interior] = 1.0
    newton = newton_minimize(energy, u0, cfg)
    sweeps = gauss_seidel_minimize(energy, u0, cfg)
    assert newton.converged and sweeps.converged
    assert newton.energy == pytest.approx(sweeps.energy, rel=1e-3)
    assert np.all(np.diff(sweeps.history) <= 1e-12)
    free = raster.free
    assert np.all((newton.values[free] >= 0.0) & (newton.values[free] <= 1.0))


def test_energy_commutes_with_inversion_and_transpose(small_energy):
    cfg, raster = small_energy
    energy = DirichletEnergy(raster, 2.0)
    u0 = np.zeros(raster.shape)
    u0[raster.interior] = 1.0
    u = newton_minimize(energy, u0, cfg).values
    assert np.allclose(u, u[::-1, ::-1], atol=1e-4)
    assert np.allclose(u, u.T, atol=1e-4)


@pytest.mark.parametrize("pexp", [1.5, 2.0, 2.5])
def test_offset_sensitivity_matches_finite_differences(coarse_grid, rng, pexp):
    raster = rasterize(box_polytope([0.6, 0.6, 0.6]), coarse_grid)
    u = _field(raster, rng)
    sens = DirichletEnergy(raster, pexp).offset_sensitivity(u)
    eps = 1e-6
    for d in range(3):
        for flat in raster.cuts[d].index[:4]:
            idx = np.unravel_index(flat, raster.edge_len[d].shape)
            values = []
            for step in (eps, -eps):
                lengths = [L.copy() for L in raster.edge_len]
                lengths[d][idx] += step
                moved = replace(raster, edge_len=lengths, edge_inv=[1.0 / (L * raster.h) for L in lengths])
                values.append(DirichletEnergy(moved, pexp).value(u))
            assert sens[d][idx] == pytest.approx((values[0] - values[1]) / (2 * eps), rel=1e-4, abs=1e-10)


def test_offset_sensitivity_is_symmetric_in_the_axes(coarse_grid, rng):
    raster = rasterize(box_polytope([0.6, 0.6, 0.6]), coarse_grid)
    u = _field(raster, rng)
    u = sum(np.transpose(u, perm) for perm in itertools.permutations(range(3))) / 6.0
    sens = DirichletEnergy(raster, 2.0).offset_sensitivity(u)
    assert np.allclose(sens[1], np.swapaxes(sens[0], 0, 1))
    assert np.allclose(sens[2], np.swapaxes(sens[0], 0, 2))
