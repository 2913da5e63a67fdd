from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from Core.errors import (
    CentroidViolation,
    CriticalExponent,
    InvalidConfig,
    InvalidExponent,
    InvalidMeasure,
    NoConvergence,
    SpreadViolation,
    ZeroFunctional,
)
from Core.event_manager import EventManager, SOLVER_FINISHED, SOLVER_ITERATION
from Core.geometry import box_polytope, hausdorff_distance, reflect
from Core.measures import DiscreteMeasure, uniform_axis_measure
import Managers.capacity_engine as capacity_engine
import Managers.minkowski_solver as minkowski_solver
from Managers.minkowski_solver import (
    SolverConfig,
    constraint_value,
    floor_lift,
    functional_fp,
    kkt_residual,
    normalize_problem4,
    normalize_problem3,
    problem5_residual,
    rescale_unnormalized,
    solve_discrete_lp,
    solve_discrete_p1,
)

E = np.eye(3)


@pytest.mark.parametrize("kwargs", [
    {"kkt_tol": 0.0},
    {"floor_frac": 0.2},
    {"step0": 1.5},
    {"max_outer_iters": 0},
    {"init": "sobol"},
])
def test_solver_config_validation(kwargs):
    with pytest.raises(InvalidConfig):
        SolverConfig(**kwargs)


def test_kkt_residual():
    assert kkt_residual([1.0, 2.0], [1.0, 1.0], 2.0, [1.0, 2.0], 1.0) == pytest.approx(0.0)
    assert kkt_residual([1.0, 2.0], [1.0, 1.0], 2.0, [2.0, 2.0], 1.0) == pytest.approx(1.0)
    assert kkt_residual([1.0, 2.0], [1.0, 1.0], 1.0, [2.0, 2.0], 2.0) == pytest.approx(0.0)


def test_functional_and_constraint(cube):
    mu = uniform_axis_measure(3)
    assert functional_fp(cube, mu, 2.0, 2.0) == pytest.approx(6.0)
    assert functional_fp(cube, mu, 1.0, 1.5) == pytest.approx(0.5 / 1.5 * 6.0)
    assert constraint_value(np.ones(6), mu.weights, 3.0, 3, 2.0) == pytest.approx(6.0)


def test_problem5_residual(cube):
    mu = uniform_axis_measure(3)
    assert problem5_residual(cube, mu, 1.0, np.ones(6), 1.0) == pytest.approx(0.0)
    with pytest.raises(InvalidMeasure):
        problem5_residual(cube, DiscreteMeasure([np.ones(3) / np.sqrt(3.0)], [1.0]), 1.0, np.ones(6), 1.0)


# axis weight chosen so the solution cube fits the solver grid
@pytest.mark.parametrize("p, weight", [(1.5, 1.0), (2.0, 1.0), (4.0, 8.0)])
def test_axis_measure_gives_a_cube(solver_cfg, p, weight):
    mu = uniform_axis_measure(3, weight)
    result = solve_discrete_lp(mu, p, 2.0, solver_cfg)
    assert result.converged
    assert result.iterations == 1
    assert result.offsets == pytest.approx(np.full(6, (6.0 * weight) ** (-1.0 / p)))
    assert constraint_value(result.offsets, mu.weights, p, 3, 2.0) == pytest.approx(1.0)
    assert result.multiplier * result.capacity == pytest.approx(1.0)
    assert result.normalization == 1.0
    assert result.kkt_residual <= solver_cfg.kkt_tol
    assert result.unnormalized is not None


def test_result_serializes(solver_cfg):
    result = solve_discrete_lp(uniform_axis_measure(3), 2.0, 2.0, solver_cfg)
    data = result.to_dict()
    assert data["offsets"] == pytest.approx(result.offsets.tolist())
    assert len(data["vertices"]) == 8
    assert data["translation"] is None
    assert data["trace"][0]["iteration"] == 1
    assert "unnormalized_offsets" in data


def test_p1_axis_measure_is_centred(solver_grid):
    # room for trial steps of the translated ascent
    cfg = SolverConfig(grid=replace(solver_grid, min_box_ratio=2.0))
    mu = uniform_axis_measure(3, 0.4)
    result = solve_discrete_p1(mu, 2.0, cfg)
    assert result.converged
    # n - pexp - p = 0, so the normalization is the capacity
    assert result.normalization == pytest.approx(result.capacity)
    assert result.unnormalized is None
    assert result.translation == pytest.approx(np.zeros(3), abs=1e-6)
    assert result.offsets == pytest.approx(np.full(6, 1.0 / 2.4), rel=1e-6)


@pytest.mark.parametrize("method", ["flux", "variational"])
def test_solver_uses_the_grid_measure_method(monkeypatch, solver_grid, method):
    class Stop(Exception):
        pass

    seen = []

    def fake_measure(K, cfg, pexp, method=None, calibrate=False, initial=None):
        seen.append(method or cfg.measure_method)
        raise Stop

    monkeypatch.setattr(capacity_engine, "measure_with_capacity", fake_measure)
    cfg = SolverConfig(grid=replace(solver_grid, measure_method=method))
    with pytest.raises(Stop):
        solve_discrete_lp(uniform_axis_measure(3), 2.0, 2.0, cfg)
    assert seen == [method]


def test_p1_needs_balanced_measure(solver_cfg):
    mu = DiscreteMeasure(np.vstack([E, -E]), [2.0, 1.0, 1.0, 1.0, 1.0, 1.0])
    with pytest.raises(CentroidViolation):
        solve_discrete_p1(mu, 2.0, solver_cfg)


def test_hemisphere_measure_is_rejected(solver_cfg):
    mu = DiscreteMeasure(np.vstack([E, np.ones(3) / np.sqrt(3.0)]), np.ones(4))
    with pytest.raises(SpreadViolation):
        solve_discrete_lp(mu, 2.0, 2.0, solver_cfg)


@pytest.mark.parametrize("p, pexp", [(1.0, 2.0), (0.5, 2.0), (2.0, 3.0), (2.0, 1.0)])
def test_exponents_are_checked(solver_cfg, p, pexp):
    with pytest.raises(InvalidExponent):
        solve_discrete_lp(uniform_axis_measure(3), p, pexp, solver_cfg)


def test_dimension_mismatch(solver_cfg):
    with pytest.raises(InvalidConfig):
        solve_discrete_lp(uniform_axis_measure(2), 2.0, 1.5, solver_cfg)


def test_zero_functional():
    flat_side = box_polytope([1.0, 1.0, 1.0]).with_offsets([0.0, 1.0, 1.0, 1.0, 1.0, 1.0])
    with pytest.raises(ZeroFunctional):
        normalize_problem3(flat_side, DiscreteMeasure([E[0]], [1.0]), 2.0, 2.0)


def test_rounding_noise_counts_as_zero_functional():
    nearly_flat = box_polytope([1.0, 1.0, 1.0]).with_offsets([1e-14, 1.0, 1.0, 1.0, 1.0, 1.0])
    with pytest.raises(ZeroFunctional):
        normalize_problem3(nearly_flat, DiscreteMeasure([E[0]], [1.0]), 2.0, 2.0)
    thin = box_polytope([1.0, 1.0, 1.0]).with_offsets([1e-3, 1.0, 1.0, 1.0, 1.0, 1.0])
    K = normalize_problem3(thin, DiscreteMeasure([E[0]], [1.0]), 2.0, 2.0)
    assert functional_fp(K, DiscreteMeasure([E[0]], [1.0]), 2.0, 2.0) == pytest.approx(1.0)


def test_normalize_problem3_scales_to_unit_functional(cube):
    mu = uniform_axis_measure(3)
    K = normalize_problem3(cube, mu, 2.0, 2.0)
    assert functional_fp(K, mu, 2.0, 2.0) == pytest.approx(1.0)


def test_normalize_problem4(monkeypatch, cube, warnings_seen):
    capacities = iter([8.0, 1.2])
    monkeypatch.setattr(minkowski_solver, "p_capacity", lambda K, cfg, pexp: SimpleNamespace(value=next(capacities)))
    K_bar = normalize_problem4(cube, None, 2.0)
    assert K_bar.offsets == pytest.approx(np.full(6, 1.0 / 8.0))
    # the re-solved capacity is 1.2, far from 1
    assert warnings_seen and warnings_seen[0][0] == "Solver"

    capacities = iter([27.0])
    K_bar = normalize_problem4(cube, None, 1.5, verify=False)
    assert K_bar.offsets == pytest.approx(np.full(6, 27.0 ** (-1.0 / 1.5)))


def test_critical_exponent_has_no_rescaling(cube, solver_cfg):
    with pytest.raises(CriticalExponent):
        rescale_unnormalized(cube, 1.0, 2.0, solver_cfg.grid)
    # away from the critical case the capacity can be passed in
    moved = rescale_unnormalized(cube, 2.0, 1.5, solver_cfg.grid, capacity=4.0)
    assert moved.offsets == pytest.approx(np.full(6, 4.0 ** (-1.0 / (3 - 1.5 - 2.0))))


@pytest.mark.parametrize("solved, warned", [(0.25, False), (0.4, True)])
def test_rescaling_checks_capacity_homogeneity(monkeypatch, cube, warnings_seen, solved, warned):
    # n - pexp - p = -1, so C = 0.5 scales by s = 0.5 and C(sP) should be s * C = 0.25
    monkeypatch.setattr(minkowski_solver, "p_capacity", lambda K, cfg, pexp: SimpleNamespace(value=solved))
    moved = rescale_unnormalized(cube, 2.0, 2.0, None, capacity=0.5, verify=True)
    assert moved.offsets == pytest.approx(np.full(6, 0.5))
    assert bool(warnings_seen) == warned


def test_floor_lift_keeps_the_constraint_sum():
    y = np.array([1.0, 0.9, 0.8, 0.005, 0.7, 0.001])
    c = np.array([1.0, 2.0, 1.0, 0.5, 1.5, 1.0])
    for p in (1.0, 2.0, 3.5):
        out, t = floor_lift(y, c, p, 0.02)
        assert float(np.sum(c * out ** p)) == pytest.approx(float(np.sum(c * y ** p)), rel=1e-12)
        assert t <= 2 * 0.02 * y.max()
        assert out[3] == out[5] == t
        assert np.all(out > 0) and np.all(out[[0, 1, 2, 4]] < y[[0, 1, 2, 4]])


def test_floor_lift_leaves_healthy_offsets_alone():
    y = np.array([1.0, 0.5, 0.25])
    out, t = floor_lift(y, np.ones(3), 2.0, 0.02)
    assert t is None
    assert np.array_equal(out, y)


def test_solver_events(solver_cfg):
    iterations, finished = [], []
    EventManager.get_instance().subscribe(SOLVER_ITERATION, iterations.append)
    EventManager.get_instance().subscribe(SOLVER_FINISHED, finished.append)
    result = solve_discrete_lp(uniform_axis_measure(3), 2.0, 2.0, solver_cfg)
    assert len(iterations) == result.iterations
    assert finished[-1]["capacity"] == result.capacity


def test_iteration_limit_raises_with_best_iterate(fine_grid_2d):
    e = np.eye(2)
    mu = DiscreteMeasure(np.vstack([e, -e]), [1.0, 2.0, 1.0, 2.0])
    cfg = SolverConfig(grid=replace(fine_grid_2d, richardson=False), max_outer_iters=1)
    with pytest.raises(NoConvergence) as err:
        solve_discrete_lp(mu, 2.0, 1.5, cfg)
    best = err.value.best
    assert best is not None and not best.converged
    assert best.kkt_residual > cfg.kkt_tol
    assert err.value.diagnostics["iterations"] == 1


# ─── Acceptance scale ───

@pytest.mark.slow
def test_rectangle_measure_converges(fine_grid_2d):
    e = np.eye(2)
    mu = DiscreteMeasure(np.vstack([e, -e]), [1.0, 2.0, 1.0, 2.0])
    result = solve_discrete_lp(mu, 2.0, 1.5, SolverConfig(grid=fine_grid_2d))
    assert result.converged
    assert problem5_residual(result.polytope, mu, 2.0, result.masses, result.capacity) <= 0.02
    # heavier weight on the vertical normals means a flatter body
    assert result.offsets[1] < result.offsets[0]
    assert hausdorff_distance(result.polytope, reflect(result.polytope)) <= 0.01 * result.offsets.max()


@pytest.mark.slow
def test_random_initialization_reaches_the_same_body(fine_grid_2d):
    e = np.eye(2)
    mu = DiscreteMeasure(np.vstack([e, -e]), [1.0, 2.0, 1.0, 2.0])
    cfg = SolverConfig(grid=fine_grid_2d)
    first = solve_discrete_lp(mu, 2.0, 1.5, cfg)
    second = solve_discrete_lp(mu, 2.0, 1.5, replace(cfg, init="random", seed=7))
    assert second.offsets == pytest.approx(first.offsets, rel=0.02)
