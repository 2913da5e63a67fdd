import numpy as np
import pytest
from hypothesis import given, strategies as st

from Core.errors import (
    DegenerateBody,
    EmptyInterior,
    InvalidSpec,
    UnboundedBody,
    UnsupportedDimension,
)
from Core.geometry import (
    HalfspaceSpec,
    SupportSamples,
    box_polytope,
    chebyshev_center,
    diameter,
    hausdorff_distance,
    icosphere_ball,
    lp_combine,
    polygon_ball,
    polytope_from_halfspaces,
    reflect,
    refinement_directions,
    rigid_signed_permutation,
    rotate,
    scale,
    support_function,
    translate,
    truncated_icosahedron_ball,
    validate_spread,
    vertex_centroid,
    wulff_shape,
)

AXES = np.vstack([np.eye(3), -np.eye(3)])


def test_cube_from_halfspaces(cube):
    assert cube.volume == pytest.approx(8.0)
    assert len(cube.vertices) == 8
    assert np.allclose(cube.areas, 4.0)
    assert np.allclose(cube.supports, 1.0)
    assert cube.inradius == pytest.approx(1.0)
    assert cube.circumradius == pytest.approx(np.sqrt(3.0))
    assert cube.contains_origin_interior()


def test_redundant_halfspace_is_inactive():
    diag = np.ones(3) / np.sqrt(3.0)
    P = polytope_from_halfspaces(HalfspaceSpec(np.vstack([AXES, diag]), np.r_[np.ones(6), 5.0]))
    assert P.volume == pytest.approx(8.0)
    assert not P.facets[6].active
    assert P.facets[6].support == pytest.approx(np.sqrt(3.0))
    assert P.facets[6].offset == 5.0


@pytest.mark.parametrize("directions, offsets, error", [
    (AXES[:3], np.ones(3), InvalidSpec),
    (AXES * 1.1, np.ones(6), InvalidSpec),
    (np.vstack([AXES, AXES[:1]]), np.ones(7), InvalidSpec),
    (AXES, np.r_[-1.0, np.ones(5)], InvalidSpec),
    (np.zeros((6, 4)), np.ones(6), UnsupportedDimension),
])
def test_spec_validation(directions, offsets, error):
    with pytest.raises(error):
        HalfspaceSpec(directions, offsets)


def test_hemisphere_directions_are_unbounded():
    dirs = np.vstack([np.eye(3), np.ones(3) / np.sqrt(3.0)])
    assert not validate_spread(dirs)
    with pytest.raises(UnboundedBody):
        polytope_from_halfspaces(HalfspaceSpec(dirs, np.ones(4)))


def test_flat_body_has_empty_interior():
    with pytest.raises(EmptyInterior):
        polytope_from_halfspaces(HalfspaceSpec(AXES, [0.0, 1.0, 1.0, 0.0, 1.0, 1.0]))


def test_validate_spread_accepts_axes_and_simplex():
    assert validate_spread(AXES)
    simplex = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / np.sqrt(3.0)
    assert validate_spread(simplex)
    assert not validate_spread(AXES[:4])


def test_chebyshev_center_of_box():
    center, radius = chebyshev_center(AXES, np.array([2.0, 1.0, 1.0, 0.0, 1.0, 1.0]))
    assert radius == pytest.approx(1.0)
    assert center[1:] == pytest.approx([0.0, 0.0], abs=1e-9)


def test_support_function_is_vectorized(cube):
    diag = np.ones(3) / np.sqrt(3.0)
    assert support_function(cube, diag) == pytest.approx(np.sqrt(3.0))
    values = support_function(cube, np.vstack([diag, AXES]))
    assert values == pytest.approx(np.r_[np.sqrt(3.0), np.ones(6)])


def test_scale_translate_reflect(cube):
    big = scale(cube, 2.0)
    assert big.volume == pytest.approx(64.0)
    assert np.allclose(big.offsets, 2.0)
    assert np.allclose(big.areas, 16.0)

    moved = translate(cube, [0.5, 0.0, 0.0])
    assert moved.offsets == pytest.approx([1.5, 1.0, 1.0, 0.5, 1.0, 1.0])
    assert vertex_centroid(moved) == pytest.approx([0.5, 0.0, 0.0])
    assert hausdorff_distance(reflect(moved), translate(cube, [-0.5, 0.0, 0.0])) == pytest.approx(0.0, abs=1e-12)

    with pytest.raises(DegenerateBody):
        translate(cube, [2.0, 0.0, 0.0])
    with pytest.raises(InvalidSpec):
        scale(cube, 0.0)


def test_rotate_by_signed_permutation():
    box = box_polytope([0.5, 1.0, 2.0])
    Q = rigid_signed_permutation(3, [1, 2, 0], [1.0, -1.0, 1.0])
    turned = rotate(box, Q)
    assert turned.volume == pytest.approx(box.volume)
    assert support_function(turned, [0.0, 1.0, 0.0]) == pytest.approx(0.5)
    with pytest.raises(InvalidSpec):
        rotate(box, 2.0 * np.eye(3))


def test_diameter_and_hausdorff(cube):
    assert diameter(cube) == pytest.approx(2.0 * np.sqrt(3.0))
    assert hausdorff_distance(cube, cube) == 0.0
    # the largest support gap is attained at a vertex direction
    assert hausdorff_distance(cube, scale(cube, 2.0)) == pytest.approx(np.sqrt(3.0))


def test_standard_balls():
    ball = icosphere_ball(1.0)
    assert len(ball.facets) == 320
    assert ball.active.all()
    assert ball.circumradius == pytest.approx(1.0, abs=1e-9)
    assert ball.volume < 4.0 * np.pi / 3.0
    assert len(truncated_icosahedron_ball().facets) == 32
    polygon = polygon_ball(64, 1.0)
    assert polygon.volume == pytest.approx(32.0 * np.sin(2.0 * np.pi / 64))


def test_refinement_directions_cover_count():
    dirs = refinement_directions(3)
    assert len(dirs) >= 320
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert len(refinement_directions(2, 100)) == 100


def test_wulff_shape_of_cube_samples(cube):
    dirs = np.vstack([AXES, refinement_directions(3)])
    samples = SupportSamples.from_polytope(cube, dirs)
    assert hausdorff_distance(samples.wulff(), cube) == pytest.approx(0.0, abs=1e-9)
    pairs = list(zip(AXES, np.ones(6)))
    assert wulff_shape(pairs).volume == pytest.approx(8.0)


def test_support_samples_sum_and_lookup(cube):
    samples = SupportSamples.from_polytope(cube)
    assert samples.lp_sum(samples, 1.0).values == pytest.approx(2.0 * np.ones(6))
    assert samples.lp_sum(samples, 2.0).values == pytest.approx(np.sqrt(2.0) * np.ones(6))
    diag = np.ones(3) / np.sqrt(3.0)
    assert samples.at(np.vstack([AXES[:1], diag])) == pytest.approx([1.0, np.sqrt(3.0)])
    with pytest.raises(InvalidSpec):
        samples.lp_sum(SupportSamples(AXES[::-1], np.ones(6)), 2.0)
    with pytest.raises(InvalidSpec):
        SupportSamples(AXES, -np.ones(6))


def test_lp_combine_of_dilates(cube):
    combined = lp_combine(cube, cube, 2.0)
    assert hausdorff_distance(combined, scale(cube, np.sqrt(2.0))) == pytest.approx(0.0, abs=1e-9)
    assert combined.approximation_error == pytest.approx(0.0, abs=1e-9)
    alone = lp_combine(cube, None, 3.0)
    assert alone.volume == pytest.approx(8.0)


@pytest.mark.parametrize("p", [1.0, 2.0, 4.0])
def test_lp_combine_contains_its_first_argument(cube, p):
    box = box_polytope([0.3, 0.6, 0.9])
    check = np.vstack([refinement_directions(3, 500), AXES])
    smaller = lp_combine(cube, box, p, t=0.5)
    larger = lp_combine(cube, box, p, t=1.0)
    assert np.all(support_function(smaller, check) >= support_function(cube, check) - 1e-9)
    assert np.all(support_function(larger, check) >= support_function(smaller, check) - 1e-9)
    assert cube.volume < smaller.volume < larger.volume


OFF_CENTRE = translate(box_polytope([0.5, 1.0, 1.5]), np.array([0.2, -0.1, 0.3]))
VECTOR = st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3)


@given(VECTOR, VECTOR, st.floats(0.1, 5.0))
def test_support_function_is_sublinear(u, v, s):
    u, v = np.asarray(u), np.asarray(v)
    h_sum = support_function(OFF_CENTRE, u + v)
    assert h_sum <= support_function(OFF_CENTRE, u) + support_function(OFF_CENTRE, v) + 1e-12
    h_u = support_function(OFF_CENTRE, u)
    assert support_function(OFF_CENTRE, s * u) == pytest.approx(s * h_u, rel=1e-9, abs=1e-12)


@given(st.lists(st.floats(0.2, 3.0), min_size=3, max_size=3), st.floats(0.3, 3.0))
def test_box_volume_is_homogeneous(half_widths, s):
    box = box_polytope(half_widths)
    assert box.volume == pytest.approx(8.0 * np.prod(half_widths), rel=1e-9)
    assert scale(box, s).volume == pytest.approx(s ** 3 * box.volume, rel=1e-9)


@given(st.lists(st.floats(0.2, 3.0), min_size=3, max_size=3),
       st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3).filter(lambda u: np.linalg.norm(u) > 1e-3))
def test_box_support_is_weighted_l1(half_widths, u):
    u = np.asarray(u) / np.linalg.norm(u)
    box = box_polytope(half_widths)
    assert support_function(box, u) == pytest.approx(float(np.abs(u) @ half_widths), rel=1e-9)
