# Core/geometry.py
"""Convex polytopes in halfspace form and the support-function toolkit.

A body is always described by directions xi_i (unit vectors) and offsets
y_i >= 0, i.e. P(y) = {x : x . xi_i <= y_i}. Vertices come from Qhull's
halfspace intersection; facet areas are measured by projecting each facet's
vertices onto its plane. Only n = 2 and n = 3 are supported.
"""

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError, cKDTree
from scipy.spatial.distance import pdist

from Core.errors import (
    DegenerateBody,
    EmptyInterior,
    InvalidSpec,
    UnboundedBody,
    UnsupportedDimension,
)
from Utils.log_utils import get_logger, DEBUG_L2, DEBUG_L3

logger = get_logger()

SUPPORTED_DIMENSIONS = (2, 3)
UNIT_NORM_TOL = 1e-12
RENORMALIZE_TOL = 1e-6
DUPLICATE_TOL = 1e-9
VERTEX_TOL = 1e-9
DEFAULT_REFINEMENT = 320
HAUSDORFF_SAMPLES = {2: 720, 3: 2000}


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def _check_dimension(n):
    if n not in SUPPORTED_DIMENSIONS:
        raise UnsupportedDimension(f"dimension {n} not supported (expected 2 or 3)")


@dataclass(frozen=True)
class HalfspaceSpec:
    """Directions (m, n) and nonnegative offsets (m,) defining P(y)."""

    directions: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        dirs = np.asarray(self.directions, dtype=float)
        offs = np.asarray(self.offsets, dtype=float).reshape(-1)
        if dirs.ndim != 2:
            raise InvalidSpec("directions must be a 2D array of shape (m, n)")
        m, n = dirs.shape
        _check_dimension(n)
        if offs.shape[0] != m:
            raise InvalidSpec(f"{m} directions but {offs.shape[0]} offsets")
        if m < n + 1:
            raise InvalidSpec(f"need at least n+1={n + 1} halfspaces, got {m}")
        if not (np.all(np.isfinite(dirs)) and np.all(np.isfinite(offs))):
            raise InvalidSpec("directions and offsets must be finite")

        norms = np.linalg.norm(dirs, axis=1)
        deviation = np.max(np.abs(norms - 1.0))
        if deviation > RENORMALIZE_TOL:
            raise InvalidSpec(f"directions are not unit vectors (max norm deviation {deviation:.3g})")
        if deviation > UNIT_NORM_TOL:
            dirs = dirs / norms[:, None]

        if np.any(offs < 0):
            raise InvalidSpec("offsets must be nonnegative (origin must lie in the body)")
        if not np.any(offs > 0):
            raise InvalidSpec("at least one offset must be positive")

        close = cKDTree(dirs).query_pairs(r=DUPLICATE_TOL)
        if close:
            i, j = sorted(close)[0]
            raise InvalidSpec(f"directions {i} and {j} coincide (separation < {DUPLICATE_TOL})")

        object.__setattr__(self, "directions", _frozen(dirs))
        object.__setattr__(self, "offsets", _frozen(offs))

    @property
    def n(self):
        return self.directions.shape[1]

    @property
    def m(self):
        return self.directions.shape[0]

    def with_offsets(self, offsets):
        return HalfspaceSpec(self.directions, offsets)


@dataclass(frozen=True)
class FacetRecord:
    index: int
    normal: np.ndarray
    offset: float
    support: float
    area: float
    inradius: float

    @property
    def active(self):
        return self.area > 0.0


@dataclass(frozen=True)
class Polytope:
    """Bounded polytope with cached vertices and one facet record per direction.

    ``facets[i]`` always corresponds to ``spec.directions[i]``; slack
    directions carry area 0. ``approximation_error`` is nonzero only for
    bodies built from sampled support functions (e.g. lp_combine).
    """

    spec: HalfspaceSpec
    vertices: np.ndarray
    facets: Tuple[FacetRecord, ...]
    volume: float
    interior_point: np.ndarray
    inradius: float
    approximation_error: float = 0.0

    @property
    def n(self):
        return self.spec.n

    @property
    def dimension(self):
        return self.spec.n

    @property
    def directions(self):
        return self.spec.directions

    @property
    def offsets(self):
        return self.spec.offsets

    @property
    def areas(self):
        return np.array([f.area for f in self.facets])

    @property
    def supports(self):
        return np.array([f.support for f in self.facets])

    @property
    def active(self):
        return self.areas > 0.0

    @property
    def circumradius(self):
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))

    def with_offsets(self, offsets):
        return polytope_from_halfspaces(self.spec.with_offsets(offsets))

    def contains_origin_interior(self, tol=1e-12):
        return bool(np.min(self.supports[self.active]) > tol * max(1.0, float(np.max(self.offsets))))


# ─── Construction ───

def validate_spread(directions):
    """True iff the directions are not contained in any closed hemisphere."""
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    m, n = dirs.shape
    if m < n + 1:
        return False

    # Open-hemisphere test: maximize t with xi_i . v >= t, |v|_inf <= 1.
    c = np.zeros(n + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-dirs, np.ones((m, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(m),
                  bounds=[(-1.0, 1.0)] * n + [(None, 1.0)], method="highs")
    if res.status == 0 and -res.fun > 1e-9:
        return False

    # Closed-hemisphere test: a strictly positive combination of the
    # directions must vanish and the directions must span R^n.
    c = np.zeros(m + 1)
    c[-1] = -1.0
    a_eq = np.vstack([np.hstack([dirs.T, np.zeros((n, 1))]),
                      np.hstack([np.ones((1, m)), np.zeros((1, 1))])])
    b_eq = np.concatenate([np.zeros(n), [1.0]])
    a_ub = np.hstack([-np.eye(m), np.ones((m, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(m), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0.0, None)] * m + [(None, 1.0)], method="highs")
    if res.status != 0:
        return False
    rank = np.linalg.matrix_rank(dirs)
    spread = bool(-res.fun > 1e-9 and rank == n)
    logger.debug_at_level(DEBUG_L3, "Geometry", f"validate_spread: m={m}, weight={-res.fun:.3g}, rank={rank}")
    return spread


def chebyshev_center(directions, offsets):
    m, n = directions.shape
    c = np.zeros(n + 1)
    c[-1] = -1.0
    a_ub = np.hstack([directions, np.ones((m, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=offsets, bounds=[(None, None)] * n + [(0.0, None)], method="highs")
    if res.status != 0:
        raise EmptyInterior(f"Chebyshev centre LP failed: {res.message}")
    return res.x[:n], float(res.x[-1])


def _unique_points(points, tol):
    if len(points) == 0:
        return points
    groups = cKDTree(points).query_ball_point(points, r=tol)
    keep = [i for i, group in enumerate(groups) if min(group) == i]
    return points[keep]


def _plane_basis(normal):
    _, _, vt = np.linalg.svd(normal[None, :])
    return vt[1:]


def _facet_measure(points, normal):
    """(n-1)-volume and inradius estimate of a facet given its vertices."""
    if len(points) < normal.shape[0]:
        return 0.0, 0.0
    local = (points - points.mean(axis=0)) @ _plane_basis(normal).T
    if normal.shape[0] == 2:
        length = float(np.ptp(local[:, 0]))
        return length, 0.5 * length
    try:
        hull = ConvexHull(local)
    except QhullError:
        return 0.0, 0.0
    area, perimeter = float(hull.volume), float(hull.area)
    return area, (2.0 * area / perimeter if perimeter > 0 else 0.0)


def polytope_from_halfspaces(spec):
    """Build P(y) from a HalfspaceSpec.

    Raises UnboundedBody when the directions lie in a closed hemisphere and
    EmptyInterior when the intersection has no interior.
    """
    if not isinstance(spec, HalfspaceSpec):
        spec = HalfspaceSpec(*spec)
    dirs, offs = spec.directions, spec.offsets
    n = spec.n
    if not validate_spread(dirs):
        raise UnboundedBody("directions lie in a closed hemisphere; the body is unbounded")

    scale = float(np.max(offs))
    center, radius = chebyshev_center(dirs, offs)
    if radius <= 1e-9 * scale:
        raise EmptyInterior(f"polytope has empty interior (inradius {radius:.3g})")

    try:
        hs = HalfspaceIntersection(np.hstack([dirs, -offs[:, None]]), center)
    except QhullError as e:
        raise EmptyInterior(f"halfspace intersection failed: {e}") from e
    vertices = _unique_points(np.asarray(hs.intersections), 1e-8 * scale)

    violation = float(np.max(vertices @ dirs.T - offs[None, :]))
    if violation > 1e-7 * scale:
        logger.warning("Geometry", f"vertex constraint violation {violation:.3g} exceeds tolerance")

    projections = vertices @ dirs.T
    supports = projections.max(axis=0)
    facets = []
    for i in range(spec.m):
        on_plane = np.abs(projections[:, i] - offs[i]) <= 1e-8 * scale
        area, inr = _facet_measure(vertices[on_plane], dirs[i])
        if area <= 1e-12 * scale ** (n - 1):
            area, inr = 0.0, 0.0
        facets.append(FacetRecord(index=i, normal=dirs[i], offset=float(offs[i]),
                                  support=float(min(supports[i], offs[i])), area=area, inradius=inr))

    try:
        volume = float(ConvexHull(vertices).volume)
    except QhullError as e:
        raise EmptyInterior(f"degenerate vertex set: {e}") from e
    if volume <= 0:
        raise EmptyInterior("polytope has zero volume")

    logger.debug_at_level(DEBUG_L3, "Geometry",
                          f"polytope: n={n}, m={spec.m}, vertices={len(vertices)}, "
                          f"active={sum(f.active for f in facets)}, volume={volume:.6g}")
    return Polytope(spec=spec, vertices=_frozen(vertices), facets=tuple(facets),
                    volume=volume, interior_point=_frozen(center), inradius=radius)


# ─── Support functions and transforms ───

def support_function(P, u):
    """h_P(u) = max over vertices of u . v; u may be one direction or a stack."""
    u = np.asarray(u, dtype=float)
    values = (P.vertices @ np.atleast_2d(u).T).max(axis=0)
    return float(values[0]) if u.ndim == 1 else values


def _rebuild(P, directions, offsets, vertices, area_factor=1.0, length_factor=1.0,
             interior_point=None):
    spec = HalfspaceSpec(directions, offsets)
    facets = tuple(
        FacetRecord(index=f.index, normal=spec.directions[f.index], offset=float(spec.offsets[f.index]),
                    support=float(spec.offsets[f.index]) if f.active else f.support * length_factor,
                    area=f.area * area_factor, inradius=f.inradius * length_factor)
        for f in P.facets)
    return Polytope(spec=spec, vertices=_frozen(vertices), facets=facets,
                    volume=P.volume * length_factor ** P.n,
                    interior_point=_frozen(P.interior_point * length_factor if interior_point is None
                                           else interior_point),
                    inradius=P.inradius * length_factor,
                    approximation_error=P.approximation_error * length_factor)


def scale(K, s):
    if s <= 0:
        raise InvalidSpec(f"scale factor must be positive, got {s}")
    return _rebuild(K, K.directions, K.offsets * s, K.vertices * s,
                    area_factor=s ** (K.n - 1), length_factor=s)


def translate(K, x):
    """K + x. The origin must stay inside, i.e. every offset stays >= 0."""
    x = np.asarray(x, dtype=float)
    offsets = K.offsets + K.directions @ x
    if np.any(offsets < -1e-12 * float(np.max(np.abs(K.offsets)))):
        raise DegenerateBody("translation moves the origin outside the body")
    offsets = np.maximum(offsets, 0.0)
    moved = _rebuild(K, K.directions, offsets, K.vertices + x, interior_point=K.interior_point + x)
    # supports of slack facets shift too
    facets = tuple(replace(f, support=float(f.support + f.normal @ x)) if not f.active else f
                   for f in moved.facets)
    return replace(moved, facets=facets)


def reflect(K):
    """Central reflection -K."""
    return _rebuild(K, -K.directions, K.offsets, -K.vertices, interior_point=-K.interior_point)


def rotate(K, Q):
    Q = np.asarray(Q, dtype=float)
    if not np.allclose(Q @ Q.T, np.eye(K.n), atol=1e-10):
        raise InvalidSpec("rotation matrix must be orthogonal")
    return _rebuild(K, K.directions @ Q.T, K.offsets, K.vertices @ Q.T,
                    interior_point=K.interior_point @ Q.T)


def diameter(K):
    return float(np.max(pdist(K.vertices)))


def vertex_centroid(K):
    return K.vertices.mean(axis=0)


def sphere_sample(n, count=None):
    """Deterministic quasi-uniform directions: Fibonacci lattice (n=3), even angles (n=2)."""
    _check_dimension(n)
    count = count or HAUSDORFF_SAMPLES[n]
    k = np.arange(count)
    if n == 2:
        theta = 2.0 * np.pi * k / count
        return np.column_stack([np.cos(theta), np.sin(theta)])
    z = 1.0 - (2.0 * k + 1.0) / count
    r = np.sqrt(1.0 - z ** 2)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _vertex_directions(P):
    norms = np.linalg.norm(P.vertices, axis=1)
    keep = norms > 1e-12
    return P.vertices[keep] / norms[keep, None]


def hausdorff_distance(K, L, samples=None):
    """Sampled max |h_K - h_L| over a sphere sample, both normal sets and vertex directions."""
    if K.n != L.n:
        raise InvalidSpec("bodies must share a dimension")
    dirs = np.vstack([sphere_sample(K.n, samples), K.directions, L.directions,
                      _vertex_directions(K), _vertex_directions(L)])
    return float(np.max(np.abs(support_function(K, dirs) - support_function(L, dirs))))


# ─── Sampled support functions and Wulff shapes ───

@dataclass(frozen=True)
class SupportSamples:
    """A positive function sampled on sphere directions."""

    directions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if dirs.shape[0] != vals.shape[0]:
            raise InvalidSpec("sample directions and values differ in length")
        if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            raise InvalidSpec("support samples must be positive and finite")
        object.__setattr__(self, "directions", _frozen(dirs / np.linalg.norm(dirs, axis=1)[:, None]))
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def from_polytope(cls, P, directions=None):
        dirs = P.directions if directions is None else np.asarray(directions, dtype=float)
        return cls(dirs, support_function(P, dirs))

    @property
    def n(self):
        return self.directions.shape[1]

    def scaled(self, c):
        return SupportSamples(self.directions, self.values * c)

    def lp_sum(self, other, p, t=1.0):
        """(f^p + t g^p)^(1/p) on a shared direction set."""
        if self.directions.shape != other.directions.shape or not np.allclose(self.directions, other.directions):
            raise InvalidSpec("L_p sums of samples need a shared direction set")
        return SupportSamples(self.directions, (self.values ** p + t * other.values ** p) ** (1.0 / p))

    def wulff(self):
        return wulff_shape(self)

    def at(self, directions):
        """Values at given directions; unsampled directions fall back to h of the Wulff shape."""
        dirs = np.atleast_2d(np.asarray(directions, dtype=float))
        dist, idx = cKDTree(self.directions).query(dirs)
        out = np.where(dist <= 1e-9, self.values[idx], np.nan)
        missing = np.isnan(out)
        if np.any(missing):
            out[missing] = support_function(self.wulff(), dirs[missing])
        return out


def wulff_shape(samples):
    """[f] = intersection of {x . xi <= f(xi)} over the samples.

    Accepts SupportSamples or an iterable of (direction, value) pairs.
    """
    if not isinstance(samples, SupportSamples):
        pairs = list(samples)
        samples = SupportSamples([d for d, _ in pairs], [v for _, v in pairs])
    return polytope_from_halfspaces(HalfspaceSpec(samples.directions, samples.values))


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
                      [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
                      [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], dtype=float)
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    return verts / np.linalg.norm(verts, axis=1)[:, None], faces


def icosphere(subdivisions=2):
    """Vertices on the unit sphere and triangular faces of a subdivided icosahedron."""
    verts, faces = _icosahedron()
    verts = list(verts)
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                mid = verts[a] + verts[b]
                verts.append(mid / np.linalg.norm(mid))
                cache[key] = len(verts) - 1
            return cache[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined
    return np.array(verts), faces


def _face_planes(verts, faces):
    tri = verts[np.array(faces)]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    flip = np.einsum("ij,ij->i", normals, tri[:, 0]) < 0
    normals[flip] *= -1.0
    return normals, np.einsum("ij,ij->i", normals, tri[:, 0])


def refinement_directions(n, count=DEFAULT_REFINEMENT):
    """Fixed direction grid with at least ``count`` directions."""
    _check_dimension(n)
    if n == 2:
        return sphere_sample(2, count)
    subdivisions = 0
    while 20 * 4 ** subdivisions < count:
        subdivisions += 1
    normals, _ = _face_planes(*icosphere(subdivisions))
    return normals


def merge_directions(*sets):
    """Stack direction sets and drop near-duplicates."""
    dirs = np.vstack(sets)
    return _unique_points(dirs, DUPLICATE_TOL)


def lp_combine(K, L, p, t=1.0, refinement=DEFAULT_REFINEMENT, check_samples=None):
    """Sampled Wulff approximation of K +_p t.L.

    ``L=None`` stands for the one-point body {o}. The result's
    ``approximation_error`` is the largest shortfall h_[f] < f seen on a dense
    check sample (the Wulff shape of samples is an inner approximation).
    """
    if p < 1:
        raise InvalidSpec(f"L_p combination needs p >= 1, got {p}")
    if t <= 0:
        raise InvalidSpec(f"combination weight must be positive, got {t}")
    for body in (K, L):
        if body is not None and not body.contains_origin_interior():
            raise DegenerateBody("L_p combination needs the origin in the interior of both bodies")

    def combined(dirs):
        hk = support_function(K, dirs)
        if L is None:
            return hk
        return (hk ** p + t * support_function(L, dirs) ** p) ** (1.0 / p)

    parts = [K.directions, refinement_directions(K.n, refinement)]
    if L is not None:
        parts.insert(1, L.directions)
    dirs = merge_directions(*parts)
    P = wulff_shape(SupportSamples(dirs, combined(dirs)))

    check = sphere_sample(K.n, check_samples)
    error = float(max(0.0, np.max(combined(check) - support_function(P, check))))
    logger.debug_at_level(DEBUG_L2, "Geometry", f"lp_combine: p={p}, t={t}, m={len(dirs)}, error={error:.3g}")
    return replace(P, approximation_error=error)


# ─── Standard bodies ───

def box_polytope(half_widths):
    half_widths = np.asarray(half_widths, dtype=float)
    n = half_widths.shape[0]
    eye = np.eye(n)
    dirs = np.vstack([eye, -eye])
    return polytope_from_halfspaces(HalfspaceSpec(dirs, np.concatenate([half_widths, half_widths])))


def icosphere_ball(radius=1.0, subdivisions=2):
    """Polytope inscribed in the sphere of given radius, 20*4^s facets (320 by default)."""
    normals, distances = _face_planes(*icosphere(subdivisions))
    return polytope_from_halfspaces(HalfspaceSpec(normals, distances * radius))


def truncated_icosahedron_ball(radius=1.0):
    """32 facets: icosahedron vertex directions plus face normals, all at distance ``radius``."""
    verts, faces = _icosahedron()
    normals, _ = _face_planes(verts, faces)
    dirs = np.vstack([verts, normals])
    return polytope_from_halfspaces(HalfspaceSpec(dirs, np.full(len(dirs), radius)))


def polygon_ball(edges=64, radius=1.0):
    """Regular polygon inscribed in the circle of given radius."""
    dirs = sphere_sample(2, edges)
    return polytope_from_halfspaces(HalfspaceSpec(dirs, np.full(edges, radius * np.cos(np.pi / edges))))


def as_samples(f: Union[SupportSamples, Polytope, Sequence], directions: Optional[np.ndarray] = None):
    """Coerce a support-function argument (samples, polytope or pairs) to SupportSamples."""
    if isinstance(f, SupportSamples):
        return f
    if isinstance(f, Polytope):
        return SupportSamples.from_polytope(f, directions)
    pairs = list(f)
    return SupportSamples([d for d, _ in pairs], [v for _, v in pairs])


def rigid_signed_permutation(n, perm: Iterable[int], signs: Iterable[float]):
    """Orthogonal matrix mapping e_i to signs[i] * e_perm[i]."""
    Q = np.zeros((n, n))
    for i, (j, s) in enumerate(zip(perm, signs)):
        Q[j, i] = s
    return Q
