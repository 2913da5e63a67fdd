# Core/lattice.py
"""Truncated cubic lattice on [-R, R]^n and the rasterization of a polytope onto it.

Lattice points sit at integer multiples of h. A point is INTERIOR when it
satisfies every active halfspace of the body up to a relative tolerance,
OUTER when it lies on a face of the box, FREE otherwise. Every lattice edge
joining an interior point to a non-interior one is "cut": it records where
the segment crosses the body boundary, measured from the outside endpoint as a
fraction of h. The discrete energy uses those fractions as edge lengths, which
makes it depend continuously on the offsets.
"""

from dataclasses import dataclass, field, replace
from typing import List

import numpy as np
import psutil

from Core.errors import DomainTooSmall, InvalidConfig, UnresolvedBody, UnsupportedDimension
from Utils.log_utils import get_logger, DEBUG_L2

logger = get_logger()

FREE = 0
INTERIOR = 1
OUTER = 2

MAX_CELLS_PER_RADIUS = 400
BOUNDARY_MODES = ("zero", "asymptotic")
MINIMIZERS = ("newton", "gauss_seidel")
MEASURE_METHODS = ("derivative", "flux", "variational")
# points within this fraction of the body scale of a facet plane count as inside
INSIDE_TOL = 1e-12
# bytes per lattice point across the working arrays of one solve
BYTES_PER_POINT = 8 * 24


@dataclass(frozen=True)
class GridConfig:
    n: int = 3
    h: float = 0.1
    box_radius: float = 8.0
    max_iters: int = 60
    energy_tol: float = 1e-7
    boundary_mode: str = "asymptotic"
    minimizer: str = "newton"
    max_sweeps: int = 5000
    richardson: bool = True
    min_box_ratio: float = 4.0
    cut_floor: float = 0.02
    asymptotic_passes: int = 2
    cg_rtol: float = 1e-6
    cg_maxiter: int = 400
    threads: int = 1
    measure_method: str = "derivative"

    def __post_init__(self):
        if self.n not in (2, 3):
            raise UnsupportedDimension(f"grid dimension {self.n} not supported (expected 2 or 3)")
        if not self.h > 0:
            raise InvalidConfig(f"grid spacing must be positive, got {self.h}")
        if not self.box_radius > 0:
            raise InvalidConfig(f"box radius must be positive, got {self.box_radius}")
        if self.box_radius / self.h > MAX_CELLS_PER_RADIUS:
            raise InvalidConfig(f"R/h = {self.box_radius / self.h:.0f} exceeds {MAX_CELLS_PER_RADIUS}")
        if self.half_cells < 4:
            raise InvalidConfig("box must span at least 4 cells per half-axis")
        if self.max_iters < 1 or self.max_sweeps < 1:
            raise InvalidConfig("iteration limits must be >= 1")
        if not self.energy_tol > 0:
            raise InvalidConfig("energy_tol must be positive")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise InvalidConfig(f"boundary_mode must be one of {BOUNDARY_MODES}")
        if self.minimizer not in MINIMIZERS:
            raise InvalidConfig(f"minimizer must be one of {MINIMIZERS}")
        if self.measure_method not in MEASURE_METHODS:
            raise InvalidConfig(f"measure_method must be one of {MEASURE_METHODS}")
        if not 0 < self.cut_floor < 0.5:
            raise InvalidConfig("cut_floor must lie in (0, 0.5)")
        if self.min_box_ratio < 1:
            raise InvalidConfig("min_box_ratio must be >= 1")
        if self.asymptotic_passes < 1 or self.threads < 1 or self.cg_maxiter < 1:
            raise InvalidConfig("asymptotic_passes, threads and cg_maxiter must be >= 1")
        if not 0 < self.cg_rtol < 1:
            raise InvalidConfig("cg_rtol must lie in (0, 1)")

    @property
    def half_cells(self):
        return int(round(self.box_radius / self.h))

    @property
    def points_per_axis(self):
        return 2 * self.half_cells + 1

    def coarsened(self):
        return replace(self, h=2.0 * self.h, richardson=False)

    def memory_estimate(self):
        return BYTES_PER_POINT * self.points_per_axis ** self.n


@dataclass
class CutEdges:
    """Cut edges along one axis, as flat indices into that axis' edge array."""

    index: np.ndarray
    upper_inside: np.ndarray
    facet: np.ndarray
    s_diff: np.ndarray
    clipped: np.ndarray


@dataclass
class Raster:
    config: GridConfig
    coords: np.ndarray
    mask: np.ndarray
    edge_len: List[np.ndarray]
    edge_inv: List[np.ndarray]
    cuts: List[CutEdges] = field(default_factory=list)

    @property
    def n(self):
        return self.config.n

    @property
    def h(self):
        return self.config.h

    @property
    def shape(self):
        return self.mask.shape

    @property
    def interior(self):
        return self.mask == INTERIOR

    @property
    def free(self):
        return self.mask == FREE

    @property
    def outer(self):
        return self.mask == OUTER

    def points(self, mask=None):
        """Coordinates (k, n) of the lattice points selected by a boolean mask."""
        idx = np.nonzero(self.mask if mask is None else mask)
        return np.column_stack([self.coords[i] for i in idx])

    def radius_grid(self, center):
        grids = np.meshgrid(*[self.coords - c for c in center], indexing="ij", sparse=True)
        return np.sqrt(sum(g ** 2 for g in grids))

    def facet_edge_counts(self, m):
        counts = np.zeros(m, dtype=int)
        for cut in self.cuts:
            counts += np.bincount(cut.facet[~cut.clipped], minlength=m)
        return counts


def _check_memory(cfg):
    need = cfg.memory_estimate()
    available = psutil.virtual_memory().available
    if need > 0.5 * available:
        logger.warning("Lattice", f"grid needs about {need / 2**30:.1f} GiB, "
                                  f"{available / 2**30:.1f} GiB available")


def _axis_slice(n, axis, sl):
    return tuple(sl if d == axis else slice(None) for d in range(n))


def rasterize(P, cfg):
    """Classify lattice points against P and compute cut-edge lengths."""
    if P.n != cfg.n:
        raise InvalidConfig(f"body dimension {P.n} does not match grid dimension {cfg.n}")
    if P.circumradius > cfg.box_radius / cfg.min_box_ratio:
        raise DomainTooSmall(f"circumradius {P.circumradius:.4g} exceeds R/{cfg.min_box_ratio:g} = "
                             f"{cfg.box_radius / cfg.min_box_ratio:.4g}")
    _check_memory(cfg)

    n, h, k = cfg.n, cfg.h, cfg.half_cells
    N = 2 * k + 1
    coords = np.arange(-k, k + 1) * h
    # inactive directions are redundant halfspaces; they must not split ties at edges and vertices
    active = np.flatnonzero(P.active)
    dirs, offs = P.directions[active], P.offsets[active]
    tol = INSIDE_TOL * max(h, float(np.max(np.abs(offs))))

    # sub-box around the body, one extra point on each side
    lo = np.floor(P.vertices.min(axis=0) / h).astype(int) + k - 1
    hi = np.ceil(P.vertices.max(axis=0) / h).astype(int) + k + 1
    if np.any(lo < 2) or np.any(hi > N - 3):
        raise DomainTooSmall("body reaches the outer band of the box")
    sub = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    sub_shape = tuple(b - a + 1 for a, b in zip(lo, hi))

    grids = np.meshgrid(*[coords[s] for s in sub], indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=1)
    slack = (X @ dirs.T - offs[None, :]).reshape(sub_shape + (len(offs),))
    inside_sub = slack.max(axis=-1) <= tol
    if not inside_sub.any():
        raise UnresolvedBody(f"no lattice point lies inside the body at h={h:g}")

    mask = np.zeros((N,) * n, dtype=np.int8)
    outer = np.zeros_like(mask, dtype=bool)
    for d in range(n):
        outer[_axis_slice(n, d, 0)] = True
        outer[_axis_slice(n, d, -1)] = True
    mask[outer] = OUTER
    mask_sub = mask[sub]
    mask_sub[inside_sub] = INTERIOR

    edge_len, edge_inv, cuts = [], [], []
    for d in range(n):
        shape = tuple(N - 1 if a == d else N for a in range(n))
        length = np.ones(shape)
        lower = inside_sub[_axis_slice(n, d, slice(0, -1))]
        upper = inside_sub[_axis_slice(n, d, slice(1, None))]
        cut_local = np.nonzero(lower != upper)
        upper_inside = upper[cut_local]

        s_lower = slack[_axis_slice(n, d, slice(0, -1))][cut_local]
        s_upper = slack[_axis_slice(n, d, slice(1, None))][cut_local]
        s_in = np.minimum(np.where(upper_inside[:, None], s_upper, s_lower), 0.0)
        s_out = np.where(upper_inside[:, None], s_lower, s_upper)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(s_out > 0, s_out / (s_out - s_in), -np.inf)
        local_facet = np.argmax(ratio, axis=1)
        rows = np.arange(len(local_facet))
        t_star = ratio[rows, local_facet]
        s_diff = s_out[rows, local_facet] - s_in[rows, local_facet]
        facet = active[local_facet]
        clipped = t_star < cfg.cut_floor
        ell = np.clip(t_star, cfg.cut_floor, 1.0)

        # local edge index -> global edge index
        global_idx = tuple(c + lo[a] for a, c in enumerate(cut_local))
        length[global_idx] = ell
        flat = np.ravel_multi_index(global_idx, shape)
        edge_len.append(length)
        edge_inv.append(1.0 / (length * h))
        cuts.append(CutEdges(index=flat, upper_inside=upper_inside, facet=facet,
                             s_diff=s_diff, clipped=clipped))

    raster = Raster(config=cfg, coords=coords, mask=mask, edge_len=edge_len, edge_inv=edge_inv, cuts=cuts)
    logger.debug_at_level(DEBUG_L2, "Lattice",
                          f"rasterized: N={N}^{n}, interior={int(inside_sub.sum())}, "
                          f"cut edges={sum(len(c.index) for c in cuts)}")
    return raster
