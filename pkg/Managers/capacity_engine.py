# Managers/capacity_engine.py
"""Variational p-capacity of polytopes on a truncated lattice.

The equilibrium potential minimizes the discrete p-Dirichlet energy with u = 1
on the body. In ``asymptotic`` mode the box faces carry the radial far-field
profile of a ball with the same capacity, and the energy outside the box is
added back in closed form (the "tail"). In ``zero`` mode u = 0 on the faces
and nothing is added, which overestimates the capacity.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq
from scipy.special import gamma

from Core.dirichlet import DirichletEnergy, minimize_energy
from Core.errors import (
    DomainTooSmall,
    InvalidConfig,
    InvalidExponent,
    InvalidSpec,
    NoConvergence,
    UnresolvedBody,
    UnresolvedFacet,
    ZeroSupportValue,
)
from Core.event_manager import EventManager, CAPACITY_SOLVED
from Core.geometry import SupportSamples, Polytope, sphere_sample, support_function, vertex_centroid
from Core.lattice import GridConfig, rasterize
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2, DEBUG_L3

logger = get_logger()

PEXP_MARGIN = 0.05
TAIL_DIRECTIONS = 2000
MIN_FACET_CELLS = 3.0


# ─── Exponents and the ball ───

def unit_ball_volume(n):
    return np.pi ** (n / 2.0) / gamma(n / 2.0 + 1.0)


def ball_capacity_exact(n, pexp, r=1.0):
    """n w_n ((n-p)/(p-1))^(p-1) r^(n-p)."""
    if not 1.0 < pexp < n:
        raise InvalidExponent(f"exponent {pexp} outside (1, {n})")
    if r <= 0:
        raise InvalidSpec(f"radius must be positive, got {r}")
    return float(n * unit_ball_volume(n) * ((n - pexp) / (pexp - 1.0)) ** (pexp - 1.0) * r ** (n - pexp))


def check_exponent(n, pexp):
    if not 1.0 + PEXP_MARGIN <= pexp <= n - PEXP_MARGIN:
        raise InvalidExponent(f"exponent {pexp} outside [{1 + PEXP_MARGIN}, {n - PEXP_MARGIN}]")


# ─── Far field ───

@dataclass(frozen=True)
class FarField:
    """Radial profile min(1, (r_eff/|x-c|)^a), a = (n-p)/(p-1), of a ball of radius r_eff."""

    center: np.ndarray
    r_eff: float
    pexp: float
    n: int

    @property
    def decay(self):
        return (self.n - self.pexp) / (self.pexp - 1.0)

    @classmethod
    def from_body(cls, P, pexp):
        r = (P.volume / unit_ball_volume(P.n)) ** (1.0 / P.n)
        return cls(center=np.asarray(vertex_centroid(P)), r_eff=float(r), pexp=float(pexp), n=P.n)

    def radius_for(self, capacity):
        return (capacity / ball_capacity_exact(self.n, self.pexp)) ** (1.0 / (self.n - self.pexp))

    def with_capacity(self, capacity):
        return replace(self, r_eff=float(self.radius_for(capacity)))

    def profile(self, r):
        r = np.maximum(np.asarray(r, dtype=float), 1e-300)
        return np.minimum(1.0, (self.r_eff / r) ** self.decay)

    def box_distances(self, box_radius):
        """Distance from the centre to the box faces along a sphere sample."""
        theta = sphere_sample(self.n, TAIL_DIRECTIONS if self.n == 3 else 720)
        with np.errstate(divide="ignore"):
            reach = (box_radius - self.center[None, :] * np.sign(theta)) / np.abs(theta)
        return np.min(np.where(np.abs(theta) > 1e-14, reach, np.inf), axis=1)

    def tail(self, capacity, box_radius):
        """Energy of the ball-equivalent potential outside the box."""
        r_box = self.box_distances(box_radius)
        return float(capacity * np.mean((self.radius_for(capacity) / r_box) ** self.decay))

    def closure(self, box_energy, box_radius):
        """Solve C = E_box + T(C); returns (C, T(C))."""
        def residual(c):
            return c - box_energy - self.tail(c, box_radius)

        upper = 2.0 * box_energy
        for _ in range(6):
            if residual(upper) > 0:
                c = brentq(residual, box_energy, upper, xtol=1e-12 * box_energy, rtol=1e-12)
                return c, c - box_energy
            upper *= 2.0
        logger.warning("CapacityEngine", "far-field closure has no root; using a single tail evaluation")
        t = self.tail(box_energy, box_radius)
        return box_energy + t, t


# ─── Fields and results ───

@dataclass
class GridField:
    values: np.ndarray
    mask: np.ndarray
    spacing: float
    box_radius: float
    pexp: float
    energy: float
    tail: float
    energy_history: List[float]
    converged: bool
    far_field: Optional[FarField]
    raster: object

    @property
    def capacity(self):
        return self.energy + self.tail

    def tail_derivative(self):
        """dT/dC; the tail scales like C^(p/(p-1))."""
        if self.tail <= 0:
            return 0.0
        return self.pexp / (self.pexp - 1.0) * self.tail / self.capacity


@dataclass(frozen=True)
class CapacityResult:
    value: float
    energy_history: Tuple[float, ...]
    error_estimate: float
    pexp: float
    facet_masses: Optional[Tuple[float, ...]] = None
    extrapolated: float = float("nan")
    spacing: float = float("nan")
    boundary_mode: str = "asymptotic"
    converged: bool = True

    def to_dict(self):
        return {
            "value": self.value,
            "error_estimate": self.error_estimate,
            "extrapolated": self.extrapolated,
            "pexp": self.pexp,
            "spacing": self.spacing,
            "boundary_mode": self.boundary_mode,
            "converged": self.converged,
            "facet_masses": None if self.facet_masses is None else list(self.facet_masses),
            "energy_history": list(self.energy_history),
        }


def _prolong(field, raster):
    """Interpolate a field from another lattice onto ``raster``'s points."""
    src = field.raster.coords
    interp = RegularGridInterpolator((src,) * raster.n, field.values, bounds_error=False, fill_value=None)
    grids = np.meshgrid(*([np.clip(raster.coords, src[0], src[-1])] * raster.n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return interp(pts).reshape(raster.shape)


def _initial_values(raster, far_field, initial):
    if initial is not None:
        values = initial.values if isinstance(initial, GridField) else np.asarray(initial, dtype=float)
        if values.shape == raster.shape:
            u = np.array(values, dtype=float)
        elif isinstance(initial, GridField):
            u = _prolong(initial, raster)
        else:
            raise InvalidConfig(f"initial field shape {values.shape} does not match lattice {raster.shape}")
    else:
        u = far_field.profile(raster.radius_grid(far_field.center))
    u = np.clip(u, 0.0, 1.0)
    u[raster.interior] = 1.0
    return u


def equilibrium_potential(K, cfg, pexp, initial=None, far_field=None):
    """Minimize the discrete energy for body K; returns the GridField.

    ``initial`` warm-starts the minimizer (a GridField on any lattice, or an
    array of matching shape). A given ``far_field`` is used as is; otherwise
    asymptotic mode recalibrates it from the computed capacity between passes.
    """
    check_exponent(cfg.n, pexp)
    raster = rasterize(K, cfg)
    energy = DirichletEnergy(raster, pexp)
    asymptotic = cfg.boundary_mode == "asymptotic"
    ff = far_field if far_field is not None else FarField.from_body(K, pexp)
    passes = cfg.asymptotic_passes if asymptotic and far_field is None else 1

    u = _initial_values(raster, ff, initial)
    outer = raster.outer
    history = []
    result = None
    box_energy = capacity = tail = 0.0
    for sweep in range(passes):
        if asymptotic:
            u[outer] = ff.profile(raster.radius_grid(ff.center))[outer]
        else:
            u[outer] = 0.0
        result = minimize_energy(energy, u, cfg)
        history += result.history
        u = result.values
        box_energy = result.energy
        capacity, tail = ff.closure(box_energy, cfg.box_radius) if asymptotic else (box_energy, 0.0)
        logger.debug_at_level(DEBUG_L2, "CapacityEngine",
                              f"pass {sweep + 1}/{passes}: E_box={box_energy:.8g}, tail={tail:.4g}, "
                              f"r_eff={ff.r_eff:.4g}, iterations={result.iterations}")
        if sweep < passes - 1:
            ff = ff.with_capacity(capacity)

    field = GridField(values=u, mask=raster.mask, spacing=cfg.h, box_radius=cfg.box_radius, pexp=pexp,
                      energy=box_energy, tail=tail, energy_history=history, converged=result.converged,
                      far_field=ff if asymptotic else None, raster=raster)
    if not result.converged:
        raise NoConvergence(f"energy minimization did not converge in {result.iterations} iterations",
                            best=field, diagnostics={"energy": box_energy, "iterations": result.iterations})
    return field


def _solve(K, cfg, pexp, initial=None):
    """Capacity at h (warm-started from a 2h solve when possible) plus its field."""
    coarse = None
    if cfg.richardson:
        try:
            coarse = equilibrium_potential(K, cfg.coarsened(), pexp)
        except NoConvergence as e:
            logger.warning("CapacityEngine", f"coarse solve did not converge: {e}")
            coarse = e.best
        except (InvalidConfig, UnresolvedBody, DomainTooSmall) as e:
            logger.warning("CapacityEngine", f"skipping coarse solve: {e}")
    field = equilibrium_potential(K, cfg, pexp, initial=initial if initial is not None else coarse)
    value = field.capacity
    if coarse is not None:
        error, extrapolated = abs(value - coarse.capacity), 2.0 * value - coarse.capacity
    else:
        error, extrapolated = float("nan"), float("nan")
    result = CapacityResult(value=value, energy_history=tuple(field.energy_history), error_estimate=error,
                            pexp=pexp, extrapolated=extrapolated, spacing=cfg.h,
                            boundary_mode=cfg.boundary_mode, converged=field.converged)
    return result, field


def p_capacity(K, cfg, pexp, initial=None):
    """Capacity of K with a two-resolution error estimate."""
    start = time.time()
    result, _ = _solve(K, cfg, pexp, initial)
    logger.debug_at_level(DEBUG_L1, "CapacityEngine",
                          f"capacity={result.value:.8g} (+/- {result.error_estimate:.3g}), pexp={pexp}, "
                          f"h={cfg.h}, {time.time() - start:.1f}s")
    EventManager.get_instance().publish(CAPACITY_SOLVED, {"value": result.value, "pexp": pexp,
                                                          "error_estimate": result.error_estimate})
    return result


# ─── Capacitary measure ───

def _derivative_masses(K, field, pexp):
    """Exact derivative of the discrete capacity with respect to each offset, over (p-1)."""
    raster = field.raster
    sens = DirichletEnergy(raster, pexp).offset_sensitivity(field.values)
    m = len(K.facets)
    derivative = np.zeros(m)
    for d, cut in enumerate(raster.cuts):
        keep = ~cut.clipped
        contrib = sens[d].ravel()[cut.index[keep]] * (-1.0 / cut.s_diff[keep])
        derivative += np.bincount(cut.facet[keep], weights=contrib, minlength=m)
    derivative /= 1.0 - field.tail_derivative()
    _warn_unresolved(K, raster)
    masses = np.maximum(derivative / (pexp - 1.0), 0.0)
    masses[~K.active] = 0.0
    return masses


def _flux_masses(K, field, pexp):
    """Boundary integral of |grad u|^p over each facet.

    A cut edge along axis d sees the directional derivative g = (1 - u_out)/(len h),
    which is |grad u| |xi_d| at a facet with normal xi. Blending the per-axis
    estimates with weights |xi_d|^(p+1) gives g^p h^(n-1) / sum_k |xi_k|^(p+1)
    per edge; for an axis-aligned facet that is g^p times the cell face area.
    """
    raster = field.raster
    m = len(K.facets)
    normal_weight = np.sum(np.abs(K.directions) ** (pexp + 1.0), axis=1)
    face = raster.h ** (raster.n - 1)
    u = field.values.ravel()
    masses = np.zeros(m)
    for d, cut in enumerate(raster.cuts):
        edge_shape = raster.edge_len[d].shape
        lower = np.unravel_index(cut.index, edge_shape)
        upper = tuple(c + 1 if a == d else c for a, c in enumerate(lower))
        outside = np.where(cut.upper_inside, np.ravel_multi_index(lower, raster.shape),
                           np.ravel_multi_index(upper, raster.shape))
        length = raster.edge_len[d].ravel()[cut.index]
        g = np.maximum(1.0 - u[outside], 0.0) / (length * raster.h)
        contrib = g ** pexp * face / normal_weight[cut.facet]
        masses += np.bincount(cut.facet, weights=contrib, minlength=m)
    _warn_unresolved(K, raster)
    masses[~K.active] = 0.0
    return masses


def _warn_unresolved(K, raster):
    unresolved = np.flatnonzero(K.active & (raster.facet_edge_counts(len(K.facets)) == 0))
    if unresolved.size:
        logger.warning("CapacityEngine", f"facets {unresolved.tolist()} cross no lattice edge; their mass is 0")


def _variational_masses(K, field, cfg, pexp):
    eps = max(1e-3, 2.0 * cfg.h)
    active = np.flatnonzero(K.active)
    thin = [int(i) for i in active if K.facets[i].inradius < MIN_FACET_CELLS * cfg.h]
    if thin:
        raise UnresolvedFacet(f"facets {thin} have inradius below {MIN_FACET_CELLS:g}h", facets=thin)
    base = field.capacity

    def perturbed(i):
        offsets = np.array(K.offsets)
        offsets[i] += eps
        # the moved body recalibrates its own far field; the base field only seeds the iterate
        moved = equilibrium_potential(K.with_offsets(offsets), cfg, pexp, initial=field)
        logger.debug_at_level(DEBUG_L3, "CapacityEngine", f"facet {i}: C={moved.capacity:.8g}")
        return (moved.capacity - base) / (eps * (pexp - 1.0))

    masses = np.zeros(len(K.facets))
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for i, value in zip(active, pool.map(perturbed, active)):
            masses[i] = max(value, 0.0)
    return masses


def calibrate_masses(K, masses, capacity, pexp):
    """Rescale masses so the Poincare identity C = (p-1)/(n-p) sum h_i mu_i holds exactly."""
    total = float(np.sum(K.supports * masses))
    if total <= 0:
        return masses
    return masses * (K.n - pexp) * capacity / ((pexp - 1.0) * total)


def measure_with_capacity(K, cfg, pexp, method=None, calibrate=False, initial=None):
    """Capacity result with facet masses attached, and the field it came from."""
    method = method or cfg.measure_method
    result, field = _solve(K, cfg, pexp, initial)
    if method == "derivative":
        masses = _derivative_masses(K, field, pexp)
    elif method == "flux":
        masses = _flux_masses(K, field, pexp)
    elif method == "variational":
        masses = _variational_masses(K, field, cfg, pexp)
    else:
        raise InvalidConfig(f"unknown measure method '{method}'")
    if calibrate:
        masses = calibrate_masses(K, masses, result.value, pexp)
    logger.debug_at_level(DEBUG_L2, "CapacityEngine",
                          f"{method} masses: total={masses.sum():.6g}, active={int(np.count_nonzero(masses))}")
    EventManager.get_instance().publish(CAPACITY_SOLVED, {"value": result.value, "pexp": pexp,
                                                          "error_estimate": result.error_estimate})
    return replace(result, facet_masses=tuple(float(x) for x in masses)), field


def capacitary_measure(K, cfg, pexp, method=None, calibrate=False):
    """Per-facet capacitary masses mu_i aligned with K's directions (slack directions get 0)."""
    result, _ = measure_with_capacity(K, cfg, pexp, method=method, calibrate=calibrate)
    return np.array(result.facet_masses)


# ─── Mixed capacities ───

def values_on_normals(K, f):
    """Evaluate a support-type argument on K's directions."""
    if isinstance(f, Polytope):
        return support_function(f, K.directions)
    if isinstance(f, SupportSamples):
        return f.at(K.directions)
    values = np.asarray(f, dtype=float).reshape(-1)
    if values.shape[0] != len(K.facets):
        raise InvalidSpec(f"{values.shape[0]} values for {len(K.facets)} facet normals")
    return values


def mixed_capacity(K, L, cfg, pexp, calibrate=True, masses=None):
    """(p-1)/(n-p) sum_i h_L(xi_i) mu_i(K)."""
    if masses is None:
        masses = capacitary_measure(K, cfg, pexp, calibrate=calibrate)
    return float((pexp - 1.0) / (K.n - pexp) * np.sum(values_on_normals(K, L) * masses))


def lp_mixed_capacity(K, f, p, cfg, pexp, calibrate=True, masses=None):
    """(p-1)/(n-p) sum_i f_i^p h_i^(1-p) mu_i over facets carrying mass."""
    if p < 1:
        raise InvalidSpec(f"L_p mixed capacity needs p >= 1, got {p}")
    if masses is None:
        masses = capacitary_measure(K, cfg, pexp, calibrate=calibrate)
    values = values_on_normals(K, f)
    carrying = np.asarray(masses) > 0
    if np.any(values[carrying] <= 0):
        raise InvalidSpec("f must be positive on every facet normal carrying mass")
    h = K.supports[carrying]
    if p > 1 and np.any(h <= 0):
        raise ZeroSupportValue("a facet with positive mass passes through the origin")
    terms = values[carrying] ** p * h ** (1.0 - p) * np.asarray(masses)[carrying]
    return float((pexp - 1.0) / (K.n - pexp) * np.sum(terms))


class CapacityEngine:
    """Binds a grid configuration and exponent, and warm-starts successive solves.

    Used by the solver, whose bodies change little between iterations.
    """

    def __init__(self, cfg: GridConfig, pexp: float, warm_start: bool = True):
        check_exponent(cfg.n, pexp)
        self.cfg = cfg
        self.pexp = pexp
        self.warm_start = warm_start
        self.last_field = None
        self.solves = 0

    def capacity(self, K):
        result, self.last_field = self._run(lambda cfg, init: _solve(K, cfg, self.pexp, init))
        return result

    def measure(self, K, method=None, calibrate=False):
        result, self.last_field = self._run(
            lambda cfg, init: measure_with_capacity(K, cfg, self.pexp, method, calibrate, init))
        return result

    def _run(self, solve):
        self.solves += 1
        initial = self.last_field if self.warm_start else None
        if initial is None:
            return solve(self.cfg, None)
        # warm-started solves skip the coarse pass, so they carry no error estimate
        return solve(replace(self.cfg, richardson=False), initial)
