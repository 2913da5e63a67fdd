# Managers/minkowski_solver.py
"""Discrete L_p Minkowski problem for p-capacity.

Given mu = sum c_i delta_{xi_i}, maximize C(P(y)) subject to
Phi(y) = (pexp-1)/(n-pexp) sum c_i y_i^p = 1. The derivative of the
capacity in y_i is (pexp-1) times the capacitary mass of facet i, so the
maximizer satisfies c_i y_i^(p-1) = mu_i / C, i.e. the normalized L_p
capacitary measure of P(y) equals mu.

The ascent is a projected, preconditioned gradient method: step along the
constraint tangent, rescale back onto Phi = 1, accept with an Armijo test on
the capacity.
"""

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

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
from Core.geometry import (
    HalfspaceSpec,
    chebyshev_center,
    polytope_from_halfspaces,
    scale,
    support_function,
    translate,
    validate_spread,
    vertex_centroid,
)
from Core.lattice import GridConfig
from Core.measures import measure_centroid, total_mass
from Managers.capacity_engine import CapacityEngine, calibrate_masses, check_exponent, p_capacity
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2, DEBUG_L3

logger = get_logger()

CRITICAL_TOL = 1e-9
CENTROID_TOL = 1e-6
ZERO_FUNCTIONAL_TOL = 1e-12
HOMOGENEITY_TOL = 0.05
INIT_MODES = ("uniform", "random")


@dataclass(frozen=True)
class SolverConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    max_outer_iters: int = 80
    kkt_tol: float = 0.02
    step0: float = 0.2
    floor_frac: float = 0.02
    seed: int = 0
    calibrate: bool = True
    armijo: float = 0.1
    max_backtracks: int = 8
    stagnation_window: int = 5
    stagnation_tol: float = 1e-7
    init: str = "uniform"

    def __post_init__(self):
        if not self.kkt_tol > 0:
            raise InvalidConfig("kkt_tol must be positive")
        if not 0 < self.floor_frac < 0.1:
            raise InvalidConfig("floor_frac must lie in (0, 0.1)")
        if not 0 < self.step0 < 1:
            raise InvalidConfig("step0 must lie in (0, 1)")
        if self.max_outer_iters < 1 or self.max_backtracks < 0 or self.stagnation_window < 1:
            raise InvalidConfig("iteration limits must be positive")
        if self.init not in INIT_MODES:
            raise InvalidConfig(f"init must be one of {INIT_MODES}")


@dataclass(frozen=True)
class SolverResult:
    offsets: np.ndarray
    polytope: object
    capacity: float
    masses: np.ndarray
    kkt_residual: float
    normalization: float
    multiplier: float
    p: float
    pexp: float
    trace: Tuple[dict, ...] = ()
    translation: Optional[np.ndarray] = None
    converged: bool = True
    iterations: int = 0
    unnormalized: Optional[object] = None

    def to_dict(self):
        P = self.polytope
        out = {
            "p": self.p,
            "pexp": self.pexp,
            "offsets": self.offsets.tolist(),
            "vertices": P.vertices.tolist(),
            "directions": P.directions.tolist(),
            "facet_masses": self.masses.tolist(),
            "capacity": self.capacity,
            "kkt_residual": self.kkt_residual,
            "normalization": self.normalization,
            "multiplier": self.multiplier,
            "converged": self.converged,
            "iterations": self.iterations,
            "translation": None if self.translation is None else self.translation.tolist(),
            "trace": list(self.trace),
        }
        if self.unnormalized is not None:
            out["unnormalized_offsets"] = self.unnormalized.offsets.tolist()
        return out


def kkt_residual(y, mu, p, masses, capacity):
    """max_i |c_i y_i^(p-1) - mu_i / C| / (c_i y_i^(p-1))."""
    weights = mu.weights if hasattr(mu, "weights") else np.asarray(mu, dtype=float)
    target = weights * np.asarray(y, dtype=float) ** (p - 1.0)
    return float(np.max(np.abs(target - np.asarray(masses, dtype=float) / capacity) / target))


def constraint_value(y, weights, p, n, pexp):
    return (pexp - 1.0) / (n - pexp) * float(np.sum(weights * np.asarray(y) ** p))


def functional_fp(K, mu, p, pexp):
    """F_p(K) = (pexp-1)/(n-pexp) sum c_i h_K(xi_i)^p."""
    h = support_function(K, mu.directions)
    return (pexp - 1.0) / (mu.n - pexp) * float(np.sum(mu.weights * np.maximum(h, 0.0) ** p))


def floor_lift(y, weights, p, floor_frac):
    """Raise offsets below floor_frac * max(y) to t and lower the rest so sum c_i y_i^p is kept.

    The rest drop by the common amount delta = sum_low c_i (t^p - y_i^p) / sum_rest c_i in
    y^p; with zero low offsets this is the transfer c t^p, c = sum_low c_i / sum_rest c_i.
    Returns (y, None) when nothing is below the floor.
    """
    y = np.asarray(y, dtype=float)
    c = np.asarray(weights, dtype=float)
    top = float(np.max(y))
    low = y < floor_frac * top
    if not low.any():
        return y, None
    ratio = c[low].sum() / c[~low].sum()
    t_max = (np.min(y[~low] ** p) / ratio) ** (1.0 / p)
    t = min(2.0 * floor_frac * top, 0.5 * t_max)
    delta = float(np.sum(c[low] * (t ** p - y[low] ** p))) / c[~low].sum()
    out = y.copy()
    out[low] = t
    out[~low] = (y[~low] ** p - delta) ** (1.0 / p)
    return out, t


class _Ascent:
    """State of one projected ascent run."""

    def __init__(self, mu, p, pexp, cfg, translation_mode=False):
        self.mu = mu
        self.p = p
        self.pexp = pexp
        self.cfg = cfg
        self.n = mu.n
        self.kappa = (pexp - 1.0) / (self.n - pexp)
        self.engine = CapacityEngine(cfg.grid, pexp)
        self.translation_mode = translation_mode
        self.shift = np.zeros(self.n)
        self.trace = []

    def phi(self, y):
        return constraint_value(y, self.mu.weights, self.p, self.n, self.pexp)

    def restore(self, y):
        return y / self.phi(y) ** (1.0 / self.p)

    def initial(self):
        y = np.ones(self.mu.m)
        if self.cfg.init == "random":
            y = np.random.default_rng(self.cfg.seed).uniform(0.5, 2.0, self.mu.m)
        return self.restore(y)

    def recenter(self, y):
        """Translate P(y) so the Chebyshev centre sits at the origin (p = 1 only)."""
        center, _ = chebyshev_center(self.mu.directions, y)
        return y - self.mu.directions @ center, center

    def floor_guard(self, y):
        out, t = floor_lift(y, self.mu.weights, self.p, self.cfg.floor_frac)
        if t is None:
            return y
        logger.debug_at_level(DEBUG_L2, "Solver", f"floor guard lifted small offsets to {t:.4g}")
        return self.restore(out)

    def evaluate(self, y):
        shift = np.zeros(self.n)
        if self.translation_mode:
            y, shift = self.recenter(y)
        P = polytope_from_halfspaces(HalfspaceSpec(self.mu.directions, y))
        result = self.engine.measure(P, calibrate=False)
        return y, shift, P, result.value, np.array(result.facet_masses)

    def direction(self, y, masses):
        c, p = self.mu.weights, self.p
        g = (self.pexp - 1.0) * masses
        grad_phi = self.kappa * p * c * y ** (p - 1.0)
        D = y ** (2.0 - p) / c
        lam = float(grad_phi @ (D * g)) / float(grad_phi @ (D * grad_phi))
        return g, D * (g - lam * grad_phi)

    def run(self):
        cfg = self.cfg
        y = self.initial()
        y, shift, P, C, masses = self.evaluate(y)
        self.shift += shift
        tau = cfg.step0
        history = [C]
        best = None
        start = time.time()
        for it in range(1, cfg.max_outer_iters + 1):
            calibrated = calibrate_masses(P, masses, C, self.pexp) if cfg.calibrate else masses
            residual = kkt_residual(y, self.mu, self.p, calibrated, C)
            best = (y, P, C, calibrated, residual, it)
            self.trace.append({"iteration": it, "capacity": C, "kkt_residual": residual, "step": tau})
            EventManager.get_instance().publish(SOLVER_ITERATION, dict(self.trace[-1]))
            logger.debug_at_level(DEBUG_L2, "Solver", f"iter {it}: C={C:.8g}, kkt={residual:.4g}, tau={tau:.3g}")
            if residual <= cfg.kkt_tol:
                logger.debug_at_level(DEBUG_L1, "Solver",
                                      f"converged after {it} iterations ({time.time() - start:.1f}s)")
                return best, True

            g, d = self.direction(y, masses)
            accepted = False
            alpha = tau / max(float(np.max(np.abs(d) / y)), 1e-300)
            for attempt in range(cfg.max_backtracks + 1):
                trial = self.floor_guard(self.restore(np.maximum(y + alpha * d, 1e-12 * np.max(y))))
                try:
                    t_y, t_shift, t_P, t_C, t_masses = self.evaluate(trial)
                except NoConvergence as e:
                    logger.debug_at_level(DEBUG_L3, "Solver", f"trial {attempt}: engine did not converge ({e})")
                    alpha *= 0.5
                    continue
                gain = float(g @ (trial - y))
                logger.debug_at_level(DEBUG_L3, "Solver", f"trial {attempt}: C={t_C:.8g}, predicted gain={gain:.3g}")
                if t_C >= C + cfg.armijo * max(gain, 0.0):
                    accepted = True
                    break
                alpha *= 0.5

            if accepted:
                y, P, C, masses = t_y, t_P, t_C, t_masses
                self.shift += t_shift
                tau = min(cfg.step0, 1.5 * tau)
            else:
                tau *= 0.25
            history.append(C)

            window = cfg.stagnation_window
            if len(history) > window:
                recent = history[-window - 1:]
                if (max(recent) - min(recent)) <= cfg.stagnation_tol * abs(C):
                    raise NoConvergence(f"capacity stagnated over {window} iterations with KKT residual "
                                        f"{residual:.4g}", best=best,
                                        diagnostics={"iterations": it, "kkt_residual": residual, "capacity": C})

        raise NoConvergence(f"no convergence in {cfg.max_outer_iters} iterations", best=best,
                            diagnostics={"iterations": cfg.max_outer_iters, "kkt_residual": best[4]})


def _finish(ascent, best, converged):
    y, P, C, masses, residual, iterations = best
    n, p, pexp = ascent.n, ascent.p, ascent.pexp
    critical = abs(n - pexp - p) < CRITICAL_TOL
    return SolverResult(offsets=np.array(y), polytope=P, capacity=C, masses=np.array(masses),
                        kkt_residual=residual, normalization=C if critical else 1.0, multiplier=1.0 / C,
                        p=p, pexp=pexp, trace=tuple(ascent.trace), converged=converged,
                        iterations=iterations,
                        unnormalized=None if critical else scale(P, C ** (-1.0 / (n - pexp - p))))


def _check_inputs(mu, pexp, cfg):
    check_exponent(mu.n, pexp)
    if cfg.grid.n != mu.n:
        raise InvalidConfig(f"grid dimension {cfg.grid.n} does not match measure dimension {mu.n}")
    if not validate_spread(mu.directions):
        raise SpreadViolation("measure is concentrated on a closed hemisphere")


def solve_discrete_lp(mu, p, pexp, cfg=None):
    """Solve the discrete L_p Minkowski problem for p > 1."""
    cfg = cfg or SolverConfig()
    if not p > 1:
        raise InvalidExponent(f"solve_discrete_lp needs p > 1, got {p}")
    _check_inputs(mu, pexp, cfg)
    logger.debug_at_level(DEBUG_L1, "Solver", f"solving L_{p} problem: m={mu.m}, n={mu.n}, pexp={pexp}")
    ascent = _Ascent(mu, p, pexp, cfg)
    try:
        best, converged = ascent.run()
    except NoConvergence as e:
        if e.best is not None:
            e.best = _finish(ascent, e.best, False)
        raise
    result = _finish(ascent, best, converged)
    EventManager.get_instance().publish(SOLVER_FINISHED, {"p": p, "capacity": result.capacity,
                                                          "kkt_residual": result.kkt_residual})
    return result


def solve_discrete_p1(mu, pexp, cfg=None):
    """Solve the p = 1 problem; the body is returned with its vertex centroid at the origin."""
    cfg = cfg or SolverConfig()
    _check_inputs(mu, pexp, cfg)
    offset = np.linalg.norm(measure_centroid(mu))
    if offset > CENTROID_TOL * total_mass(mu):
        raise CentroidViolation(f"measure centroid has norm {offset:.3g}; it must vanish")
    logger.debug_at_level(DEBUG_L1, "Solver", f"solving p=1 problem: m={mu.m}, n={mu.n}, pexp={pexp}")
    ascent = _Ascent(mu, 1.0, pexp, cfg, translation_mode=True)

    def centred(best, converged):
        result = _finish(ascent, best, converged)
        centroid = vertex_centroid(result.polytope)
        moved = translate(result.polytope, -centroid)
        unnormalized = None if result.unnormalized is None else translate(result.unnormalized,
                                                                          -vertex_centroid(result.unnormalized))
        return replace(result, polytope=moved, offsets=np.array(moved.offsets),
                       translation=-(ascent.shift + centroid), unnormalized=unnormalized)

    try:
        best, converged = ascent.run()
    except NoConvergence as e:
        if e.best is not None:
            e.best = centred(e.best, False)
        raise
    result = centred(best, converged)
    EventManager.get_instance().publish(SOLVER_FINISHED, {"p": 1.0, "capacity": result.capacity,
                                                          "kkt_residual": result.kkt_residual})
    return result


# ─── Normalizations ───

def normalize_problem4(K, cfg, pexp, verify=True):
    """K / C(K)^(1/(n-pexp)), the body of unit capacity."""
    C = p_capacity(K, cfg, pexp).value
    K_bar = scale(K, C ** (-1.0 / (K.n - pexp)))
    if verify:
        check = p_capacity(K_bar, cfg, pexp).value
        if abs(check - 1.0) > 0.05:
            logger.warning("Solver", f"normalized body has capacity {check:.4f}, expected 1")
    return K_bar


def normalize_problem3(K_bar, mu, p, pexp):
    """K_bar / F_p(K_bar)^(1/p).

    F_p counts as zero below ZERO_FUNCTIONAL_TOL times its value for a body with
    every support equal to the circumradius; rescaling by rounding noise is refused.
    """
    F = functional_fp(K_bar, mu, p, pexp)
    scale_ref = (pexp - 1.0) / (mu.n - pexp) * float(np.sum(mu.weights)) * K_bar.circumradius ** p
    if F <= ZERO_FUNCTIONAL_TOL * scale_ref:
        raise ZeroFunctional("F_p vanishes: the measure sits where the support function is 0")
    return scale(K_bar, F ** (-1.0 / p))


def rescale_unnormalized(P_star, p, pexp, cfg, capacity=None, verify=False):
    """C(P*)^(-1/(n-pexp-p)) P*, which solves the unnormalized problem.

    Masses of sP* are s^(n-pexp-p) times those of P*, so the rescaled body carries
    mu_p(P*)/C(P*). With ``verify`` the capacity of the rescaled body is solved and
    compared with s^(n-pexp) C(P*); a mismatch beyond HOMOGENEITY_TOL is logged.
    """
    n = P_star.n
    if abs(n - pexp - p) < CRITICAL_TOL:
        raise CriticalExponent(f"p + pexp = n = {n}: the unnormalized problem has no rescaling")
    C = capacity if capacity is not None else p_capacity(P_star, cfg, pexp).value
    s = C ** (-1.0 / (n - pexp - p))
    P = scale(P_star, s)
    if verify:
        expected = s ** (n - pexp) * C
        check = p_capacity(P, cfg, pexp).value
        if abs(check - expected) > HOMOGENEITY_TOL * expected:
            logger.warning("Solver", f"rescaled body has capacity {check:.4g}, homogeneity predicts {expected:.4g}")
    return P


def problem5_residual(K, mu, p, masses, capacity):
    """max over atoms of |mu_i/C - h_K(xi_i)^(p-1) c_i| relative to h^(p-1) c_i."""
    dist, idx = cKDTree(K.directions).query(mu.directions)
    if np.any(dist > 1e-9):
        raise InvalidMeasure("measure atoms must be facet directions of the body")
    h = K.supports[idx]
    return kkt_residual(h, mu, p, np.asarray(masses)[idx], capacity)
