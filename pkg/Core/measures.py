# Core/measures.py
"""Atomic measures on the unit sphere and the L_p capacitary measure of a polytope."""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from Core.errors import InvalidMeasure, UnsupportedDimension, ZeroSupportValue
from Managers.capacity_engine import measure_with_capacity
from Utils.log_utils import get_logger, DEBUG_L2, DEBUG_L3

logger = get_logger()

DUPLICATE_TOL = 1e-9
RENORMALIZE_WARN = 1e-6


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class DiscreteMeasure:
    """sum_i c_i delta_{xi_i} with distinct unit directions and positive weights."""

    directions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if dirs.ndim != 2 or dirs.shape[0] != w.shape[0] or dirs.shape[0] == 0:
            raise InvalidMeasure("directions and weights must be non-empty and of equal length")
        if dirs.shape[1] not in (2, 3):
            raise UnsupportedDimension(f"dimension {dirs.shape[1]} not supported (expected 2 or 3)")
        if not (np.all(np.isfinite(dirs)) and np.all(np.isfinite(w))):
            raise InvalidMeasure("directions and weights must be finite")
        if np.any(w <= 0):
            raise InvalidMeasure("weights must be positive")
        norms = np.linalg.norm(dirs, axis=1)
        if np.max(np.abs(norms - 1.0)) > RENORMALIZE_WARN:
            raise InvalidMeasure("directions must be unit vectors")
        dirs = dirs / norms[:, None]
        if cKDTree(dirs).query_pairs(r=DUPLICATE_TOL):
            raise InvalidMeasure(f"atoms closer than {DUPLICATE_TOL} rad")
        object.__setattr__(self, "directions", _frozen(dirs))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self):
        return self.directions.shape[1]

    @property
    def m(self):
        return self.directions.shape[0]

    def scaled(self, c):
        return DiscreteMeasure(self.directions, self.weights * c)


def measure_centroid(mu):
    return mu.weights @ mu.directions


def total_mass(mu):
    return float(np.sum(mu.weights))


def _merge_atoms(mu1, mu2):
    dirs = np.vstack([mu1.directions, mu2.directions])
    tree = cKDTree(dirs)
    groups = tree.query_ball_point(dirs, r=DUPLICATE_TOL)
    rep = np.array([min(g) for g in groups])
    uniq, label = np.unique(rep, return_inverse=True)
    a = np.bincount(label[:mu1.m], weights=mu1.weights, minlength=len(uniq))
    b = np.bincount(label[mu1.m:], weights=mu2.weights, minlength=len(uniq))
    return dirs[uniq], a, b


def weak_distance(mu1, mu2):
    """Bounded-Lipschitz distance: sup of sum f d(mu1 - mu2) over |f| <= 1, Lip(f) <= 1 (geodesic)."""
    if mu1.n != mu2.n:
        raise InvalidMeasure("measures live on spheres of different dimension")
    dirs, a, b = _merge_atoms(mu1, mu2)
    k = len(dirs)
    diff = a - b
    if k == 1:
        return float(abs(diff[0]))
    geo = np.arccos(np.clip(dirs @ dirs.T, -1.0, 1.0))
    i, j = np.nonzero(~np.eye(k, dtype=bool))
    rows = np.arange(len(i))
    a_ub = sparse.coo_matrix((np.concatenate([np.ones(len(i)), -np.ones(len(i))]),
                              (np.concatenate([rows, rows]), np.concatenate([i, j]))),
                             shape=(len(i), k)).tocsr()
    res = linprog(-diff, A_ub=a_ub, b_ub=geo[i, j], bounds=[(-1.0, 1.0)] * k, method="highs")
    if res.status != 0:
        raise InvalidMeasure(f"bounded-Lipschitz LP failed: {res.message}")
    value = max(0.0, -float(res.fun))
    logger.debug_at_level(DEBUG_L3, "Measures", f"weak_distance over {k} atoms = {value:.6g}")
    return value


def lp_measure_from_masses(K, masses, p):
    """Weights h_i^(1-p) mu_i on the facets that carry mass."""
    masses = np.asarray(masses, dtype=float)
    carrying = masses > 0
    if not carrying.any():
        raise InvalidMeasure("capacitary measure has no mass")
    h = K.supports[carrying]
    if p > 1 and np.any(h <= 0):
        raise ZeroSupportValue("the origin lies on a facet carrying capacitary mass")
    return DiscreteMeasure(K.directions[carrying], h ** (1.0 - p) * masses[carrying])


def lp_capacitary_measure(K, p, cfg, pexp, method=None, calibrate=False):
    """mu_{p,pexp}(K, .) as a DiscreteMeasure over K's facet normals."""
    result, _ = measure_with_capacity(K, cfg, pexp, method=method, calibrate=calibrate)
    mu = lp_measure_from_masses(K, result.facet_masses, p)
    logger.debug_at_level(DEBUG_L2, "Measures", f"L_{p} capacitary measure: {mu.m} atoms, mass {total_mass(mu):.6g}")
    return mu


def normalized_lp_measure(K, p, cfg, pexp, method=None, calibrate=True):
    """mu_{p,pexp}(K, .) / C(K) and C(K)."""
    result, _ = measure_with_capacity(K, cfg, pexp, method=method, calibrate=calibrate)
    mu = lp_measure_from_masses(K, result.facet_masses, p)
    return mu.scaled(1.0 / result.value), result.value


def poincare_residual(K, cfg, pexp, method=None):
    """|C - (p-1)/(n-p) sum h_i mu_i| / C with uncalibrated masses."""
    result, _ = measure_with_capacity(K, cfg, pexp, method=method, calibrate=False)
    masses = np.asarray(result.facet_masses)
    predicted = (pexp - 1.0) / (K.n - pexp) * float(np.sum(K.supports * masses))
    return abs(result.value - predicted) / result.value


# ─── Helpers ───

def is_even(mu, rtol=1e-9):
    tree = cKDTree(mu.directions)
    dist, idx = tree.query(-mu.directions)
    return bool(np.all(dist <= DUPLICATE_TOL) and np.allclose(mu.weights[idx], mu.weights, rtol=rtol, atol=0))


def perturb_weights(mu, delta, seed=0):
    """Multiply each weight by an independent factor drawn uniformly from [1-delta, 1+delta]."""
    if not 0 <= delta < 1:
        raise InvalidMeasure(f"perturbation size must lie in [0, 1), got {delta}")
    rng = np.random.default_rng(seed)
    return DiscreteMeasure(mu.directions, mu.weights * rng.uniform(1.0 - delta, 1.0 + delta, mu.m))


def balance_centroid(mu):
    """Smallest weight change (least squares) that moves the centroid to the origin."""
    A = mu.directions.T
    correction = A.T @ np.linalg.lstsq(A @ A.T, A @ mu.weights, rcond=None)[0]
    weights = mu.weights - correction
    if np.any(weights <= 0):
        raise InvalidMeasure("centroid cannot be balanced with positive weights")
    return DiscreteMeasure(mu.directions, weights)


def transform_measure(mu, Q):
    return DiscreteMeasure(mu.directions @ np.asarray(Q, dtype=float).T, mu.weights)


def uniform_axis_measure(n, weight=1.0):
    eye = np.eye(n)
    return DiscreteMeasure(np.vstack([eye, -eye]), np.full(2 * n, weight))


def measure_from_dict(data):
    """Parse {"n": int, "atoms": [{"dir": [...], "w": float}, ...]}; renormalizes directions."""
    try:
        n = int(data["n"])
        dirs = np.array([atom["dir"] for atom in data["atoms"]], dtype=float)
        weights = np.array([atom["w"] for atom in data["atoms"]], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidMeasure(f"malformed measure: {e}") from e
    if dirs.ndim != 2 or dirs.shape[1] != n:
        raise InvalidMeasure(f"atom directions do not have dimension {n}")
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0):
        raise InvalidMeasure("zero atom direction")
    correction = float(np.max(np.abs(norms - 1.0)))
    if correction > RENORMALIZE_WARN:
        logger.warning("Measures", f"normalizing atom directions (max correction {correction:.3g})")
    return DiscreteMeasure(dirs / norms[:, None], weights)


def measure_to_dict(mu):
    return {"n": mu.n, "atoms": [{"dir": d.tolist(), "w": float(w)} for d, w in zip(mu.directions, mu.weights)]}
