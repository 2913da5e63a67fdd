# Managers/check_harness.py
"""Inequality and property checks that tie the capacity engine and solver to the theory.

Every check returns a CheckReport. The relative slack is
(lhs - rhs) / max(|lhs|, |rhs|, tiny) and a check passes iff slack >= -tolerance.
Bound-type checks (a measured error against an allowed bound) put the bound
in lhs, the measurement in rhs and use tolerance 0.
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Tuple

import numpy as np

from Core.errors import InvalidSpec
from Core.event_manager import EventManager, CHECK_COMPLETED
from Core.geometry import (
    Polytope,
    SupportSamples,
    as_samples,
    box_polytope,
    diameter,
    hausdorff_distance,
    merge_directions,
    polytope_from_halfspaces,
    HalfspaceSpec,
    refinement_directions,
    reflect,
    scale,
    sphere_sample,
    support_function,
    translate,
    vertex_centroid,
)
from Core.measures import (
    balance_centroid,
    is_even,
    lp_measure_from_masses,
    normalized_lp_measure,
    perturb_weights,
    poincare_residual,
    weak_distance,
)
from Managers.capacity_engine import (
    lp_mixed_capacity,
    measure_with_capacity,
    mixed_capacity,
    p_capacity,
)
from Managers.minkowski_solver import SolverConfig, solve_discrete_lp, solve_discrete_p1
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2

logger = get_logger()

TINY = 1e-300

# Allowed relative slack per check, with the error source that dominates it.
TOLERANCES = {
    "minkowski_inequality": 0.05,        # grid truncation and facet-mass discretization
    "brunn_minkowski": 0.05,             # grid truncation; sampled Wulff shape of the L_p sum
    "mixed_capacity_inequality": 0.02,   # facet-mass discretization
    "homogeneity_weights": 0.07,         # facet masses at two scales
    "homogeneity_capacity": 0.05,        # grid truncation at two scales
    "roundtrip": 0.05,                   # solver KKT tolerance plus engine error
    "continuity_sensitivity": 5.0,       # empirical modulus L
    "continuity_floor": 0.02,            # solver reproducibility
    "uniqueness": 0.02,                  # solver KKT tolerance
    "symmetry": 0.01,                    # solver KKT tolerance on even measures
    "poincare": 0.05,                    # facet-mass discretization
    "centroid": 0.02,                    # facet-mass discretization
    "symmetry_characterization": 0.05,   # grid truncation and facet-mass discretization
}


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    lhs: float
    rhs: float
    slack: float
    tolerance: float
    context: Dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "lhs": self.lhs, "rhs": self.rhs,
                "slack": self.slack, "tolerance": self.tolerance, "context": self.context}


def relative_slack(lhs, rhs):
    return (lhs - rhs) / max(abs(lhs), abs(rhs), TINY)


def digest(*arrays, **params):
    """sha256 over the arrays' bytes and the sorted parameters."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    h.update(json.dumps(params, sort_keys=True, default=str).encode())
    return h.hexdigest()


def body_digest(K):
    return digest(K.directions, K.offsets)


def make_report(name, lhs, rhs, tolerance, **context):
    slack = relative_slack(lhs, rhs)
    report = CheckReport(name=name, passed=bool(slack >= -tolerance), lhs=float(lhs), rhs=float(rhs),
                         slack=float(slack), tolerance=float(tolerance), context=context)
    logger.debug_at_level(DEBUG_L1, "Harness",
                          f"{name}: {'PASS' if report.passed else 'FAIL'} (slack {slack:+.4f}, tol {tolerance})")
    EventManager.get_instance().publish(CHECK_COMPLETED, report.to_dict())
    return report


def _grid(cfg):
    return cfg.grid if isinstance(cfg, SolverConfig) else cfg


def _solver(cfg):
    return cfg if isinstance(cfg, SolverConfig) else SolverConfig(grid=cfg)


def _as_wulff(f, directions=None):
    """(body, samples) for a support argument given as a polytope or samples."""
    if isinstance(f, Polytope):
        return f, SupportSamples.from_polytope(f, directions if directions is not None else f.directions)
    samples = as_samples(f)
    return samples.wulff(), samples


def _values_at(f, directions):
    if isinstance(f, SupportSamples):
        return f.at(directions)
    return support_function(f, directions)


def _shared_pair(f1, f2, n):
    """Samples of both arguments of an L_p sum on one direction grid.

    The grid is the union of both arguments' directions and the refinement grid,
    whichever of the two is a polytope.
    """
    if isinstance(f1, SupportSamples) and isinstance(f2, SupportSamples) and \
            f1.directions.shape == f2.directions.shape and np.allclose(f1.directions, f2.directions):
        return f1, f2
    dirs = merge_directions(f1.directions, f2.directions, refinement_directions(n))
    return SupportSamples(dirs, _values_at(f1, dirs)), SupportSamples(dirs, _values_at(f2, dirs))


# ─── Inequalities ───

def check_minkowski_inequality(K, f, p, cfg, pexp, calibrate=True):
    """C_{p}(K, f)^(n-pexp) >= C(K)^(n-pexp-p) C([f])^p.

    Masses are Poincare-calibrated by default, which makes f = K an exact equality.
    """
    grid = _grid(cfg)
    n = K.n
    result, _ = measure_with_capacity(K, grid, pexp, calibrate=calibrate)
    body_f, samples = _as_wulff(f)
    values = samples.at(K.directions) if isinstance(f, SupportSamples) else support_function(body_f, K.directions)
    mixed = lp_mixed_capacity(K, values, p, grid, pexp, masses=np.array(result.facet_masses))
    cap_f = p_capacity(body_f, grid, pexp).value
    lhs = mixed ** (n - pexp)
    rhs = result.value ** (n - pexp - p) * cap_f ** p
    return make_report("minkowski_inequality", lhs, rhs, TOLERANCES["minkowski_inequality"],
                       digest=digest(K.directions, K.offsets, samples.values, p=p, pexp=pexp),
                       p=p, pexp=pexp, mixed=mixed, capacity_K=result.value, capacity_f=cap_f, calibrated=calibrate)


def check_brunn_minkowski(f1, f2, p, cfg, pexp):
    """C(f1 +_p f2)^(p/(n-pexp)) >= C(f1)^(p/(n-pexp)) + C(f2)^(p/(n-pexp))."""
    grid = _grid(cfg)
    n = grid.n
    s1, s2 = _shared_pair(f1, f2, n)
    total = s1.lp_sum(s2, p)
    e = p / (n - pexp)
    caps = [p_capacity(s.wulff(), grid, pexp).value for s in (s1, s2, total)]
    lhs = caps[2] ** e
    rhs = caps[0] ** e + caps[1] ** e
    return make_report("brunn_minkowski", lhs, rhs, TOLERANCES["brunn_minkowski"],
                       digest=digest(s1.values, s2.values, p=p, pexp=pexp), p=p, pexp=pexp,
                       capacities=caps)


def mixed_capacity_inequality(K, L, cfg, pexp, calibrate=True):
    """C(K, L) >= C(K)^((n-pexp-1)/(n-pexp)) C(L)^(1/(n-pexp))."""
    grid = _grid(cfg)
    n = K.n
    result, _ = measure_with_capacity(K, grid, pexp, calibrate=calibrate)
    lhs = mixed_capacity(K, L, grid, pexp, masses=np.array(result.facet_masses))
    cap_L = p_capacity(L, grid, pexp).value
    rhs = result.value ** ((n - pexp - 1.0) / (n - pexp)) * cap_L ** (1.0 / (n - pexp))
    return make_report("mixed_capacity_inequality", lhs, rhs, TOLERANCES["mixed_capacity_inequality"],
                       digest=digest(K.offsets, L.offsets, pexp=pexp), pexp=pexp, mixed=lhs,
                       calibrated=calibrate)


def symmetry_characterization_check(K, p, cfg, pexp, calibrate=True):
    """C_{p}(K, -K) >= C(K), with equality for origin-symmetric K."""
    grid = _grid(cfg)
    result, _ = measure_with_capacity(K, grid, pexp, calibrate=calibrate)
    mixed = lp_mixed_capacity(K, reflect(K), p, grid, pexp, masses=np.array(result.facet_masses))
    return make_report("symmetry_characterization", mixed, result.value,
                       TOLERANCES["symmetry_characterization"], digest=body_digest(K), p=p, pexp=pexp,
                       calibrated=calibrate)


# ─── Scaling and measures ───

def homogeneity_check(K, s, p, cfg, pexp):
    """L_p measure of sK against s^(n-pexp-p) times that of K, and C(sK) against s^(n-pexp) C(K)."""
    if not 0.25 <= s <= 4.0:
        raise InvalidSpec(f"scale factor {s} outside [0.25, 4]")
    grid = _grid(cfg)
    n = K.n
    base, _ = measure_with_capacity(K, grid, pexp)
    if s == 1.0:
        moved, sK = base, K
    else:
        sK = scale(K, s)
        moved, _ = measure_with_capacity(sK, grid, pexp)
    w0 = lp_measure_from_masses(K, base.facet_masses, p)
    w1 = lp_measure_from_masses(sK, moved.facet_masses, p)
    factor = s ** (n - pexp - p)
    if w0.m != w1.m:
        weight_dev = 1.0
    else:
        weight_dev = float(np.max(np.abs(w1.weights - factor * w0.weights) / (factor * w0.weights)))
    cap_dev = abs(moved.value - s ** (n - pexp) * base.value) / moved.value
    worst = max(weight_dev / TOLERANCES["homogeneity_weights"], cap_dev / TOLERANCES["homogeneity_capacity"])
    return make_report("homogeneity", 1.0, worst, 0.0, digest=body_digest(K), s=s, p=p, pexp=pexp,
                       weight_deviation=weight_dev, capacity_deviation=cap_dev)


def poincare_check(K, cfg, pexp):
    residual = poincare_residual(K, _grid(cfg), pexp)
    return make_report("poincare", TOLERANCES["poincare"], residual, 0.0, digest=body_digest(K), pexp=pexp)


def centroid_check(K, cfg, pexp):
    result, _ = measure_with_capacity(K, _grid(cfg), pexp)
    masses = np.array(result.facet_masses)
    ratio = float(np.linalg.norm(masses @ K.directions) / max(masses.sum(), TINY))
    return make_report("centroid", TOLERANCES["centroid"], ratio, 0.0, digest=body_digest(K), pexp=pexp)


# ─── Solver-level checks ───

def _solve(mu, p, pexp, cfg):
    if p == 1:
        return solve_discrete_p1(mu, pexp, cfg)
    return solve_discrete_lp(mu, p, pexp, cfg)


def roundtrip_test(Q, p, cfg, pexp):
    """Solve for the normalized L_p measure of Q and compare the answer with Q."""
    solver_cfg = _solver(cfg)
    mu, cap = normalized_lp_measure(Q, p, solver_cfg.grid, pexp, calibrate=True)
    target = Q
    if p == 1:
        mu = balance_centroid(mu)
        target = translate(Q, -vertex_centroid(Q))
    result = _solve(mu, p, pexp, solver_cfg)
    ratio = hausdorff_distance(result.polytope, target) / diameter(target)
    logger.debug_at_level(DEBUG_L2, "Harness", f"roundtrip: C(Q)={cap:.6g}, distance/diam={ratio:.4f}")
    return make_report("roundtrip", TOLERANCES["roundtrip"], ratio, 0.0, digest=body_digest(Q), p=p, pexp=pexp,
                       kkt_residual=result.kkt_residual, iterations=result.iterations)


def continuity_probe(mu, delta, p, cfg, pexp, sensitivity=None, seed=0, base=None):
    """Solve for mu and a weight perturbation of size delta; compare the two bodies."""
    if not 0.0 <= delta <= 0.2:
        raise InvalidSpec(f"perturbation size {delta} outside [0, 0.2]")
    solver_cfg = _solver(cfg)
    L = sensitivity if sensitivity is not None else TOLERANCES["continuity_sensitivity"]
    base = base or _solve(mu, p, pexp, solver_cfg)
    moved_mu = perturb_weights(mu, delta, seed)
    if p == 1:
        moved_mu = balance_centroid(moved_mu)
    moved = _solve(moved_mu, p, pexp, solver_cfg)
    diam = diameter(base.polytope)
    distance = hausdorff_distance(base.polytope, moved.polytope)
    bound = max(L * delta, TOLERANCES["continuity_floor"]) * diam
    return make_report("continuity", bound, distance, 0.0, digest=digest(mu.directions, mu.weights, delta=delta),
                       delta=delta, p=p, pexp=pexp, distance=distance, diameter=diam,
                       weak_distance=weak_distance(moved_mu, mu))


def uniqueness_check(mu, p, cfg, pexp):
    """Two initializations (uniform and random) must reach the same body."""
    solver_cfg = _solver(cfg)
    first = _solve(mu, p, pexp, solver_cfg)
    second = _solve(mu, p, pexp, replace(solver_cfg, init="random"))
    ratio = hausdorff_distance(first.polytope, second.polytope) / diameter(first.polytope)
    return make_report("uniqueness", TOLERANCES["uniqueness"], ratio, 0.0,
                       digest=digest(mu.directions, mu.weights), p=p, pexp=pexp)


def symmetry_check(mu, p, cfg, pexp, result=None):
    """Even measures give origin-symmetric bodies: distance(P, -P) relative to diam(P)."""
    if not is_even(mu):
        raise InvalidSpec("symmetry check needs an even measure")
    result = result or _solve(mu, p, pexp, _solver(cfg))
    P = result.polytope
    ratio = hausdorff_distance(P, reflect(P)) / diameter(P)
    offsets = np.asarray(result.offsets)
    spread = float((offsets.max() - offsets.min()) / offsets.mean())
    return make_report("symmetry", TOLERANCES["symmetry"], ratio, 0.0, digest=digest(mu.directions, mu.weights),
                       p=p, pexp=pexp, offset_spread=spread)


# ─── Fixture corpus ───

def _random_box(rng):
    return box_polytope(rng.uniform(0.4, 1.0, 3))


def _truncated_box(rng):
    half = rng.uniform(0.5, 1.0, 3)
    corners = np.array([[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)], dtype=float)
    cuts = corners[rng.choice(8, size=3, replace=False)] / np.sqrt(3.0)
    depth = np.abs(cuts) @ half * rng.uniform(0.7, 0.95, 3)
    eye = np.eye(3)
    dirs = np.vstack([eye, -eye, cuts])
    return polytope_from_halfspaces(HalfspaceSpec(dirs, np.concatenate([half, half, depth])))


def _symmetric_wulff(rng):
    extra = sphere_sample(3, 40)[rng.choice(40, size=4, replace=False)]
    half = np.vstack([np.eye(3), extra])
    values = np.concatenate([rng.uniform(0.6, 1.0, 3), rng.uniform(0.55, 0.9, 4)])
    dirs = np.vstack([half, -half])
    return polytope_from_halfspaces(HalfspaceSpec(dirs, np.concatenate([values, values])))


FIXTURE_KINDS = (("box", _random_box), ("truncated_box", _truncated_box), ("symmetric_wulff", _symmetric_wulff))


def fixture_corpus(seed=0, size=40):
    """Seeded list of (name, K, L) pairs cycling through the fixture kinds."""
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(size):
        name, build = FIXTURE_KINDS[i % len(FIXTURE_KINDS)]
        corpus.append((f"{name}_{i}", build(rng), build(rng)))
    return corpus


def run_corpus(cfg, pexp, p=2.0, seed=0, size=40):
    """Minkowski and Brunn-Minkowski checks over the corpus, in parallel."""
    grid = _grid(cfg)

    def run(case):
        name, K, L = case
        reports = [check_minkowski_inequality(K, L, p, grid, pexp),
                   check_brunn_minkowski(K, L, p, grid, pexp)]
        return [replace(r, context={**r.context, "fixture": name}) for r in reports]

    with ThreadPoolExecutor(max_workers=grid.threads) as pool:
        reports = [r for batch in pool.map(run, fixture_corpus(seed, size)) for r in batch]
    passed = sum(r.passed for r in reports)
    logger.info("Harness", f"corpus: {passed}/{len(reports)} checks passed")
    return reports


def corpus_pass_counts(reports):
    """Passed and total report counts per check name."""
    counts = {}
    for r in reports:
        passed, total = counts.get(r.name, (0, 0))
        counts[r.name] = (passed + int(r.passed), total + 1)
    return counts


# ─── Registry used by the command line ───

@dataclass(frozen=True)
class HarnessOptions:
    solver: SolverConfig
    p: float = 2.0
    pexp: float = 2.0
    scale: float = 2.0
    delta: float = 0.05
    seed: int = 0


def _body_checks():
    return {
        "poincare": lambda K, o: [poincare_check(K, o.solver.grid, o.pexp)],
        "centroid": lambda K, o: [centroid_check(K, o.solver.grid, o.pexp)],
        "homogeneity": lambda K, o: [homogeneity_check(K, o.scale, o.p, o.solver.grid, o.pexp)],
        "roundtrip": lambda K, o: [roundtrip_test(K, o.p, o.solver, o.pexp)],
        "minkowski_inequality": lambda K, o: [check_minkowski_inequality(K, scale(K, 2.0), o.p, o.solver.grid,
                                                                         o.pexp)],
        "brunn_minkowski": lambda K, o: [check_brunn_minkowski(K, K, o.p, o.solver.grid, o.pexp)],
        "mixed_capacity_inequality": lambda K, o: [mixed_capacity_inequality(K, K, o.solver.grid, o.pexp)],
        "symmetry_characterization": lambda K, o: [symmetry_characterization_check(K, o.p, o.solver.grid,
                                                                                   o.pexp)],
    }


def _measure_checks():
    return {
        "uniqueness": lambda mu, o: [uniqueness_check(mu, o.p, o.solver, o.pexp)],
        "symmetry": lambda mu, o: [symmetry_check(mu, o.p, o.solver, o.pexp)],
        "continuity": lambda mu, o: [continuity_probe(mu, o.delta, o.p, o.solver, o.pexp, seed=o.seed)],
    }


CHECKS: Dict[str, Tuple[str, Callable]] = {
    **{name: ("body", fn) for name, fn in _body_checks().items()},
    **{name: ("measure", fn) for name, fn in _measure_checks().items()},
    "corpus": ("none", lambda _, o: run_corpus(o.solver.grid, o.pexp, o.p, o.seed)),
}
