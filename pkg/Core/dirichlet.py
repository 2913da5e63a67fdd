# Core/dirichlet.py
"""Discrete p-Dirichlet energy on a rasterized lattice and its minimizers.

Each lattice cell contributes |G|^p times its weight, where G is the
difference-quotient gradient built from the n edges meeting at one corner of
the cell. Two orientations are averaged: edges leaving the lowest corner
("forward") and edges entering the highest corner ("backward"). Edge lengths
come from the raster, so cut edges next to the body are shorter than h, and a
cell is weighted by the product of its n edge lengths. The product is
symmetric in the axes, so the energy commutes with axis permutations and
with central inversion.

All arrays handled here are full lattice arrays; only FREE points move.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from Utils.log_utils import get_logger, DEBUG_L2, DEBUG_L3

logger = get_logger()

ETA = 1e-7
ARMIJO = 1e-4
MAX_LINE_SEARCH = 30
LOCAL_BACKTRACKS = 8
TINY = 1e-300


class _Orientation:
    """Slices tying the cells of one orientation to edge and point arrays."""

    def __init__(self, n, backward):
        rest = slice(1, None) if backward else slice(0, -1)
        self.edge_views = [tuple(slice(None) if a == d else rest for a in range(n)) for d in range(n)]
        self.anchor = (rest,) * n
        near = slice(0, -1) if backward else slice(1, None)
        self.neighbors = [tuple(near if a == d else rest for a in range(n)) for d in range(n)]
        # d(G_d)/d(u_anchor) has this sign
        self.anchor_sign = 1.0 if backward else -1.0


class DirichletEnergy:
    """E(u) = 1/2 sum over orientations and cells of w * |G|^p."""

    def __init__(self, raster, pexp, eta=ETA):
        self.raster = raster
        self.pexp = float(pexp)
        self.eta2 = eta ** 2
        self.n = raster.n
        self.cell_volume = raster.h ** self.n
        self.orientations = [_Orientation(self.n, backward) for backward in (False, True)]
        self.inv, self.lengths, self.weights = [], [], []
        for o in self.orientations:
            lengths = [raster.edge_len[d][o.edge_views[d]] for d in range(self.n)]
            self.lengths.append(lengths)
            self.inv.append([raster.edge_inv[d][o.edge_views[d]] for d in range(self.n)])
            self.weights.append(0.5 * self.cell_volume * np.prod(np.stack(lengths), axis=0))

    def _cell_gradients(self, u):
        diffs = [np.diff(u, axis=d) for d in range(self.n)]
        return [[diffs[d][o.edge_views[d]] * self.inv[k][d] for d in range(self.n)]
                for k, o in enumerate(self.orientations)]

    def value(self, u, exact=True):
        eta2 = 0.0 if exact else self.eta2
        total = 0.0
        for k, G in enumerate(self._cell_gradients(u)):
            S = sum(g * g for g in G)
            total += float(np.sum(self.weights[k] * (S + eta2) ** (0.5 * self.pexp)))
        return total

    def cell_energies(self, u):
        return [self.weights[k] * sum(g * g for g in G) ** (0.5 * self.pexp)
                for k, G in enumerate(self._cell_gradients(u))]

    def local_values(self, u):
        """Per-point sum of the energies of every cell whose stencil contains the point."""
        out = np.zeros(u.shape)
        for o, e in zip(self.orientations, self.cell_energies(u)):
            out[o.anchor] += e
            for nb in o.neighbors:
                out[nb] += e
        return out

    def linearize(self, u):
        return Linearization(self, u)

    def _scatter(self, edge_arrays, out):
        for d, A in enumerate(edge_arrays):
            lower = tuple(slice(0, -1) if a == d else slice(None) for a in range(self.n))
            upper = tuple(slice(1, None) if a == d else slice(None) for a in range(self.n))
            out[lower] -= A
            out[upper] += A
        return out

    def offset_sensitivity(self, u):
        """dE/d(edge length) for every edge, per axis, at fixed u."""
        p = self.pexp
        sens = [np.zeros_like(L) for L in self.raster.edge_len]
        for k, (o, G) in enumerate(zip(self.orientations, self._cell_gradients(u))):
            S = sum(g * g for g in G)
            dphi = 0.5 * p * (S + self.eta2) ** (0.5 * p - 1.0)
            phi = S ** (0.5 * p)
            for d in range(self.n):
                term = -self.weights[k] * 2.0 * dphi * G[d] ** 2 / self.lengths[k][d]
                term += self.weights[k] / self.lengths[k][d] * phi
                sens[d][o.edge_views[d]] += term
        return sens


class Linearization:
    """Gradient, Hessian-vector products and Jacobi diagonal at a fixed u."""

    def __init__(self, energy, u):
        self.energy = energy
        self.shape = u.shape
        p = energy.pexp
        self.G = energy._cell_gradients(u)
        self.c1, self.c2 = [], []
        for k, G in enumerate(self.G):
            S = sum(g * g for g in G) + energy.eta2
            w = energy.weights[k]
            # w * 2 phi'(S) and w * 4 phi''(S) with phi = S^(p/2)
            self.c1.append(w * p * S ** (0.5 * p - 1.0))
            self.c2.append(w * p * (p - 2.0) * S ** (0.5 * p - 2.0))

    def _edge_accumulate(self, per_orientation):
        en = self.energy
        acc = [np.zeros_like(L) for L in en.raster.edge_len]
        for k, o in enumerate(en.orientations):
            for d in range(en.n):
                acc[d][o.edge_views[d]] += per_orientation[k][d] * en.inv[k][d]
        return acc

    def gradient(self):
        en = self.energy
        parts = [[self.c1[k] * G[d] for d in range(en.n)] for k, G in enumerate(self.G)]
        return en._scatter(self._edge_accumulate(parts), np.zeros(self.shape))

    def hessp(self, v):
        en = self.energy
        dG = en._cell_gradients(v)
        parts = []
        for k, G in enumerate(self.G):
            dot = sum(G[d] * dG[k][d] for d in range(en.n))
            parts.append([self.c1[k] * dG[k][d] + self.c2[k] * G[d] * dot for d in range(en.n)])
        return en._scatter(self._edge_accumulate(parts), np.zeros(self.shape))

    def diagonal(self):
        en = self.energy
        out = np.zeros(self.shape)
        for k, (o, G) in enumerate(zip(en.orientations, self.G)):
            inv = en.inv[k]
            proj = sum(G[d] * inv[d] for d in range(en.n))
            out[o.anchor] += self.c1[k] * sum(i * i for i in inv) + self.c2[k] * proj ** 2
            for d, nb in enumerate(o.neighbors):
                out[nb] += (self.c1[k] + self.c2[k] * G[d] ** 2) * inv[d] ** 2
        return out


@dataclass
class MinimizeResult:
    values: np.ndarray
    energy: float
    history: List[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def newton_minimize(energy, u0, cfg):
    """Projected Newton-CG on the free points with Armijo backtracking."""
    free_idx = np.flatnonzero(energy.raster.free)
    nf = free_idx.size
    u = np.array(u0, dtype=float)
    E = energy.value(u, exact=False)
    history = [E]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        lin = energy.linearize(u)
        g = lin.gradient().ravel()[free_idx]
        diag = np.maximum(lin.diagonal().ravel()[free_idx], 1e-12 * max(E, TINY))

        def matvec(x):
            v = np.zeros(u.size)
            v[free_idx] = x
            return lin.hessp(v.reshape(u.shape)).ravel()[free_idx]

        H = LinearOperator((nf, nf), matvec=matvec, dtype=float)
        M = LinearOperator((nf, nf), matvec=lambda x: x / diag, dtype=float)
        d, info = cg(H, -g, rtol=cfg.cg_rtol, maxiter=cfg.cg_maxiter, M=M)
        slope = float(g @ d)
        if not np.isfinite(slope) or slope >= 0:
            logger.debug_at_level(DEBUG_L3, "Dirichlet", f"iter {it}: CG direction not descending, using diagonal step")
            d = -g / diag
            slope = float(g @ d)

        if -slope <= cfg.energy_tol * max(E, TINY):
            converged = True
            break

        base = u.ravel()[free_idx]
        step, accepted = 1.0, False
        for _ in range(MAX_LINE_SEARCH):
            trial = u.copy()
            moved = np.clip(base + step * d, 0.0, 1.0)
            trial.ravel()[free_idx] = moved
            E_trial = energy.value(trial, exact=False)
            if E_trial <= E + ARMIJO * float(g @ (moved - base)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            logger.debug_at_level(DEBUG_L2, "Dirichlet", f"iter {it}: no further decrease possible")
            converged = True
            break

        u, E = trial, E_trial
        history.append(E)
        logger.debug_at_level(DEBUG_L3, "Dirichlet",
                              f"newton iter {it}: E={E:.10g}, decrement={-slope:.3g}, step={step:g}, cg_info={info}")

    return MinimizeResult(values=u, energy=energy.value(u), history=history, converged=converged, iterations=it)


def color_classes(shape):
    """(n+1)-coloring under which same-colored points never share a cell stencil."""
    n = len(shape)
    idx = np.indices(shape)
    return sum((d + 1) * idx[d] for d in range(n)) % (n + 1)


def gauss_seidel_minimize(energy, u0, cfg):
    """Nonlinear Gauss-Seidel with a local Newton step per point, one color at a time."""
    n = energy.n
    u = np.array(u0, dtype=float)
    free = energy.raster.free
    colors = color_classes(u.shape)
    classes = [free & (colors == c) for c in range(n + 1)]
    E = energy.value(u)
    history = [E]
    converged = False
    sweep = 0
    for sweep in range(1, cfg.max_sweeps + 1):
        for cls in classes:
            lin = energy.linearize(u)
            step = np.zeros(u.shape)
            step[cls] = -lin.gradient()[cls] / np.maximum(lin.diagonal()[cls], TINY)
            before = energy.local_values(u)
            factor = np.ones(u.shape)
            pending = cls.copy()
            for _ in range(LOCAL_BACKTRACKS + 1):
                trial = u.copy()
                trial[pending] = np.clip(u[pending] + factor[pending] * step[pending], 0.0, 1.0)
                after = energy.local_values(trial)
                ok = pending & (after <= before)
                u[ok] = trial[ok]
                pending &= ~ok
                if not pending.any():
                    break
                factor[pending] *= 0.5

        E_new = energy.value(u)
        history.append(E_new)
        logger.debug_at_level(DEBUG_L3, "Dirichlet", f"sweep {sweep}: E={E_new:.10g}")
        if E - E_new <= cfg.energy_tol * max(E_new, TINY):
            converged = True
            E = E_new
            break
        E = E_new

    return MinimizeResult(values=u, energy=E, history=history, converged=converged, iterations=sweep)


def minimize_energy(energy, u0, cfg):
    if cfg.minimizer == "gauss_seidel":
        return gauss_seidel_minimize(energy, u0, cfg)
    return newton_minimize(energy, u0, cfg)
