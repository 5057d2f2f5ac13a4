"""Limit drift ``h(u)`` of the summary statistics and the ODE ``du = h(u) dt``.

For class ``a`` let ``Z ~ N(G[:, mean_a], G)`` (all columns of ``G``) and
write ``g = d psi / d z_trained`` and ``g2 = d psi / d w`` evaluated at
``(Z_theta, w, y(a))``. With class weights ``p_a``:

* trained-trained ``G[b, c]``:
  ``-sum_a p_a E[Z_c g_b + Z_b g_c] + c_lr sum_a p_a E[g_b g_c] - 4 lam G[b, c]``
* trained-other ``G[b, c]``: ``-sum_a p_a E[Z_c g_b] - 2 lam G[b, c]``
* ``w_b``: ``-sum_a p_a E[g2_b]``

These are the expected one-step increments per unit time of SGD as the
dimension grows with ``delta * d = c_lr``; ``drift_h(..., d=...)`` returns the
exact finite-``d`` version under Gaussian noise.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import ProjectiveModel
from .numerics import active_columns, cholesky_psd, clip_psd, gauss_hermite_grid, numerical_rank
from .seeding import stream
from .sgd import Curve
from .summary import SummaryLayout, SummaryState

BLOW_UP_NORM = 1e6


@dataclass(frozen=True)
class DriftEvaluatorConfig:
    method: str = "gauss_hermite"
    order: int = 10
    n_samples: int = 100_000
    crn_seed: int = 0

    def __post_init__(self):
        if self.method not in ("gauss_hermite", "monte_carlo"):
            raise ValueError(f"unknown drift method {self.method!r}")
        if self.method == "gauss_hermite" and self.order < 6:
            raise ValueError("order must be at least 6")
        if self.method == "monte_carlo" and self.n_samples < 1000:
            raise ValueError("n_samples must be at least 1000")


@functools.lru_cache(maxsize=32)
def _mc_normals(seed: int, n: int, r: int) -> np.ndarray:
    xi = stream(seed, "evaluator", r).standard_normal((n, r))
    xi.setflags(write=False)
    return xi


@functools.lru_cache(maxsize=16)
def _grid(dim: int, order: int):
    return gauss_hermite_grid(dim, order)


@dataclass
class GaussianMoments:
    """Class-weighted Gaussian expectations that enter the drift.

    ``zg[c, b] = E[Z_c g_b]``, ``gg = E[g g^T]``, ``g2 = E[g2]`` and, when
    requested, ``ggq = E[g g^T Z^T G^+ Z]``.
    """

    zg: np.ndarray
    gg: np.ndarray
    g2: np.ndarray
    ggq: np.ndarray | None = None


def _nodes(L: np.ndarray, cfg: DriftEvaluatorConfig):
    if cfg.method == "gauss_hermite":
        cols = active_columns(L)
        grid = _grid(len(cols), cfg.order)
        return grid.nodes @ L[:, cols].T, grid.weights
    r = L.shape[0]
    xi = _mc_normals(cfg.crn_seed, cfg.n_samples, r)
    return xi @ L.T, np.full(cfg.n_samples, 1.0 / cfg.n_samples)


def gaussian_moments(u: SummaryState, model: ProjectiveModel, weights, labels, cfg: DriftEvaluatorConfig,
                     strict: bool = True, with_norm: bool = False) -> GaussianMoments:
    layout = u.layout
    Gc, _ = clip_psd(u.G, strict=strict)
    L = cholesky_psd(Gc)
    offsets, wts = _nodes(L, cfg)
    kt, k1 = model.k_theta, model.k1
    pinv = np.linalg.pinv(Gc, rcond=1e-10, hermitian=True) if with_norm else None
    zg = np.zeros((layout.r, k1))
    gg = np.zeros((k1, k1))
    g2 = np.zeros(model.k2)
    ggq = np.zeros((k1, k1)) if with_norm else None
    n = offsets.shape[0]
    W = np.broadcast_to(u.w, (n, model.k2))
    for a, pa in enumerate(np.asarray(weights, dtype=float)):
        if pa == 0.0:
            continue
        z = offsets + Gc[:, layout.mean_column(a)]
        y = np.full(n, int(labels[a]), dtype=np.intp)
        g = model.grad1(z[:, :kt], W, y)
        gw = g * wts[:, None]
        zg += pa * (z.T @ gw)
        gg += pa * (g.T @ gw)
        if model.k2:
            g2 += pa * (wts @ model.eval_grad2(z[:, :kt], W, y))
        if with_norm:
            quad = np.einsum("ni,ij,nj->n", z, pinv, z)
            ggq += pa * (g.T @ (gw * quad[:, None]))
    return GaussianMoments(zg, gg, g2, ggq)


def drift_h(u: SummaryState, model: ProjectiveModel, weights, labels, c_lr: float,
            cfg: DriftEvaluatorConfig = DriftEvaluatorConfig(), d: int | None = None,
            strict: bool = True) -> np.ndarray:
    """Drift vector over the layout coordinates of ``u``.

    With ``d`` given, returns instead the exact expected one-step increment per
    unit time of SGD with Gaussian noise in dimension ``d`` (step ``c_lr/d``):
    the Gaussian law of ``V^T x`` is then exact and ``||x||^2`` splits into
    ``z^T G^+ z`` plus ``d - rank(G)`` in expectation.

    ``strict=False`` projects slightly indefinite ``G`` instead of raising.
    """
    layout = u.layout
    mom = gaussian_moments(u, model, weights, labels, cfg, strict=strict, with_norm=d is not None)
    G = u.G
    lam = model.lam
    k1 = model.k1
    out = np.empty(layout.size)
    if d is None:
        quad_self, quad_g = -4.0 * lam, 1.0
        gg = c_lr * mom.gg
        lin_self = -2.0 * lam
    else:
        delta = c_lr / d
        s = 1.0 - 2.0 * delta * lam
        quad_self, quad_g = (s * s - 1.0) / delta, s
        rank = numerical_rank(clip_psd(G, strict=strict)[0])
        gg = delta * (mom.ggq + (d - rank) * mom.gg)
        lin_self = -2.0 * lam
    for n, (b, c) in enumerate(layout.pairs):
        if c < k1:
            out[n] = quad_self * G[b, c] - quad_g * (mom.zg[c, b] + mom.zg[b, c]) + gg[b, c]
        else:
            out[n] = lin_self * G[b, c] - mom.zg[c, b]
    out[len(layout.pairs):] = -mom.g2
    return out


# ------------------------------------------------------------------ ODE


@dataclass
class OdeSolution:
    layout: SummaryLayout
    times: np.ndarray
    G: np.ndarray
    w: np.ndarray
    solver: str
    n_steps: int
    max_clip: float
    blew_up: bool = False
    rejected_steps: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def U(self) -> np.ndarray:
        pairs = self.layout.pairs
        rows = np.array([i for i, _ in pairs], dtype=int)
        cols = np.array([j for _, j in pairs], dtype=int)
        return np.concatenate([self.G[:, rows, cols], self.w], axis=1)

    def state(self, n: int) -> SummaryState:
        return SummaryState(self.G[n].copy(), self.w[n].copy(), self.layout, float(self.times[n]))

    @property
    def final(self) -> SummaryState:
        return self.state(len(self.times) - 1)

    def curve(self) -> Curve:
        return Curve(self.times, self.U, self.layout.names)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["solver_step", "t", *self.layout.names])
            for n, (t, row) in enumerate(zip(self.times, self.U)):
                wr.writerow([n, repr(float(t)), *(repr(float(v)) for v in row)])
        return path


def _project(u0: SummaryState, vec: np.ndarray, t: float):
    """Clip the eigenvalues of G at zero, then restore the constant blocks exactly."""
    s = u0.with_vector(vec, t=t)
    Gc, removed = clip_psd(s.G, strict=False)
    free = np.zeros_like(Gc, dtype=bool)
    for i, j in u0.layout.pairs:
        free[i, j] = free[j, i] = True
    G = np.where(free, Gc, u0.G)
    return SummaryState(G, s.w, u0.layout, t), removed


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def solve_ode(u0: SummaryState, model: ProjectiveModel, weights, labels, c_lr: float, T: float,
              solver: str = "rk4", dt: float = 0.01, cfg: DriftEvaluatorConfig = DriftEvaluatorConfig(),
              rtol: float = 1e-8, atol: float = 1e-10, max_steps: int = 10**6) -> OdeSolution:
    """Integrate ``du = h(u) dt`` from ``u0`` on ``[0, T]``.

    ``rk4`` uses a fixed step ``dt`` (the last step is shortened to land on
    ``T``); ``rk45`` is adaptive Dormand-Prince with the given tolerances.
    After every accepted step the Gram matrix is projected back onto the PSD
    cone with its constant blocks restored. A state with sup-norm above 1e6
    stops the solve with ``blew_up`` set.
    """
    if solver not in ("rk4", "rk45"):
        raise ValueError(f"unknown solver {solver!r}")

    def f(state_vec, t):
        s = u0.with_vector(state_vec, t=t)
        return drift_h(s, model, weights, labels, c_lr, cfg, strict=False)

    t = 0.0
    cur = u0.copy()
    times, Gs, ws = [0.0], [cur.G.copy()], [cur.w.copy()]
    max_clip = 0.0
    blew = False
    n = 0
    rejected = 0
    h = dt if solver == "rk4" else min(dt, T) if T > 0 else dt
    while t < T - 1e-12 * max(1.0, T) and n < max_steps:
        y = cur.vector()
        step = min(h, T - t)
        if solver == "rk4":
            k1 = f(y, t)
            k2 = f(y + 0.5 * step * k1, t + 0.5 * step)
            k3 = f(y + 0.5 * step * k2, t + 0.5 * step)
            k4 = f(y + step * k3, t + step)
            y_new = y + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            ks = []
            for i in range(7):
                yi = y + step * sum(a * k for a, k in zip(_DP_A[i], ks)) if i else y
                ks.append(f(yi, t + _DP_C[i] * step))
            K = np.array(ks)
            y_new = y + step * (_DP_B5 @ K)
            err_vec = step * ((_DP_B5 - _DP_B4) @ K)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.sqrt(np.mean((err_vec / scale) ** 2))) if err_vec.size else 0.0
            if err > 1.0:
                h = step * max(0.2, 0.9 * err ** (-0.2))
                rejected += 1
                continue
            h = step * min(5.0, 0.9 * err ** (-0.2)) if err > 0 else step * 5.0
        t = t + step
        n += 1
        cur, removed = _project(u0, y_new, t)
        max_clip = max(max_clip, removed)
        times.append(t)
        Gs.append(cur.G.copy())
        ws.append(cur.w.copy())
        if not np.all(np.isfinite(y_new)) or np.max(np.abs(y_new), initial=0.0) > BLOW_UP_NORM:
            blew = True
            break
    return OdeSolution(u0.layout, np.array(times), np.array(Gs), np.array(ws).reshape(len(times), -1),
                       solver, n, max_clip, blew, rejected)


@dataclass(frozen=True)
class Deviation:
    sup: float
    per_coordinate: np.ndarray
    names: tuple[str, ...]


def compare_trajectories(a: Curve, b: Curve, T: float, n_grid: int = 1000) -> Deviation:
    """Sup over a uniform grid on ``[0, T]`` of the coordinate-wise absolute difference."""
    if tuple(a.names) != tuple(b.names):
        raise ValueError("curves have different coordinate layouts")
    for c in (a, b):
        if c.times[0] > 1e-12 or c.times[-1] < T * (1 - 1e-12):
            raise ValueError("curve does not cover [0, T]")
    grid = np.linspace(0.0, T, n_grid)
    diff = np.abs(a.at(grid) - b.at(grid))
    per = diff.max(axis=0) if diff.size else np.zeros(0)
    return Deviation(float(per.max(initial=0.0)), per, tuple(a.names))
