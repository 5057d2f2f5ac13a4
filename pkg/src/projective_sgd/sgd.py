"""Online SGD with summary recording, exit diagnostics and a one-step drift oracle.

Replicas are advanced together in a batch, but every replica draws from its
own streams (see :mod:`projective_sgd.seeding`) and every arithmetic step is
row-wise, so a replica's trajectory is bit-identical whether it runs alone or
inside any batch.
"""

from __future__ import annotations

import csv
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mixture import MixtureSpec
from .models import NumericalBlowUp, ParameterState, ProjectiveModel
from .seeding import stream
from .summary import SummaryLayout, SummaryState, zeta_eff

CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class SgdConfig:
    c_lr: float = 1.0
    total_time: float = 5.0
    record_stride: int | None = None  # default: max(1, d // 100)
    r_exit: float | None = None
    zeta_exit: float | None = None
    master_seed: int = 0
    snapshot_times: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.c_lr > 0:
            raise ValueError("c_lr must be positive")
        if self.total_time < 0:
            raise ValueError("total_time must be non-negative")
        if self.record_stride is not None and self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")

    def step_size(self, d: int) -> float:
        return self.c_lr / d

    def n_steps(self, d: int) -> int:
        x = self.total_time * d / self.c_lr
        return int(math.ceil(x - 1e-9 * max(1.0, x)))

    def stride(self, d: int) -> int:
        return self.record_stride if self.record_stride is not None else max(1, d // 100)

    def snapshot_steps(self, d: int) -> dict[int, float]:
        return {int(round(t * d / self.c_lr)): float(t) for t in self.snapshot_times}


@dataclass
class Curve:
    """A piecewise-linear vector-valued function of time."""

    times: np.ndarray
    values: np.ndarray  # (n_times, q)
    names: tuple[str, ...]

    def at(self, grid: np.ndarray) -> np.ndarray:
        return np.stack([np.interp(grid, self.times, self.values[:, c]) for c in range(self.values.shape[1])],
                        axis=1)


@dataclass
class Trajectory:
    layout: SummaryLayout
    d: int
    c_lr: float
    steps: np.ndarray
    G: np.ndarray  # (n_records, r, r)
    w: np.ndarray  # (n_records, k2)
    linf: np.ndarray
    l3cubed: np.ndarray
    exit_step_R: int | None = None
    exit_step_deloc: int | None = None
    blew_up: bool = False
    blow_up_step: int | None = None
    final_state: ParameterState | None = None
    snapshots: dict[float, ParameterState] = field(default_factory=dict)
    replica: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.steps * (self.c_lr / self.d)

    @property
    def zeta_eff(self) -> np.ndarray:
        return zeta_eff(self.linf, self.d)

    @property
    def U(self) -> np.ndarray:
        """Flattened summary coordinates per record, canonical layout order."""
        pairs = self.layout.pairs
        rows = np.array([i for i, _ in pairs], dtype=int)
        cols = np.array([j for _, j in pairs], dtype=int)
        return np.concatenate([self.G[:, rows, cols], self.w], axis=1)

    def state(self, n: int) -> SummaryState:
        return SummaryState(self.G[n].copy(), self.w[n].copy(), self.layout, float(self.times[n]))

    def states(self) -> list[SummaryState]:
        return [self.state(n) for n in range(len(self.steps))]

    def curve(self) -> Curve:
        return Curve(self.times, self.U, self.layout.names)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "t", *self.layout.names, "linf", "l3cubed", "zeta_eff"])
            U, times, z = self.U, self.times, self.zeta_eff
            for n in range(len(self.steps)):
                wr.writerow([int(self.steps[n]), repr(float(times[n])), *(repr(float(v)) for v in U[n]),
                             repr(float(self.linf[n])), repr(float(self.l3cubed[n])), repr(float(z[n]))])
        return path


def mean_curve(trajectories: list[Trajectory]) -> Curve:
    """Replica average of the summary curves (records must share step indices)."""
    base = trajectories[0]
    n = min(len(t.steps) for t in trajectories)
    for t in trajectories:
        if not np.array_equal(t.steps[:n], base.steps[:n]):
            raise ValueError("replicas were recorded at different steps")
    vals = np.mean([t.U[:n] for t in trajectories], axis=0)
    return Curve(base.times[:n], vals, base.layout.names)


# ------------------------------------------------------------------ engine


class _Recorder:
    def __init__(self, R, kG, k2):
        self.steps = [[] for _ in range(R)]
        self.G = [[] for _ in range(R)]
        self.w = [[] for _ in range(R)]
        self.linf = [[] for _ in range(R)]
        self.l3 = [[] for _ in range(R)]

    def add(self, rows, step, V, w, k1):
        G = np.matmul(V, V.transpose(0, 2, 1))
        G = 0.5 * (G + G.transpose(0, 2, 1))
        a = np.abs(V[:, :k1, :])
        linf = a.max(axis=(1, 2)) if k1 else np.zeros(V.shape[0])
        l3 = (a**3).sum(axis=2).max(axis=1) if k1 else np.zeros(V.shape[0])
        for r in rows:
            self.steps[r].append(step)
            self.G[r].append(G[r])
            self.w[r].append(w[r].copy())
            self.linf[r].append(linf[r])
            self.l3[r].append(l3[r])
        return linf


def _batch(model, spec, inits, cfg, replicas, keep_final):
    d = spec.d
    R = len(inits)
    k1, kt, k2 = model.k1, model.k_theta, model.k2
    delta = cfg.step_size(d)
    n_steps = cfg.n_steps(d)
    stride = cfg.stride(d)
    snap_steps = cfg.snapshot_steps(d)
    layout = SummaryLayout.for_model(model, spec.k)

    theta = np.stack([np.asarray(s.theta, dtype=float).T.copy() for s in inits])  # (R, kt, d)
    if theta.shape[1:] != (kt, d):
        raise ValueError(f"init theta must be {d} x {kt}")
    w = np.stack([np.asarray(s.w, dtype=float).reshape(k2) for s in inits]) if k2 else np.zeros((R, 0))
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(w))):
        raise ValueError("init must be finite")
    means = spec.means
    mT = np.broadcast_to(means[None, :, :], (R,) + means.shape)

    noise_rngs = [stream(cfg.master_seed, "noise", r) for r in replicas]
    label_rngs = [stream(cfg.master_seed, "labels", r) for r in replicas]
    active = np.ones(R, dtype=bool)
    exit_R = [None] * R
    exit_deloc = [None] * R
    blow = [None] * R
    snaps = [dict() for _ in range(R)]

    rec = _Recorder(R, layout.r, k2)

    def V_of(th):
        return np.concatenate([th, mT], axis=1)

    def record(rows, step):
        linf = rec.add(rows, step, V_of(theta), w, k1)
        return linf

    def sqnorm():
        return np.einsum("rkd,rkd->r", theta[:, :k1], theta[:, :k1]) + np.einsum("rk,rk->r", w, w)

    record(range(R), 0)
    if 0 in snap_steps:
        for r in range(R):
            snaps[r][snap_steps[0]] = ParameterState(theta[r].T.copy(), w[r].copy())
    if cfg.r_exit is not None:
        over = sqnorm() > cfg.r_exit
        for r in np.flatnonzero(over):
            exit_R[r] = 0
            active[r] = False

    chunk = max(1, min(1024, CHUNK_ELEMENTS // max(1, R * d)))
    decay_full = 1.0 - 2.0 * delta * model.lam
    step = 0
    while step < n_steps and active.any():
        cs = min(chunk, n_steps - step)
        X = np.empty((R, cs, d))
        J = np.zeros((R, cs), dtype=np.intp)
        for r in range(R):
            if not active[r]:
                X[r] = 0.0
                continue
            J[r] = spec.draw_classes(cs, label_rngs[r])
            X[r] = spec.noise.ppf(noise_rngs[r].random((cs, d)))
            X[r] += means[J[r]]
        Y = spec.labels[J]
        for s in range(cs):
            step += 1
            x = X[:, s, :]
            z = np.matmul(theta, x[:, :, None])[:, :, 0]
            g1 = model.grad1(z, w, Y[:, s])
            g2 = model.eval_grad2(z, w, Y[:, s]) if k2 else None
            bad = ~np.all(np.isfinite(g1), axis=1)
            if k2:
                bad |= ~np.all(np.isfinite(g2), axis=1)
            bad &= active
            if bad.any():
                for r in np.flatnonzero(bad):
                    blow[r] = step
                    active[r] = False
            if active.all():
                dvec = delta
                decay = decay_full
            else:
                dvec = np.where(active, delta, 0.0)[:, None]
                decay = (1.0 - 2.0 * dvec * model.lam)[:, :, None]
                g1 = np.where(active[:, None], g1, 0.0)
                if k2:
                    g2 = np.where(active[:, None], g2, 0.0)
            if model.lam != 0.0:
                theta[:, :k1, :] *= decay
            theta[:, :k1, :] -= (dvec * g1)[:, :, None] * x[:, None, :]
            if k2:
                w -= dvec * g2
            exited = []
            if cfg.r_exit is not None:
                over = (sqnorm() > cfg.r_exit) & active
                for r in np.flatnonzero(over):
                    exit_R[r] = step
                    exited.append(r)
            is_record = step % stride == 0 or step == n_steps
            rows = [r for r in range(R) if active[r]] if is_record else list(exited)
            if rows:
                linf = record(rows, step)
                if cfg.zeta_exit is not None and is_record:
                    ze = zeta_eff(linf, d)
                    for r in rows:
                        if ze[r] > cfg.zeta_exit and exit_deloc[r] is None:
                            exit_deloc[r] = step
                            exited.append(r)
            for r in exited:
                active[r] = False
            if step in snap_steps:
                for r in np.flatnonzero(active):
                    snaps[r][snap_steps[step]] = ParameterState(theta[r].T.copy(), w[r].copy())
            if not active.any():
                break

    out = []
    for r in range(R):
        out.append(Trajectory(
            layout=layout, d=d, c_lr=cfg.c_lr,
            steps=np.array(rec.steps[r], dtype=np.int64),
            G=np.array(rec.G[r]), w=np.array(rec.w[r]).reshape(len(rec.steps[r]), k2),
            linf=np.array(rec.linf[r]), l3cubed=np.array(rec.l3[r]),
            exit_step_R=exit_R[r], exit_step_deloc=exit_deloc[r],
            blew_up=blow[r] is not None, blow_up_step=blow[r],
            final_state=ParameterState(theta[r].T.copy(), w[r].copy()) if keep_final else None,
            snapshots=snaps[r], replica=int(replicas[r]),
        ))
    return out


def run_replicas(model: ProjectiveModel, spec: MixtureSpec, inits, cfg: SgdConfig, replicas=None,
                 batch_size: int | None = None, n_jobs: int = 1, keep_final: bool = True) -> list[Trajectory]:
    """Run independent SGD replicas; results are ordered by replica index.

    ``inits`` is a list of :class:`ParameterState` (one per replica) or a
    callable ``replica -> ParameterState``.
    """
    if replicas is None:
        replicas = list(range(len(inits)))
    replicas = [int(r) for r in replicas]
    if callable(inits):
        inits = [inits(r) for r in replicas]
    if len(inits) != len(replicas):
        raise ValueError("one init per replica is required")
    batch_size = batch_size or len(replicas)
    groups = [list(range(i, min(i + batch_size, len(replicas)))) for i in range(0, len(replicas), batch_size)]
    args = [(model, spec, [inits[i] for i in g], cfg, [replicas[i] for i in g], keep_final) for g in groups]
    if n_jobs > 1 and len(groups) > 1:
        # models hold closures and do not pickle; forked workers inherit the arguments instead
        global _FORKED_ARGS
        _FORKED_ARGS = args
        try:
            with ProcessPoolExecutor(max_workers=n_jobs, mp_context=multiprocessing.get_context("fork")) as ex:
                parts = list(ex.map(_forked_batch, range(len(args))))
        finally:
            _FORKED_ARGS = []
    else:
        parts = [_batch(*a) for a in args]
    return [t for part in parts for t in part]


_FORKED_ARGS: list = []


def _forked_batch(i: int):
    return _batch(*_FORKED_ARGS[i])


def run_sgd(model: ProjectiveModel, spec: MixtureSpec, init: ParameterState, cfg: SgdConfig,
            replica: int = 0) -> Trajectory:
    """Single replica of online SGD; see :func:`run_replicas`."""
    return run_replicas(model, spec, [init], cfg, [replica])[0]


def gaussian_init(model: ProjectiveModel, d: int, frozen: np.ndarray | None, seed: int, replica: int,
                  w0: np.ndarray | None = None, scale: float = 1.0) -> ParameterState:
    """``theta ~ N(0, scale^2 I/d)`` on trained columns, frozen columns from ``frozen``."""
    rng = stream(seed, "init", replica)
    th = np.zeros((d, model.k_theta))
    th[:, : model.k1] = rng.standard_normal((d, model.k1)) * (scale / math.sqrt(d))
    if model.k_frozen:
        th[:, model.k1:] = np.asarray(frozen, dtype=float).reshape(d, model.k_frozen)
    w = np.zeros(model.k2) if w0 is None else np.asarray(w0, dtype=float)
    return ParameterState(th, w)


# ------------------------------------------------------------------ Gaussian summary chain


def _chain_columns(G: np.ndarray, layout: SummaryLayout):
    """Trained/frozen columns plus a linearly independent subset of the mean columns.

    Returns ``(keep, coef)`` where ``coef[a]`` expresses mean ``a`` in the
    kept columns, so ``V_keep^T mu_a = G[keep][:, keep] @ coef[a]``.
    """
    base = [c for c in range(layout.k1 + layout.k_frozen)]
    basis: list[int] = []
    scale = max(float(np.trace(G)), 1e-300)
    for a in range(layout.k_means):
        c = layout.mean_column(a)
        trial = basis + [c]
        if np.linalg.eigvalsh(G[np.ix_(trial, trial)]).min() > 1e-10 * scale:
            basis.append(c)
    keep = np.array(base + basis, dtype=int)
    coef = np.zeros((layout.k_means, len(keep)))
    nb = len(base)
    if basis:
        Gb = G[np.ix_(basis, basis)]
        for a in range(layout.k_means):
            coef[a, nb:] = np.linalg.solve(Gb, G[basis, layout.mean_column(a)])
    return keep, coef


def run_summary_chain(model: ProjectiveModel, spec: MixtureSpec, starts: list[SummaryState], cfg: SgdConfig,
                      replicas=None, chunk: int = 2048, blow_up: float = 1e6) -> list[Trajectory]:
    """SGD with Gaussian noise simulated through the summary statistics alone.

    For Gaussian noise the pair ``(V^T X, ||X||^2)`` given the class has an
    exact law: ``V^T X ~ N(G[:, mean], G)`` and ``||X||^2 = z^T G^{-1} z``
    plus an independent chi-square with ``d - rank`` degrees of freedom. The
    one-step update of ``u`` depends on ``X`` only through that pair, so this
    chain has the same law as :func:`run_sgd` at ``O(1)`` cost per step.
    Mean columns that are zero or linearly dependent on other means are
    dropped and reconstructed; the trained and frozen columns together with
    the remaining means must have a non-singular Gram matrix.

    A replica whose summary turns non-finite or exceeds ``blow_up`` in
    absolute value is frozen at its last state and flagged ``blew_up``; the
    others continue.
    """
    if spec.noise.kind != "standard_gaussian":
        raise ValueError("the summary chain is exact only for Gaussian noise")
    d = spec.d
    R = len(starts)
    replicas = list(range(R)) if replicas is None else [int(r) for r in replicas]
    layout = starts[0].layout
    k1, kt, k2 = model.k1, model.k_theta, model.k2
    keep, mean_coef = _chain_columns(starts[0].G, layout)
    dropped = np.array([c for c in range(kt, layout.r) if c not in keep], dtype=int)
    rk = len(keep)
    if d <= rk:
        raise ValueError("d must exceed the number of summary columns")
    G = np.stack([s.G[np.ix_(keep, keep)] for s in starts])
    Gfull = np.stack([s.G.copy() for s in starts])
    w = np.stack([s.w.reshape(k2) for s in starts]) if k2 else np.zeros((R, 0))
    delta = cfg.step_size(d)
    n_steps = cfg.n_steps(d)
    stride = cfg.stride(d)
    s_fac = 1.0 - 2.0 * delta * model.lam
    rngs = [stream(cfg.master_seed, "chain", r) for r in replicas]
    lab_rngs = [stream(cfg.master_seed, "labels", r) for r in replicas]

    steps_rec = [0]
    G_rec = [G.copy()]
    w_rec = [w.copy()]
    blow = [None] * R
    alive = np.ones(R, dtype=bool)
    step = 0
    while step < n_steps:
        cs = min(chunk, n_steps - step)
        xi = np.stack([g.standard_normal((cs, rk)) for g in rngs])  # (R, cs, rk)
        chi = np.stack([g.chisquare(d - rk, cs) for g in rngs])  # (R, cs)
        J = np.stack([spec.draw_classes(cs, g) for g in lab_rngs])  # (R, cs)
        for s in range(cs):
            step += 1
            L = np.linalg.cholesky(G)
            mean = np.einsum("rij,rj->ri", G, mean_coef[J[:, s]])
            shift = np.linalg.solve(L, mean[:, :, None])[:, :, 0]
            e = shift + xi[:, s]
            z = mean + np.matmul(L, xi[:, s, :, None])[:, :, 0]
            q = np.einsum("ri,ri->r", e, e) + chi[:, s]
            y = spec.labels[J[:, s]]
            with np.errstate(over="ignore", invalid="ignore"):
                g1 = model.grad1(z[:, :kt], w, y)
                g2 = model.eval_grad2(z[:, :kt], w, y) if k2 else None
            g1 = np.where(alive[:, None], g1, 0.0)
            Gn = G.copy()
            gz = g1[:, :, None] * z[:, None, :]  # (R, k1, rk)
            Gn[:, :k1, :] = s_fac * G[:, :k1, :] - delta * gz
            tt = (s_fac * s_fac) * G[:, :k1, :k1] - delta * s_fac * (gz[:, :, :k1] + gz[:, :, :k1].transpose(0, 2, 1)) \
                + (delta * delta) * q[:, None, None] * (g1[:, :, None] * g1[:, None, :])
            Gn[:, :k1, :k1] = tt
            Gn[:, k1:, :k1] = Gn[:, :k1, k1:].transpose(0, 2, 1)
            wn = w - delta * g2 if k2 else w
            ok = np.all(np.isfinite(Gn.reshape(R, -1)) & (np.abs(Gn.reshape(R, -1)) < blow_up), axis=1)
            if k2:
                ok &= np.all(np.isfinite(wn), axis=1)
            for r in np.flatnonzero(alive & ~ok):
                blow[r] = step
            alive &= ok
            G = np.where(alive[:, None, None], Gn, G)
            w = np.where(alive[:, None], wn, w)
            if step % stride == 0 or step == n_steps:
                steps_rec.append(step)
                G_rec.append(G.copy())
                w_rec.append(w.copy())
    out = []
    G_rec = np.array(G_rec)  # (n_rec, R, rk, rk)
    w_rec = np.array(w_rec)
    steps_arr = np.array(steps_rec, dtype=np.int64)
    for r in range(R):
        n = len(steps_rec) if blow[r] is None else int(np.searchsorted(steps_arr, blow[r]))
        Gs = np.repeat(Gfull[r][None], n, axis=0)
        Gs[np.ix_(np.arange(n), keep, keep)] = G_rec[:n, r]
        for c in dropped:  # a dependent mean column follows from the kept ones
            col = G_rec[:n, r] @ mean_coef[c - kt]
            Gs[:, :k1, c] = col[:, :k1]
            Gs[:, c, :k1] = col[:, :k1]
        out.append(Trajectory(layout=layout, d=d, c_lr=cfg.c_lr, steps=steps_arr[:n].copy(),
                              G=Gs, w=w_rec[:n, r].reshape(n, k2),
                              linf=np.full(n, np.nan), l3cubed=np.full(n, np.nan),
                              blew_up=blow[r] is not None, blow_up_step=blow[r], replica=replicas[r]))
    return out


# ------------------------------------------------------------------ one-step drift oracle


@dataclass
class DriftEstimate:
    """Monte Carlo estimate of the one-step drift ``E[u(Theta_1) - u(Theta_0)] / delta``.

    ``gradient_part`` is the first-order term (the expected change of ``u``
    along the plain loss gradient, regularizer excluded); ``mean`` is the full
    exact finite-``d`` drift.
    """

    layout: SummaryLayout
    mean: np.ndarray
    se: np.ndarray
    gradient_part: np.ndarray
    gradient_se: np.ndarray
    n_samples: int
    sampler: str
    control_variates: bool
    covariance: np.ndarray | None = None  # per-sample covariance of the increments

    def as_dict(self) -> dict:
        return {n: (float(m), float(s)) for n, m, s in zip(self.layout.names, self.mean, self.se)}


class _Moments:
    """Per-block running sums used for jackknife standard errors."""

    def __init__(self, n_blocks, q, p):
        self.n = np.zeros(n_blocks)
        self.sD = np.zeros((n_blocks, q))
        self.sC = np.zeros((n_blocks, p))
        self.sCC = np.zeros((n_blocks, p, p))
        self.sCD = np.zeros((n_blocks, p, q))
        self.sDD = np.zeros((q, q))

    def add(self, b, D, C):
        self.n[b] += D.shape[0]
        self.sD[b] += D.sum(axis=0)
        self.sDD += D.T @ D
        if C is not None:
            self.sC[b] += C.sum(axis=0)
            self.sCC[b] += C.T @ C
            self.sCD[b] += C.T @ D

    @staticmethod
    def _estimate(n, sD, sC, sCC, sCD, use_cv):
        mD = sD / n
        if not use_cv:
            return mD
        mC = sC / n
        Scc = sCC / n - np.outer(mC, mC)
        Scd = sCD / n - np.outer(mC, mD)
        beta = np.linalg.lstsq(Scc, Scd, rcond=1e-12)[0]
        return mD - mC @ beta

    def jackknife(self, use_cv):
        tot = (self.n.sum(), self.sD.sum(0), self.sC.sum(0), self.sCC.sum(0), self.sCD.sum(0))
        est = self._estimate(*tot, use_cv)
        B = len(self.n)
        loo = np.array([self._estimate(tot[0] - self.n[b], tot[1] - self.sD[b], tot[2] - self.sC[b],
                                       tot[3] - self.sCC[b], tot[4] - self.sCD[b], use_cv) for b in range(B)])
        se = np.sqrt((B - 1) / B * np.sum((loo - loo.mean(0)) ** 2, axis=0))
        return est, se

    def covariance(self):
        n = self.n.sum()
        m = self.sD.sum(0) / n
        return self.sDD / n - np.outer(m, m)


def _increments(model, layout, G, w, z, q, y, delta):
    """Per-sample one-step drift and its gradient part for every layout coordinate."""
    k1, kt = model.k1, model.k_theta
    n = z.shape[0]
    W = np.broadcast_to(w, (n, w.shape[0]))
    g1 = model.grad1(z[:, :kt], W, y)
    g2 = model.eval_grad2(z[:, :kt], W, y)
    if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))):
        raise NumericalBlowUp("non-finite loss derivative in the oracle")
    s = 1.0 - 2.0 * delta * model.lam
    pairs = layout.pairs
    D = np.empty((n, layout.size))
    Dg = np.empty((n, layout.size))
    for col, (b, c) in enumerate(pairs):
        if c < k1:
            sym = g1[:, b] * z[:, c] + g1[:, c] * z[:, b]
            D[:, col] = (s * s - 1.0) / delta * G[b, c] - s * sym + delta * g1[:, b] * g1[:, c] * q
            Dg[:, col] = -sym
        else:
            D[:, col] = (s - 1.0) / delta * G[b, c] - g1[:, b] * z[:, c]
            Dg[:, col] = -g1[:, b] * z[:, c]
    npairs = len(pairs)
    D[:, npairs:] = -g2
    Dg[:, npairs:] = -g2
    return D, Dg


def _controls(z, q, layout, exact_mean_z, exact_second, exact_q, d):
    iu = np.triu_indices(z.shape[1])
    zz = (z[:, :, None] * z[:, None, :])[:, iu[0], iu[1]]
    return np.concatenate([z - exact_mean_z, zz - exact_second[iu], ((q - exact_q) / d)[:, None]], axis=1)


def _block_partition(V: np.ndarray, max_blocks: int):
    vals, inverse, counts = np.unique(V, axis=0, return_inverse=True, return_counts=True)
    if len(counts) > max_blocks:
        return None
    return vals, counts


def one_step_drift_oracle(model: ProjectiveModel, spec: MixtureSpec, state: ParameterState, c_lr: float,
                          n_samples: int, seed: int, *, control_variates: bool = False, sampler: str = "auto",
                          n_blocks: int = 100, max_block_partitions: int = 8,
                          paired_noise=None) -> DriftEstimate:
    """Estimate the exact finite-``d`` one-step drift of every summary coordinate.

    Each sample draws a fresh datum, applies one SGD step with
    ``delta = c_lr / d`` and records ``(u(Theta_1) - u(Theta_0)) / delta``. The
    step depends on the datum only through ``z = V^T x`` and ``||x||^2``, which
    is all that is computed. Standard errors come from a blocked jackknife.

    ``sampler='dense'`` draws full noise vectors from uniforms through the
    inverse CDF, so two laws with the same ``seed`` share their random
    numbers. ``sampler='block'`` applies when every column of ``V`` is constant
    on a few coordinate blocks and the law has an exact joint law of
    ``(sum Y, sum Y^2)``; it then costs ``O(1)`` per sample. ``'auto'`` picks
    block when possible.

    With ``control_variates`` the first and second moments of ``z`` and the
    mean of ``||x||^2``, which are known exactly for any standardized law, are
    used as regression controls.

    With ``paired_noise`` the estimate is the drift under the mixture's noise
    minus the drift under ``paired_noise``, both computed from the same
    uniforms and class draws (dense sampler only), so the standard errors are
    those of the paired difference.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    d = spec.d
    delta = c_lr / d
    layout = SummaryLayout.for_model(model, spec.k)
    V = np.concatenate([state.theta, spec.means.T], axis=1)
    G = V.T @ V
    G = 0.5 * (G + G.T)
    w = state.w
    q_dim = layout.size
    mz_cls = V.T @ spec.means.T  # (r, k): exact class-conditional means of z
    p = spec.weights
    exact_mean_z = mz_cls @ p
    exact_second = G + (mz_cls * p) @ mz_cls.T
    exact_q = d + float(p @ np.sum(spec.means**2, axis=1))
    n_controls = layout.r + layout.r * (layout.r + 1) // 2 + 1 if control_variates else 0

    part = None
    if sampler in ("auto", "block") and spec.noise.has_exact_sum_and_square_sum:
        part = _block_partition(V, max_block_partitions)
    if paired_noise is not None:
        if sampler == "block":
            raise ValueError("paired estimates need the dense sampler")
        sampler = "dense"
    if sampler == "block" and part is None:
        raise ValueError("block sampler needs block-constant columns and a law with exact sums")
    use_block = part is not None and sampler != "dense"

    mom = _Moments(n_blocks, q_dim, max(n_controls, 1))
    momg = _Moments(n_blocks, q_dim, 1)
    u_rng = stream(seed, "oracle", 0, 0)
    j_rng = stream(seed, "oracle", 0, 1)
    block_sizes = [n_samples // n_blocks + (1 if b < n_samples % n_blocks else 0) for b in range(n_blocks)]
    sub = max(1, CHUNK_ELEMENTS // (d if not use_block else 64))
    for b, nb in enumerate(block_sizes):
        done = 0
        while done < nb:
            m = min(sub, nb - done)
            done += m
            J = spec.draw_classes(m, j_rng)
            if use_block:
                vals, counts = part
                z = np.zeros((m, layout.r))
                mu_blockvals = vals[:, model.k_theta:]  # (nblk, k) block values of the means
                q = np.zeros(m)
                mu_J = mu_blockvals[:, J].T  # (m, nblk)
                for blk, cnt in enumerate(counts):
                    S, Q = spec.noise.sample_sum_and_square_sum(int(cnt), m, u_rng)
                    z += S[:, None] * vals[blk][None, :]
                    q += Q + 2.0 * mu_J[:, blk] * S + cnt * mu_J[:, blk] ** 2
                z += mz_cls[:, J].T
            else:
                U = u_rng.random((m, d))
                X = spec.noise.ppf(U)
                X += spec.means[J]
                z = X @ V
                q = np.einsum("ij,ij->i", X, X)
            y = spec.labels[J]
            D, Dg = _increments(model, layout, G, w, z, q, y, delta)
            C = _controls(z, q, layout, exact_mean_z, exact_second, exact_q, d) if control_variates else None
            if paired_noise is not None:
                X = paired_noise.ppf(U)
                X += spec.means[J]
                zb = X @ V
                qb = np.einsum("ij,ij->i", X, X)
                Db, Dgb = _increments(model, layout, G, w, zb, qb, y, delta)
                D, Dg = D - Db, Dg - Dgb
                if control_variates:
                    C = C - _controls(zb, qb, layout, exact_mean_z, exact_second, exact_q, d)
            mom.add(b, D, C)
            momg.add(b, Dg, None)
    mean, se = mom.jackknife(control_variates)
    gmean, gse = momg.jackknife(False)
    return DriftEstimate(layout, mean, se, gmean, gse, n_samples, "block" if use_block else "dense",
                         control_variates, mom.covariance())
