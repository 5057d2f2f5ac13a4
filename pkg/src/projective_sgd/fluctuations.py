"""Fixed points of the limit ODE, its linearization, the volatility matrix and
Euler-Maruyama simulation of the Ornstein-Uhlenbeck limit around a fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DriftEvaluatorConfig, drift_h
from .models import ProjectiveModel
from .numerics import NotPsdError, clip_psd, cholesky_psd, gauss_hermite_grid, active_columns, psd_sqrt
from .seeding import stream
from .summary import SummaryLayout, SummaryState, rescale


class FixedPointError(RuntimeError):
    """Raised by callers that require a converged fixed point."""


@dataclass
class FixedPoint:
    u_star: SummaryState
    residual: float  # sup-norm of h over all coordinates
    residual_free: float  # sup-norm of h over the coordinates that were solved for
    converged: bool
    iterations: int
    method: str
    pinned: tuple[int, ...] = ()
    stability: np.ndarray | None = None
    message: str = ""


def slice_coordinates(model: ProjectiveModel, layout: SummaryLayout) -> tuple[int, ...]:
    """Layout indices of the coordinates a model pins to zero on its symmetry slice."""
    return tuple(sorted(layout.index(i, j) for i, j in model.symmetry_slice))


def _h(u, vec, model, weights, labels, c_lr, cfg):
    return drift_h(u.with_vector(vec), model, weights, labels, c_lr, cfg, strict=False)


def find_fixed_point(u_guess: SummaryState, model: ProjectiveModel, weights, labels, c_lr: float,
                     cfg: DriftEvaluatorConfig = DriftEvaluatorConfig(), method: str = "newton",
                     pinned="slice", tol: float = 1e-10, max_iter: int = 200, fd_step: float = 1e-7,
                     dt: float = 0.05, max_time: float = 1e4, blow_up: float = 1e6) -> FixedPoint:
    """Zero of the drift, optionally restricted to a slice.

    ``pinned`` lists layout coordinates held at zero (``'slice'`` uses the
    model's symmetry slice, ``()`` solves for everything). ``method='newton'``
    runs damped Newton with a finite-difference Jacobian; ``'integrate'``
    follows the flow restricted to the slice with RK4 until the free part of
    the drift drops below ``tol``.
    """
    layout = u_guess.layout
    if pinned == "slice":
        pinned = slice_coordinates(model, layout)
    pinned = tuple(sorted(pinned))
    free = np.array([i for i in range(layout.size) if i not in pinned], dtype=int)
    x = u_guess.vector()
    x[list(pinned)] = 0.0

    def F(xv):
        return _h(u_guess, xv, model, weights, labels, c_lr, cfg)

    def full(xf):
        xv = x.copy()
        xv[free] = xf
        return xv

    it = 0
    msg = ""
    xf = x[free].copy()
    if method == "newton":
        fx = F(full(xf))[free]
        best = np.max(np.abs(fx), initial=0.0)
        while best > tol and it < max_iter:
            it += 1
            J = np.empty((len(free), len(free)))
            for k in range(len(free)):
                h = fd_step * max(1.0, abs(xf[k]))
                e = np.zeros(len(free))
                e[k] = h
                J[:, k] = (F(full(xf + e))[free] - F(full(xf - e))[free]) / (2 * h)
            try:
                stepv = np.linalg.solve(J, -fx)
            except np.linalg.LinAlgError:
                stepv = np.linalg.lstsq(J, -fx, rcond=None)[0]
            alpha = 1.0
            improved = False
            for _ in range(40):
                cand = xf + alpha * stepv
                try:
                    fc = F(full(cand))[free]
                except NotPsdError:
                    fc = None
                if fc is not None and np.all(np.isfinite(fc)) and np.max(np.abs(fc), initial=0.0) < best:
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                msg = "line search failed"
                break
            xf, fx = cand, fc
            best = np.max(np.abs(fx), initial=0.0)
            if np.max(np.abs(xf), initial=0.0) > blow_up:
                msg = "iterates diverged"
                break
    elif method == "integrate":
        t = 0.0
        fx = F(full(xf))[free]
        while np.max(np.abs(fx), initial=0.0) > tol and t < max_time:
            it += 1
            k1 = fx
            try:
                k2 = F(full(xf + 0.5 * dt * k1))[free]
                k3 = F(full(xf + 0.5 * dt * k2))[free]
                k4 = F(full(xf + dt * k3))[free]
            except NotPsdError:
                msg = "flow left every bounded region"
                break
            xf = xf + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += dt
            if not np.all(np.isfinite(xf)) or np.max(np.abs(xf), initial=0.0) > blow_up:
                msg = "flow left every bounded region"
                break
            fx = F(full(xf))[free]
        if t >= max_time:
            msg = "time budget exhausted"
    else:
        raise ValueError(f"unknown method {method!r}")

    xv = full(xf)
    u_star = u_guess.with_vector(xv)
    try:
        hv = F(xv) if np.all(np.isfinite(xv)) else None
    except NotPsdError:
        hv = None
    if hv is not None:
        res, res_free = float(np.max(np.abs(hv), initial=0.0)), float(np.max(np.abs(hv[free]), initial=0.0))
    else:
        res = res_free = math.inf
    converged = res_free <= tol and not msg
    if not converged and not msg:
        msg = f"no convergence after {it} iterations"
    return FixedPoint(u_star, res, res_free, converged, it, method, pinned, message=msg)


# ------------------------------------------------------------------ linearization


def _coordinate_scales(u: SummaryState) -> np.ndarray:
    G = u.G
    sc = [math.sqrt(max(G[i, i], 0.0) * max(G[j, j], 0.0)) for i, j in u.layout.pairs]
    sc = np.array(sc + [0.0] * u.layout.k2)
    return np.maximum(sc, np.abs(u.vector()))


def jacobian_h(u_star: SummaryState, model: ProjectiveModel, weights, labels, c_lr: float,
               cfg: DriftEvaluatorConfig = DriftEvaluatorConfig(), fd_step: float = 1e-4,
               floor: float = 1e-6) -> np.ndarray:
    """Finite-difference Jacobian of the drift over all layout coordinates.

    Steps are ``max(fd_step * scale, floor)`` where the scale of ``G[i, j]``
    is ``sqrt(G[i, i] G[j, j])`` (or ``|u|`` when larger). A perturbation that
    leaves the PSD cone falls back to a one-sided difference on the valid side;
    if neither side is valid the drift is evaluated on the projected matrix.
    """
    base = u_star.vector()
    q = base.size
    steps = np.maximum(fd_step * _coordinate_scales(u_star), floor)
    J = np.empty((q, q))

    def ev(vec, strict):
        return drift_h(u_star.with_vector(vec), model, weights, labels, c_lr, cfg, strict=strict)

    f0 = None
    for k in range(q):
        e = np.zeros(q)
        e[k] = steps[k]
        vals = {}
        for sgn in (1, -1):
            try:
                vals[sgn] = ev(base + sgn * e, True)
            except NotPsdError:
                pass
        if len(vals) == 2:
            J[:, k] = (vals[1] - vals[-1]) / (2 * steps[k])
            continue
        if f0 is None:
            f0 = ev(base, False)
        if 1 in vals:
            J[:, k] = (vals[1] - f0) / steps[k]
        elif -1 in vals:
            J[:, k] = (f0 - vals[-1]) / steps[k]
        else:
            J[:, k] = (ev(base + e, False) - ev(base - e, False)) / (2 * steps[k])
    return J


def stability(J: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvals(J)
    return ev[np.argsort(-ev.real)]


# ------------------------------------------------------------------ volatility


@dataclass
class Volatility:
    sigma: np.ndarray
    removed_mass: float
    method: str
    n_samples: int


def _fluctuation_samples(model, layout, z, g1, g2, c_lr, second_order):
    pairs = layout.pairs
    S = np.empty((z.shape[0], layout.size))
    k1 = model.k1
    for col, (b, c) in enumerate(pairs):
        if c < k1:
            S[:, col] = z[:, c] * g1[:, b] + z[:, b] * g1[:, c]
            if second_order:
                S[:, col] -= c_lr * g1[:, b] * g1[:, c]
        else:
            S[:, col] = z[:, c] * g1[:, b]
    S[:, len(pairs):] = g2
    return S


def volatility_sigma(u_star: SummaryState, model: ProjectiveModel, weights, labels, c_lr: float,
                     n_samples: int = 10**6, seed: int = 0, method: str = "monte_carlo", order: int = 12,
                     second_order: bool = True) -> Volatility:
    """``c_lr`` times the covariance of the per-step fluctuation variables ``S``.

    ``S`` is ``Z_c g_b`` for trained-other entries, ``Z_c g_b + Z_b g_c`` for
    trained-trained entries and ``g2_b`` for ``w_b``, with the class drawn
    from the class weights. For trained-trained entries the squared-step term
    of the update fluctuates at the same order, so ``second_order=True``
    (default) subtracts ``c_lr g_b g_c``; ``False`` keeps only the
    first-order part. The result is symmetrized and projected onto the PSD
    cone.
    """
    layout = u_star.layout
    Gc, _ = clip_psd(u_star.G, strict=False)
    L = cholesky_psd(Gc)
    kt = model.k_theta
    weights = np.asarray(weights, dtype=float)
    if method == "gauss_hermite":
        cols = active_columns(L)
        grid = gauss_hermite_grid(len(cols), order)
        offsets, wts = grid.nodes @ L[:, cols].T, grid.weights
    elif method == "monte_carlo":
        xi = stream(seed, "volatility").standard_normal((n_samples, layout.r))
        offsets, wts = xi @ L.T, np.full(n_samples, 1.0 / n_samples)
    else:
        raise ValueError(f"unknown method {method!r}")
    n = offsets.shape[0]
    W = np.broadcast_to(u_star.w, (n, model.k2))
    m1 = np.zeros(layout.size)
    m2 = np.zeros((layout.size, layout.size))
    for a, pa in enumerate(weights):
        if pa == 0.0:
            continue
        z = offsets + Gc[:, layout.mean_column(a)]
        y = np.full(n, int(labels[a]), dtype=np.intp)
        g1 = model.grad1(z[:, :kt], W, y)
        g2 = model.eval_grad2(z[:, :kt], W, y)
        S = _fluctuation_samples(model, layout, z, g1, g2, c_lr, second_order)
        m1 += pa * (wts @ S)
        m2 += pa * (S.T @ (S * wts[:, None]))
    cov = m2 - np.outer(m1, m1)
    sigma, removed = clip_psd(c_lr * cov, strict=False)
    return Volatility(sigma, removed, method, n)


# ------------------------------------------------------------------ SDE


@dataclass
class SdeSpec:
    """Linear SDE ``du = J u dt + sigma_sqrt dB`` for rescaled coordinates ``names``."""

    jacobian: np.ndarray
    sigma: np.ndarray
    names: tuple[str, ...]
    sigma_sqrt: np.ndarray | None = None
    u_star: np.ndarray | None = None  # fixed-point values of the same coordinates

    def __post_init__(self):
        self.jacobian = np.atleast_2d(np.asarray(self.jacobian, dtype=float))
        sig = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        self.sigma = 0.5 * (sig + sig.T)
        self.names = tuple(self.names)
        q = len(self.names)
        if self.jacobian.shape != (q, q) or self.sigma.shape != (q, q):
            raise ValueError(f"jacobian and sigma must be {q} x {q}")
        if self.sigma_sqrt is None:
            self.sigma_sqrt = psd_sqrt(self.sigma)

    @property
    def size(self) -> int:
        return len(self.names)

    def restrict(self, idx) -> "SdeSpec":
        """Sub-system on the coordinates ``idx`` (drops couplings to the others)."""
        idx = list(idx)
        ix = np.ix_(idx, idx)
        star = None if self.u_star is None else np.asarray(self.u_star)[idx]
        return SdeSpec(self.jacobian[ix], self.sigma[ix], tuple(self.names[i] for i in idx), None, star)

    def to_text(self) -> str:
        lines = ["# linear SDE for sqrt(d) (u - u_star)", "coordinates: " + " ".join(self.names)]
        if self.u_star is not None:
            lines.append("u_star: " + " ".join(repr(float(v)) for v in self.u_star))
        for title, M in (("jacobian", self.jacobian), ("sigma", self.sigma), ("sigma_sqrt", self.sigma_sqrt)):
            lines.append(f"{title}: {M.shape[0]} x {M.shape[1]} row-major")
            for row in M:
                lines.append("  " + " ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "SdeSpec":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        names = tuple(lines[0].split(":", 1)[1].split())
        pos = 1
        star = None
        if lines[pos].startswith("u_star:"):
            star = np.array([float(v) for v in lines[pos].split(":", 1)[1].split()])
            pos += 1
        mats = {}
        while pos < len(lines):
            title, dims = lines[pos].split(":", 1)
            nrow = int(dims.split("x")[0])
            mats[title] = np.array([[float(v) for v in lines[pos + 1 + i].split()] for i in range(nrow)])
            pos += 1 + nrow
        return SdeSpec(mats["jacobian"], mats["sigma"], names, mats["sigma_sqrt"], star)


def build_sde_spec(u_star: SummaryState, model: ProjectiveModel, weights, labels, c_lr: float,
                   cfg: DriftEvaluatorConfig = DriftEvaluatorConfig(), fd_step: float = 1e-4,
                   vol_method: str = "gauss_hermite", n_samples: int = 10**6, seed: int = 0,
                   coordinates=None) -> SdeSpec:
    """Jacobian and volatility at ``u_star``, optionally restricted to ``coordinates``."""
    J = jacobian_h(u_star, model, weights, labels, c_lr, cfg, fd_step)
    vol = volatility_sigma(u_star, model, weights, labels, c_lr, n_samples, seed, vol_method)
    spec = SdeSpec(J, vol.sigma, u_star.layout.names, None, u_star.vector())
    return spec if coordinates is None else spec.restrict(coordinates)


@dataclass
class SdeEnsemble:
    times: np.ndarray
    paths: np.ndarray  # (n_times, n_paths, q)
    names: tuple[str, ...]

    def variance(self) -> np.ndarray:
        return self.paths.var(axis=1)


def simulate_sde(u_tilde_0, spec: SdeSpec, T: float, dt: float, n_paths: int, seed: int,
                 record_every: int = 1, chunk: int = 256) -> SdeEnsemble:
    """Euler-Maruyama ensemble; path ``i`` draws from its own stream.

    ``u_tilde_0`` is one start vector for all paths or an ``(n_paths, q)`` array.
    """
    if dt > 1e-3 * T * (1 + 1e-12):
        raise ValueError("dt must not exceed 1e-3 * T")
    q = spec.size
    u = np.array(np.broadcast_to(np.asarray(u_tilde_0, dtype=float), (n_paths, q)))
    n_steps = int(round(T / dt))
    rngs = [stream(seed, "sde", i) for i in range(n_paths)]
    A = spec.jacobian.T * dt
    B = spec.sigma_sqrt.T * math.sqrt(dt)
    times, rec = [0.0], [u.copy()]
    step = 0
    while step < n_steps:
        cs = min(chunk, n_steps - step)
        xi = np.stack([g.standard_normal((cs, q)) for g in rngs], axis=1)  # (cs, n_paths, q)
        for s in range(cs):
            u = u + u @ A + xi[s] @ B
            step += 1
            if step % record_every == 0 or step == n_steps:
                times.append(step * dt)
                rec.append(u.copy())
    return SdeEnsemble(np.array(times), np.array(rec), spec.names)


def empirical_rescaled(traj, u_star: SummaryState, d: int):
    """``(times, u_tilde)`` with ``u_tilde = sqrt(d) (u - u_star)`` per record."""
    rows = [rescale(s, u_star, d).u_tilde for s in traj.states()]
    return traj.times.copy(), np.array(rows)


def ou_variance(lam: float, sigma2: float, t) -> np.ndarray:
    """Variance at time ``t`` of the scalar OU process ``du = lam u dt + sigma dB``, ``u(0)=0``."""
    t = np.asarray(t, dtype=float)
    if lam == 0:
        return sigma2 * t
    return sigma2 * np.expm1(2 * lam * t) / (2 * lam)
