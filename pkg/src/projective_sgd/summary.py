"""Summary statistics ``u = (G, w)``, delocalization diagnostics and rescaling.

Columns of ``G`` are ordered trained directions, frozen directions, class
means. The flat coordinate vector ("layout") lists the upper-triangular
entries ``(i, j)``, ``i <= j``, that involve a trained column, row by row,
followed by the entries of ``w``. Every other entry of ``G`` is constant
along SGD and is carried by the state itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mixture import MixtureSpec
from .models import ParameterState, ProjectiveModel


@dataclass(frozen=True)
class SummaryLayout:
    k1: int
    k_frozen: int
    k_means: int
    k2: int

    @property
    def r(self) -> int:
        return self.k1 + self.k_frozen + self.k_means

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, j) for i in range(self.k1) for j in range(i, self.r))

    @property
    def size(self) -> int:
        return len(self.pairs) + self.k2

    def column_label(self, c: int) -> str:
        if c < self.k1:
            return f"t{c}"
        if c < self.k1 + self.k_frozen:
            return f"f{c - self.k1}"
        return f"m{c - self.k1 - self.k_frozen}"

    @property
    def names(self) -> tuple[str, ...]:
        g = [f"G_{self.column_label(i)}_{self.column_label(j)}" for i, j in self.pairs]
        return tuple(g + [f"w_{b}" for b in range(self.k2)])

    def index(self, i: int, j: int) -> int:
        """Flat index of ``G[i, j]`` (order of ``i, j`` irrelevant)."""
        a, b = min(i, j), max(i, j)
        return self.pairs.index((a, b))

    def mean_column(self, a: int) -> int:
        return self.k1 + self.k_frozen + a

    def quadratic_mask(self) -> np.ndarray:
        """True for coordinates that are trained-trained entries."""
        m = [j < self.k1 for _, j in self.pairs]
        return np.array(m + [False] * self.k2, dtype=bool)

    @staticmethod
    def for_model(model: ProjectiveModel, k_means: int) -> "SummaryLayout":
        return SummaryLayout(model.k1, model.k_frozen, k_means, model.k2)


@dataclass
class SummaryState:
    G: np.ndarray
    w: np.ndarray
    layout: SummaryLayout
    t: float = 0.0

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        self.w = np.asarray(self.w, dtype=float).ravel()
        r = self.layout.r
        if self.G.shape != (r, r):
            raise ValueError(f"G: expected shape {(r, r)}, got {self.G.shape}")
        if self.w.shape != (self.layout.k2,):
            raise ValueError(f"w: expected {self.layout.k2} entries, got {self.w.shape[0]}")

    def vector(self) -> np.ndarray:
        g = [self.G[i, j] for i, j in self.layout.pairs]
        return np.concatenate([np.array(g, dtype=float), self.w])

    def with_vector(self, vec: np.ndarray, t: float | None = None) -> "SummaryState":
        """Copy with the free coordinates replaced by ``vec``."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.layout.size,):
            raise ValueError(f"expected a vector of {self.layout.size} coordinates")
        G = self.G.copy()
        npairs = len(self.layout.pairs)
        for n, (i, j) in enumerate(self.layout.pairs):
            G[i, j] = G[j, i] = vec[n]
        return SummaryState(G, vec[npairs:].copy(), self.layout, self.t if t is None else t)

    def copy(self) -> "SummaryState":
        return SummaryState(self.G.copy(), self.w.copy(), self.layout, self.t)


def gram_columns(state: ParameterState, spec: MixtureSpec) -> np.ndarray:
    """``V = [theta, means^T]`` of shape ``(d, k1 + k_frozen + k)``."""
    return np.concatenate([state.theta, spec.means.T], axis=1)


def compute_summary(state: ParameterState, spec: MixtureSpec, model: ProjectiveModel, t: float = 0.0) -> SummaryState:
    if state.theta.shape[1] != model.k_theta:
        raise ValueError(f"theta has {state.theta.shape[1]} columns, model expects {model.k_theta}")
    if state.d != spec.d:
        raise ValueError(f"theta has dimension {state.d}, data has {spec.d}")
    V = gram_columns(state, spec)
    G = V.T @ V
    G = 0.5 * (G + G.T)
    return SummaryState(G, state.w.copy(), SummaryLayout.for_model(model, spec.k), t)


@dataclass(frozen=True)
class DelocReport:
    linf: float
    l3cubed: float
    zeta_eff: float


def deloc_report(theta_trained: np.ndarray) -> DelocReport:
    """Coordinate-delocalization diagnostics of the trained columns."""
    th = np.asarray(theta_trained, dtype=float)
    if th.ndim == 1:
        th = th[:, None]
    d = th.shape[0]
    a = np.abs(th)
    linf = float(a.max()) if a.size else 0.0
    l3 = float(np.max(np.sum(a**3, axis=0))) if a.size else 0.0
    return DelocReport(linf, l3, zeta_eff(linf, d))


def zeta_eff(linf, d: int):
    """``log_d(sqrt(d) * linf)``: the smallest zeta with theta in D_zeta."""
    arr = np.asarray(linf, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(math.sqrt(d) * arr) / math.log(d)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RescaledState:
    """``u_tilde = sqrt(d) (u - u_star)`` over the free coordinates.

    ``residual`` holds the rounding left over by the forward map so that
    :meth:`unrescale` returns the original coordinates bit for bit.
    """

    u_tilde: np.ndarray
    t: float
    d: int
    residual: np.ndarray = field(repr=False, default=None)

    def unrescale(self, u_star: SummaryState) -> SummaryState:
        base = u_star.vector() + self.u_tilde / math.sqrt(self.d)
        if self.residual is not None:
            base = base + self.residual
        return u_star.with_vector(base, t=self.t)


def rescale(u: SummaryState, u_star: SummaryState, d: int) -> RescaledState:
    if u.layout != u_star.layout:
        raise ValueError("layouts differ")
    uv, sv = u.vector(), u_star.vector()
    s = math.sqrt(d)
    ut = s * (uv - sv)
    approx = sv + ut / s
    return RescaledState(ut, u.t, d, uv - approx)
