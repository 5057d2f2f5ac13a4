"""Projective models ``L = psi(theta^T x, w; y) + lam * ||theta||^2`` and a model zoo.

Callbacks are vectorized over a leading batch axis:

* ``psi(z, w, y)`` with ``z`` of shape ``(n, k1 + k_frozen)``, ``w`` of shape
  ``(n, k2)`` and integer labels ``y`` of shape ``(n,)``; returns ``(n,)``.
* ``grad1`` returns ``(n, k1)``: derivatives over the trained coordinates only.
* ``grad2`` returns ``(n, k2)``.

Frozen columns (ground-truth directions of index models) sit after the
trained ones in ``theta``; their derivative is never requested.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import expit, softmax

from .mixture import Datum


class NumericalBlowUp(FloatingPointError):
    """Non-finite loss derivative or parameter."""


Callback = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProjectiveModel:
    name: str
    k1: int
    k_frozen: int
    k2: int
    num_classes: int
    lam: float
    psi: Callback
    grad1: Callback
    grad2: Callback | None = None
    growth_order: int = 1
    # summary coordinates (i, j) of G that vanish on an invariant slice, indices in G
    symmetry_slice: tuple[tuple[int, int], ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.k2 > 0 and self.grad2 is None:
            raise ValueError("models with k2 > 0 need grad2")

    @property
    def k_theta(self) -> int:
        return self.k1 + self.k_frozen

    def eval_grad2(self, z, w, y) -> np.ndarray:
        if self.k2 == 0:
            return np.zeros((np.shape(z)[0], 0))
        return self.grad2(z, w, y)

    def loss(self, theta: np.ndarray, w: np.ndarray, x: np.ndarray, y: int) -> float:
        """Single-sample loss including the regularizer over trained columns."""
        z = (x @ theta)[None, :]
        val = self.psi(z, np.atleast_2d(w), np.array([y]))[0]
        return float(val + self.lam * np.sum(theta[:, : self.k1] ** 2))


@dataclass
class ParameterState:
    """``theta`` is ``d x (k1 + k_frozen)``; the last ``k_frozen`` columns never move."""

    theta: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim == 1:
            self.theta = self.theta[:, None]
        self.w = np.asarray(self.w, dtype=float).ravel()

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "ParameterState":
        return ParameterState(self.theta.copy(), self.w.copy())


def _labels(y) -> np.ndarray:
    return np.asarray(y, dtype=np.intp)


def _cross_entropy(s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``logsumexp(s) - s[y]`` without cancellation when ``y`` is the argmax."""
    rows = np.arange(s.shape[0])
    x = s - s[rows, y][:, None]
    m = x.max(axis=1)
    e = np.exp(x - m[:, None])
    e[rows, y] = 0.0
    rest = e.sum(axis=1)
    with np.errstate(divide="ignore"):
        general = m + np.log(np.exp(-m) + rest)
    return np.where(m == 0.0, np.log1p(rest), general)


# ---------------------------------------------------------------- logistic


def make_logistic(k1: int, lam: float = 0.0) -> ProjectiveModel:
    """Multi-class cross entropy on ``k1`` one-vs-all scores ``z``."""
    if k1 < 2:
        raise ValueError("logistic regression needs at least two classes")

    def psi(z, w, y):
        y = _labels(y)
        return _cross_entropy(z[:, :k1], y)

    def grad1(z, w, y):
        y = _labels(y)
        g = softmax(z[:, :k1], axis=1)
        g[np.arange(g.shape[0]), y] -= 1.0
        return g

    return ProjectiveModel("logistic", k1, 0, 0, k1, lam, psi, grad1, growth_order=1,
                           params={"k1": k1, "lam": lam})


# ---------------------------------------------------------------- two layer

SMOOTH_RELU_EPS = 0.1


def _activation(name: str):
    if name == "tanh":
        return np.tanh, lambda x: 1.0 - np.tanh(x) ** 2
    if name == "sigmoid":
        def dsig(x):
            s = expit(x)
            return s * (1.0 - s)
        return expit, dsig
    if name == "smoothed_relu":
        e2 = SMOOTH_RELU_EPS**2
        return (lambda x: 0.5 * (x + np.sqrt(x * x + e2)),
                lambda x: 0.5 * (1.0 + x / np.sqrt(x * x + e2)))
    raise ValueError(f"unknown activation {name!r}")


def make_two_layer(k1: int, activation: str = "tanh", lam: float = 0.0, num_classes: int = 2) -> ProjectiveModel:
    """Two-layer network with cross-entropy output.

    The ``k1`` first-layer vectors are split evenly across classes; class
    ``c`` owns columns ``c*h .. c*h + h - 1`` (``h = k1 / num_classes``) and
    scores ``s_c = sum_j w_{c,j} g(z_{c,j})``. ``w`` has ``k1`` entries in the
    same order.
    """
    if k1 % num_classes:
        raise ValueError("k1 must be a multiple of num_classes")
    h = k1 // num_classes
    g, dg = _activation(activation)

    def scores(z, w):
        a = g(z[:, :k1])
        s = (w * a).reshape(-1, num_classes, h).sum(axis=2)
        return a, s

    def psi(z, w, y):
        y = _labels(y)
        _, s = scores(z, w)
        return _cross_entropy(s, y)

    def _dscore(z, w, y):
        y = _labels(y)
        a, s = scores(z, w)
        r = softmax(s, axis=1)
        r[np.arange(r.shape[0]), y] -= 1.0
        return a, np.repeat(r, h, axis=1)

    def grad1(z, w, y):
        _, r = _dscore(z, w, y)
        return r * w * dg(z[:, :k1])

    def grad2(z, w, y):
        a, r = _dscore(z, w, y)
        return r * a

    return ProjectiveModel(f"two_layer[{activation}]", k1, 0, k1, num_classes, lam, psi, grad1, grad2,
                           growth_order=1,
                           params={"k1": k1, "activation": activation, "lam": lam, "num_classes": num_classes})


# ---------------------------------------------------------------- index models

HE3_PLUS_HE2 = (0.0, -3.0, 1.0, 1.0)  # x^3 + x^2 - 3x (constant dropped, it cancels)
SQUARE = (0.0, 0.0, 1.0)


def make_multi_index(link="square", k: int = 1, lam: float = 0.0, loss_scale: float = 1.0) -> ProjectiveModel:
    """``loss_scale * (g(z_trained) - g(z_frozen))^2`` with ``g(z) = sum_a f(z_a)``.

    ``link`` is ``'square'``, ``'he3+he2'`` or a sequence of polynomial
    coefficients of ``f`` in increasing degree. With ``k = 1`` this is the
    single-index model with link ``f``.
    """
    if isinstance(link, str):
        table = {"square": SQUARE, "he3+he2": HE3_PLUS_HE2}
        if link not in table:
            raise ValueError(f"unknown link {link!r}")
        coef, name = np.array(table[link]), link
    else:
        coef, name = np.asarray(link, dtype=float), "poly"
    dcoef = P.polyder(coef)
    degree = len(np.trim_zeros(coef, "b")) - 1

    def link_sum(x):
        return P.polyval(x, coef).sum(axis=1)

    def psi(z, w, y):
        diff = link_sum(z[:, :k]) - link_sum(z[:, k:2 * k])
        return loss_scale * diff * diff

    def grad1(z, w, y):
        diff = link_sum(z[:, :k]) - link_sum(z[:, k:2 * k])
        return (2.0 * loss_scale * diff)[:, None] * P.polyval(z[:, :k], dcoef)

    # the trained-frozen overlaps are the slice pinned to zero when searching for
    # the uninformative fixed point
    slice_ = tuple((a, k + b) for a in range(k) for b in range(k))
    return ProjectiveModel(f"multi_index[{name}]", k, k, 0, 1, lam, psi, grad1,
                           growth_order=max(1, 2 * degree - 1), symmetry_slice=slice_,
                           params={"link": name, "coefficients": coef.tolist(), "k": k, "lam": lam,
                                   "loss_scale": loss_scale})


def make_phase_retrieval(lam: float = 0.0, loss_scale: float = 1.0) -> ProjectiveModel:
    return make_multi_index("square", 1, lam, loss_scale)


def make_he3_he2(lam: float = 0.0) -> ProjectiveModel:
    return make_multi_index("he3+he2", 1, lam)


# ---------------------------------------------------------------- utility models


def make_null(k1: int = 1, lam: float = 0.0, k_frozen: int = 0) -> ProjectiveModel:
    """``psi == 0``: pure regularization."""

    def psi(z, w, y):
        return np.zeros(z.shape[0])

    def grad1(z, w, y):
        return np.zeros((z.shape[0], k1))

    return ProjectiveModel("null", k1, k_frozen, 0, 1, lam, psi, grad1, growth_order=0,
                           params={"k1": k1, "lam": lam, "k_frozen": k_frozen})


def make_linear(lam: float = 0.0, k_frozen: int = 0) -> ProjectiveModel:
    """``psi(z) = z_1`` with one trained direction."""

    def psi(z, w, y):
        return z[:, 0].copy()

    def grad1(z, w, y):
        return np.ones((z.shape[0], 1))

    return ProjectiveModel("linear", 1, k_frozen, 0, 1, lam, psi, grad1, growth_order=0,
                           params={"lam": lam, "k_frozen": k_frozen})


def make_quadratic(coef: float, lam: float = 0.0) -> ProjectiveModel:
    """``psi(z) = coef * z_1^2 / 2``; negative ``coef`` makes the loss repulsive."""

    def psi(z, w, y):
        return 0.5 * coef * z[:, 0] ** 2

    def grad1(z, w, y):
        return coef * z[:, :1]

    return ProjectiveModel("quadratic", 1, 0, 0, 1, lam, psi, grad1, growth_order=1,
                           params={"coef": coef, "lam": lam})


def build_model(name: str, **kw) -> ProjectiveModel:
    """Construct a zoo model from its config name."""
    builders = {
        "logistic": make_logistic,
        "two_layer": make_two_layer,
        "multi_index": make_multi_index,
        "phase_retrieval": make_phase_retrieval,
        "he3_he2": make_he3_he2,
        "null": make_null,
        "linear": make_linear,
        "quadratic": make_quadratic,
    }
    if name not in builders:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(builders)}")
    return builders[name](**kw)


# ---------------------------------------------------------------- gradients


def full_gradient(model: ProjectiveModel, state: ParameterState, datum: Datum):
    """Parameter-space gradient of the single-sample loss.

    Returns ``(grad_theta, grad_w)``; frozen columns of ``grad_theta`` are zero.
    """
    theta = state.theta
    z = (datum.x @ theta)[None, :]
    w = state.w[None, :]
    y = np.array([datum.label])
    g1 = model.grad1(z, w, y)[0]
    g2 = model.eval_grad2(z, w, y)[0]
    if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))):
        raise NumericalBlowUp("non-finite loss derivative")
    grad = np.zeros_like(theta)
    grad[:, : model.k1] = np.outer(datum.x, g1) + 2.0 * model.lam * theta[:, : model.k1]
    return grad, g2


@dataclass(frozen=True)
class GradientCheck:
    max_rel_error: float
    worst_probe: int
    n_probes: int

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error <= tol


def check_gradients(model: ProjectiveModel, n_probes: int = 100, scale: float = 5.0, seed: int = 0,
                    step: float = 1e-4) -> GradientCheck:
    """Compare ``grad1``/``grad2`` with finite differences of ``psi``.

    Probes draw ``z`` and ``w`` uniformly from ``[-scale, scale]`` and a
    uniform label. Derivatives use the fourth-order central stencil. The error
    of a probe is ``max|analytic - fd| / max(max|analytic|, 1e-8 (1 + |psi|))``.
    """
    rng = np.random.default_rng(seed)
    kt, k2 = model.k_theta, model.k2
    worst, worst_i = 0.0, -1
    for i in range(n_probes):
        z = rng.uniform(-scale, scale, (1, kt))
        w = rng.uniform(-scale, scale, (1, k2))
        y = rng.integers(0, model.num_classes, 1)
        base = abs(float(model.psi(z, w, y)[0]))
        an = np.concatenate([model.grad1(z, w, y)[0], model.eval_grad2(z, w, y)[0]])
        fd = np.empty_like(an)
        for a in range(model.k1 + k2):
            on_z = a < model.k1
            idx = a if on_z else a - model.k1
            x0 = z[0, idx] if on_z else w[0, idx]
            h = step * max(1.0, abs(x0))

            def f(offset):
                zz, ww = z.copy(), w.copy()
                if on_z:
                    zz[0, idx] = x0 + offset
                else:
                    ww[0, idx] = x0 + offset
                return model.psi(zz, ww, y)[0]

            fd[a] = (8.0 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12.0 * h)
        if not an.size:
            continue
        den = max(float(np.max(np.abs(an))), 1e-8 * (1.0 + base))
        err = float(np.max(np.abs(an - fd))) / den
        if err > worst:
            worst, worst_i = err, i
    return GradientCheck(worst, worst_i, n_probes)


def builtin_models() -> dict[str, ProjectiveModel]:
    """The zoo used by the self-checks."""
    return {
        "logistic": make_logistic(2, 0.0),
        "logistic3": make_logistic(3, 0.1),
        "two_layer_tanh": make_two_layer(2, "tanh"),
        "two_layer_sigmoid": make_two_layer(4, "sigmoid", 0.05),
        "two_layer_smoothed_relu": make_two_layer(2, "smoothed_relu"),
        "phase_retrieval": make_phase_retrieval(),
        "he3_he2": make_he3_he2(),
        "multi_index_square_k2": make_multi_index("square", 2),
    }

