"""Smooth bounded test functions of projected data and their expectations.

Every battery element is a ridge function ``f(z) = scale * g(a . z + b)`` with
``||f||_{C^3_b} <= 1``: the scale is chosen from exact suprema of the first
three derivatives of the profile ``g``. Profiles built from ``cos``, ``sin``
and Gaussian bumps have exact expectations through the characteristic
function of ``theta^T X``; ``tanh``-polynomial profiles are evaluated by
Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial import hermite_e as H
from numpy.polynomial import polynomial as P

from .distributions import NoiseDistribution
from .mixture import MixtureSpec
from .seeding import stream

EXACT_PROFILES = ("cos", "sin", "bump")


@dataclass(frozen=True)
class RidgeFunction:
    profile: str  # cos, sin, bump or tanh_poly
    direction: tuple[float, ...]
    offset: float = 0.0
    width: float = 1.0  # bump width
    poly: tuple[float, ...] = (0.0, 1.0)  # tanh_poly coefficients in t = tanh(x)
    scale: float = 1.0

    def __post_init__(self):
        if self.profile not in EXACT_PROFILES + ("tanh_poly",):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.width <= 0:
            raise ValueError("width must be positive")

    @property
    def label(self) -> str:
        a = ",".join(f"{v:.3g}" for v in self.direction)
        extra = f",s={self.width:g}" if self.profile == "bump" else ""
        if self.profile == "tanh_poly":
            extra = ",p=" + ":".join(f"{c:g}" for c in self.poly)
        return f"{self.profile}[a=({a}),b={self.offset:g}{extra}]"

    @property
    def exact(self) -> bool:
        return self.profile in EXACT_PROFILES

    def g(self, x: np.ndarray) -> np.ndarray:
        if self.profile == "cos":
            return np.cos(x)
        if self.profile == "sin":
            return np.sin(x)
        if self.profile == "bump":
            return np.exp(-0.5 * (x / self.width) ** 2)
        return P.polyval(np.tanh(x), self.poly)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.scale * self.g(np.asarray(z) @ np.asarray(self.direction) + self.offset)

    def derivative_sups(self) -> np.ndarray:
        """``sup |g^(k)|`` for ``k = 0..3``."""
        if self.profile in ("cos", "sin"):
            return np.ones(4)
        if self.profile == "bump":
            s = self.width
            x = np.linspace(-12.0, 12.0, 48001)
            gauss = np.exp(-0.5 * x * x)
            return np.array([np.max(np.abs(H.hermeval(x, [0] * k + [1]) * gauss)) / s**k for k in range(4)])
        t = np.linspace(-1.0, 1.0, 20001)
        p = np.array(self.poly, dtype=float)
        out = []
        for _ in range(4):
            out.append(np.max(np.abs(P.polyval(t, p))))
            p = P.polymul([1.0, 0.0, -1.0], P.polyder(p))  # d/dx = (1 - t^2) d/dt
        return np.array(out)

    def c3_norm(self) -> float:
        a = float(np.linalg.norm(self.direction))
        sups = self.derivative_sups()
        return float(self.scale * max(sups[k] * a**k for k in range(4)))

    def normalized(self) -> "RidgeFunction":
        unit = replace(self, scale=1.0)
        return replace(self, scale=1.0 / unit.c3_norm())


def default_battery(k: int, offsets=(0.0, 0.5)) -> list[RidgeFunction]:
    """Ridge functions along coordinate and diagonal directions of ``R^k``."""
    dirs = [np.eye(k)[i] for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            for sgn in (1.0, -1.0):
                v = np.zeros(k)
                v[i], v[j] = 1.0, sgn
                dirs.append(v / math.sqrt(2.0))
    shapes = [dict(profile="cos"), dict(profile="sin"), dict(profile="bump", width=1.5),
              dict(profile="bump", width=3.0), dict(profile="tanh_poly", poly=(0.0, 1.0)),
              dict(profile="tanh_poly", poly=(0.0, 0.0, 1.0)), dict(profile="tanh_poly", poly=(0.0, -0.5, 0.0, 1.0))]
    out = []
    for v in dirs:
        for b in offsets:
            for sh in shapes:
                out.append(RidgeFunction(direction=tuple(float(c) for c in v), offset=float(b), **sh).normalized())
    return out


def third_moment_probe() -> RidgeFunction:
    """``sin`` of a scalar: odd, so its Gaussian mean vanishes and the gap is driven by the third moment."""
    return RidgeFunction("sin", (1.0,))


# ------------------------------------------------------------------ exact expectations


def sum_char_fn(dist: NoiseDistribution, coef: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``E exp(i t sum_i coef_i Y_i)`` for every ``t``, as a product of one-coordinate factors."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    coef = np.asarray(coef, dtype=float).ravel()
    logs = np.zeros(t.shape, dtype=complex)
    for lo in range(0, coef.size, 4096):
        phi = dist.char_fn(t[:, None] * coef[None, lo:lo + 4096])
        logs += np.sum(np.log(phi), axis=1)
    return np.exp(logs)


def _expect_profile(f: RidgeFunction, dist: NoiseDistribution, coef: np.ndarray, shifts: np.ndarray,
                    weights: np.ndarray, gh_order: int) -> float:
    if f.profile in ("cos", "sin"):
        phi = sum_char_fn(dist, coef, np.array([1.0]))[0]
        val = np.sum(weights * phi * np.exp(1j * shifts))
        return float(f.scale * (val.real if f.profile == "cos" else val.imag))
    # bump: exp(-x^2 / 2s^2) = E_T exp(i T x / s), T standard normal
    nodes, w = H.hermegauss(gh_order)
    w = w / math.sqrt(2.0 * math.pi)
    phi = sum_char_fn(dist, coef, nodes / f.width)
    val = np.sum(weights[None, :] * (w * phi)[:, None] * np.exp(1j * np.outer(nodes, shifts) / f.width))
    return float(f.scale * val.real)


def exact_expectation(f: RidgeFunction, theta: np.ndarray, spec: MixtureSpec, noise: NoiseDistribution | None = None,
                      gh_order: int = 96) -> float:
    """``E f(theta^T X)`` for ``X = mu_J + Y`` with ``Y`` i.i.d. from ``noise`` (default: the mixture's)."""
    if not f.exact:
        raise ValueError(f"{f.profile} has no closed-form expectation")
    noise = noise or spec.noise
    theta = np.asarray(theta, dtype=float).reshape(spec.d, -1)
    a = np.asarray(f.direction, dtype=float)
    coef = theta @ a
    shifts = spec.means @ coef + f.offset
    return _expect_profile(f, noise, coef, shifts, spec.weights, gh_order)


def exact_gaps(battery, theta: np.ndarray, spec: MixtureSpec, reference: NoiseDistribution,
               gh_order: int = 96) -> np.ndarray:
    """``E_nu f - E_ref f`` for every exact battery element (``nu`` is the mixture's noise)."""
    return np.array([exact_expectation(f, theta, spec, None, gh_order)
                     - exact_expectation(f, theta, spec, reference, gh_order) for f in battery])


# ------------------------------------------------------------------ Monte Carlo


@dataclass
class GapEstimate:
    labels: tuple[str, ...]
    gap: np.ndarray
    se: np.ndarray
    n_samples: int
    coupled: bool

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.gap)))

    def max_z(self) -> float:
        se = np.where(self.se > 0, self.se, np.inf)
        return float(np.max(np.abs(self.gap) / se))


def mc_gaps(battery, theta: np.ndarray, spec: MixtureSpec, reference: NoiseDistribution, n_samples: int,
            seed: int, coupled: bool = True, chunk: int | None = None) -> GapEstimate:
    """Monte Carlo ``E_nu f - E_ref f`` with standard errors.

    With ``coupled=True`` both arms push the same uniforms through their
    inverse CDFs and share the class draws, so the paired difference has
    reduced variance. ``coupled=False`` draws the reference arm from its own
    stream, as a self-comparison control needs.
    """
    theta = np.asarray(theta, dtype=float).reshape(spec.d, -1)
    d = spec.d
    chunk = chunk or max(1, (1 << 22) // d)
    rng_a = stream(seed, "battery", 0)
    rng_b = rng_a if coupled else stream(seed, "battery", 1)
    nf = len(battery)
    s1 = np.zeros(nf)
    s2 = np.zeros(nf)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        done += m
        J = spec.draw_classes(m, rng_a)
        U = rng_a.random((m, d))
        za = (spec.noise.ppf(U) + spec.means[J]) @ theta
        if coupled:
            Jb, Ub = J, U
        else:
            Jb, Ub = spec.draw_classes(m, rng_b), rng_b.random((m, d))
        zb = (reference.ppf(Ub) + spec.means[Jb]) @ theta
        for i, f in enumerate(battery):
            diff = f(za) - f(zb)
            s1[i] += diff.sum()
            s2[i] += (diff * diff).sum()
    mean = s1 / n_samples
    var = np.maximum(s2 / n_samples - mean * mean, 0.0)
    return GapEstimate(tuple(f.label for f in battery), mean, np.sqrt(var / max(n_samples - 1, 1)), n_samples, coupled)
