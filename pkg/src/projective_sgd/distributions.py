"""Standardized scalar noise laws (mean 0, variance 1).

Every law is sampled by inverse CDF from uniforms, so two laws fed the same
uniform stream are coupled (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtri

KINDS = (
    "standard_gaussian",
    "rademacher",
    "uniform_scaled",
    "centered_exponential",
    "two_point",
)

_SQRT3 = math.sqrt(3.0)


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def _derangements(p: int) -> int:
    # E[(E - 1)^p] for E ~ Exp(1) equals the number of derangements of p items
    return sum(math.comb(p, k) * (-1) ** (p - k) * math.factorial(k) for k in range(p + 1))


@dataclass(frozen=True)
class NoiseDistribution:
    """A standardized scalar law.

    ``p`` is only used by ``two_point``, which puts mass ``p`` on
    ``sqrt((1-p)/p)`` and mass ``1-p`` on ``-sqrt(p/(1-p))``.
    """

    kind: str
    p: float | None = None
    finite_moment_count: int | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise distribution {self.kind!r}; expected one of {KINDS}")
        if self.kind == "two_point":
            if self.p is None or not (0.0 < self.p < 1.0):
                raise ValueError("two_point needs 0 < p < 1")
        elif self.p is not None:
            raise ValueError(f"{self.kind} takes no parameter p")

    @property
    def name(self) -> str:
        if self.kind == "two_point":
            return f"two_point({self.p:.6g})"
        return self.kind

    # -- two-point atoms
    @property
    def _atoms(self) -> tuple[float, float]:
        p = self.p
        return math.sqrt((1.0 - p) / p), -math.sqrt(p / (1.0 - p))

    @property
    def m3(self) -> float:
        return self.moment(3)

    @property
    def m4(self) -> float:
        return self.moment(4)

    def moment(self, order: int) -> float:
        """Exact ``E[Y^order]``."""
        if order < 0:
            raise ValueError("moment order must be non-negative")
        if self.finite_moment_count is not None and order > self.finite_moment_count:
            raise ValueError(
                f"{self.name} has only {self.finite_moment_count} finite moments"
            )
        k = self.kind
        if k == "standard_gaussian":
            return 0.0 if order % 2 else float(_double_factorial(order - 1))
        if k == "rademacher":
            return 0.0 if order % 2 else 1.0
        if k == "uniform_scaled":
            return 0.0 if order % 2 else _SQRT3**order / (order + 1)
        if k == "centered_exponential":
            return float(_derangements(order))
        a, b = self._atoms
        return self.p * a**order + (1.0 - self.p) * b**order

    def ppf(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF applied to uniforms in (0, 1)."""
        u = np.asarray(u, dtype=float)
        k = self.kind
        if k == "standard_gaussian":
            return ndtri(u)
        if k == "rademacher":
            return np.where(u < 0.5, -1.0, 1.0)
        if k == "uniform_scaled":
            return _SQRT3 * (2.0 * u - 1.0)
        if k == "centered_exponential":
            out = np.log1p(-u)
            np.negative(out, out=out)
            out -= 1.0
            return out
        a, b = self._atoms
        return np.where(u < 1.0 - self.p, b, a)

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        return self.ppf(rng.random(shape))

    def char_fn(self, t) -> np.ndarray:
        """Characteristic function ``E[exp(i t Y)]``."""
        t = np.asarray(t, dtype=float)
        k = self.kind
        if k == "standard_gaussian":
            return np.exp(-0.5 * t * t).astype(complex)
        if k == "rademacher":
            return np.cos(t).astype(complex)
        if k == "uniform_scaled":
            return np.sinc(_SQRT3 * t / np.pi).astype(complex)
        if k == "centered_exponential":
            return np.exp(-1j * t) / (1.0 - 1j * t)
        a, b = self._atoms
        return self.p * np.exp(1j * t * a) + (1.0 - self.p) * np.exp(1j * t * b)

    @property
    def has_exact_sum(self) -> bool:
        return self.kind != "uniform_scaled"

    def sample_sum(self, n_terms: int, size, rng: np.random.Generator) -> np.ndarray:
        """Draws of ``Y_1 + ... + Y_n`` for i.i.d. ``Y_i``.

        Exact closed-form laws where they exist; ``uniform_scaled`` falls back
        to explicit summation.
        """
        if n_terms < 0:
            raise ValueError("n_terms must be non-negative")
        if n_terms == 0:
            return np.zeros(size)
        k = self.kind
        if k == "standard_gaussian":
            return math.sqrt(n_terms) * rng.standard_normal(size)
        if k == "rademacher":
            return 2.0 * rng.binomial(n_terms, 0.5, size) - n_terms
        if k == "two_point":
            a, b = self._atoms
            hits = rng.binomial(n_terms, self.p, size)
            return hits * a + (n_terms - hits) * b
        if k == "centered_exponential":
            return rng.gamma(n_terms, 1.0, size) - n_terms
        out = np.zeros(size)
        for _ in range(n_terms):
            out += self.sample(size, rng)
        return out

    def sample_sum_and_square_sum(self, n_terms: int, size, rng: np.random.Generator):
        """Joint draws of ``(sum Y_i, sum Y_i^2)``; exact for the laws that allow it."""
        k = self.kind
        if n_terms == 0:
            return np.zeros(size), np.zeros(size)
        if k == "standard_gaussian":
            s = math.sqrt(n_terms) * rng.standard_normal(size)
            q = s * s / n_terms
            if n_terms > 1:
                q = q + rng.chisquare(n_terms - 1, size)
            return s, q
        if k == "rademacher":
            return 2.0 * rng.binomial(n_terms, 0.5, size) - n_terms, np.full(size, float(n_terms))
        if k == "two_point":
            a, b = self._atoms
            hits = rng.binomial(n_terms, self.p, size)
            return hits * a + (n_terms - hits) * b, hits * a * a + (n_terms - hits) * b * b
        raise NotImplementedError(f"no joint sum/square-sum law for {self.name}")

    @property
    def has_exact_sum_and_square_sum(self) -> bool:
        return self.kind in ("standard_gaussian", "rademacher", "two_point")


def gaussian() -> NoiseDistribution:
    return NoiseDistribution("standard_gaussian")


def rademacher() -> NoiseDistribution:
    return NoiseDistribution("rademacher")


def uniform_scaled() -> NoiseDistribution:
    return NoiseDistribution("uniform_scaled")


def centered_exponential() -> NoiseDistribution:
    return NoiseDistribution("centered_exponential")


def two_point(p: float) -> NoiseDistribution:
    return NoiseDistribution("two_point", p=p)


def two_point_with_m4(m4: float, skew: str = "right") -> NoiseDistribution:
    """Two-point law with the requested fourth moment (needs ``m4 >= 1``).

    ``m4 = 1/(p(1-p)) - 3``; ``skew='right'`` picks ``p < 1/2``.
    """
    if m4 < 1.0:
        raise ValueError("a standardized law has m4 >= 1")
    if m4 == 1.0:
        return two_point(0.5)
    prod = 1.0 / (m4 + 3.0)
    p = brentq(lambda q: q * (1.0 - q) - prod, 1e-15, 0.5)
    return two_point(p if skew == "right" else 1.0 - p)


def parse_distribution(name: str, p: float | None = None) -> NoiseDistribution:
    """Build a law from its config name; accepts ``two_point(0.3)`` syntax."""
    aliases = {"gaussian": "standard_gaussian", "exponential": "centered_exponential",
               "uniform": "uniform_scaled"}
    name = name.strip()
    if name.startswith("two_point(") and name.endswith(")"):
        return two_point(float(name[len("two_point("):-1]))
    kind = aliases.get(name, name)
    if kind == "two_point":
        if p is None:
            raise ValueError("two_point needs a parameter p")
        return two_point(p)
    return NoiseDistribution(kind)


def sample_iid(dist: NoiseDistribution, n: int, seed) -> np.ndarray:
    """``n`` i.i.d. draws from ``dist``, reproducible from ``seed``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return dist.sample(n, np.random.default_rng(seed))
