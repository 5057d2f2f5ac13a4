"""Labeled data from the mixture model ``X = mu^J + Y`` with ``Y`` i.i.d. noise."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distributions import NoiseDistribution


@dataclass(frozen=True)
class MixtureSpec:
    """Class means (rows of ``means``), class weights, label map and noise law."""

    means: np.ndarray
    weights: np.ndarray
    labels: np.ndarray
    noise: NoiseDistribution
    num_classes: int | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        labels = np.asarray(self.labels, dtype=int).ravel()
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "labels", labels)
        k = means.shape[0]
        if weights.shape != (k,):
            raise ValueError(f"weights: expected {k} entries, got {weights.shape[0]}")
        if labels.shape != (k,):
            raise ValueError(f"labels: expected {k} entries, got {labels.shape[0]}")
        if np.any(weights < 0):
            raise ValueError("weights: must be non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights: must sum to 1 (sum is {weights.sum():.15g})")
        if not np.all(np.isfinite(means)):
            raise ValueError("means: entries must be finite")
        if np.any(labels < 0):
            raise ValueError("labels: must be non-negative")
        nc = int(labels.max()) + 1 if self.num_classes is None else int(self.num_classes)
        if labels.max() >= nc:
            raise ValueError("labels: exceed num_classes")
        object.__setattr__(self, "num_classes", nc)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def k(self) -> int:
        return self.means.shape[0]

    def with_noise(self, noise: NoiseDistribution) -> "MixtureSpec":
        return MixtureSpec(self.means, self.weights, self.labels, noise, self.num_classes)

    def draw_classes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        return np.searchsorted(cum, rng.random(n), side="right").astype(np.intp)


@dataclass(frozen=True)
class Datum:
    x: np.ndarray
    j: int
    y: np.ndarray  # one-hot over classes

    @property
    def label(self) -> int:
        return int(np.argmax(self.y))


def one_hot(label: int, num_classes: int) -> np.ndarray:
    y = np.zeros(num_classes)
    y[label] = 1.0
    return y


def sample_datum(spec: MixtureSpec, rng: np.random.Generator) -> Datum:
    j = int(spec.draw_classes(1, rng)[0])
    x = spec.means[j] + spec.noise.sample(spec.d, rng)
    return Datum(x=x, j=j, y=one_hot(int(spec.labels[j]), spec.num_classes))


def sample_batch(spec: MixtureSpec, n: int, rng: np.random.Generator):
    """``n`` independent data points as ``(X, J)`` with ``X`` of shape ``(n, d)``."""
    J = spec.draw_classes(n, rng)
    X = spec.noise.sample((n, spec.d), rng)
    X += spec.means[J]
    return X, J


def delocalization_of_means(spec: MixtureSpec, zeta: float):
    """Per-mean flags ``max_i |mu_i| <= d^(-1/2 + zeta)`` and the maxima."""
    if not (0.0 < zeta < 0.5):
        raise ValueError("zeta must lie in (0, 1/2)")
    maxabs = np.max(np.abs(spec.means), axis=1)
    bound = spec.d ** (-0.5 + zeta)
    return maxabs <= bound * (1 + 1e-12), maxabs


def mean_vector(recipe: str, d: int, rng: np.random.Generator | None = None, norm: float = 1.0) -> np.ndarray:
    """One mean direction by named recipe, scaled to Euclidean norm ``norm``.

    Recipes: ``flat``, ``random_unit``, ``coordinate_e1``, ``rho_flat(r)``
    (flat with norm ``r``, overriding ``norm``), ``zero``.
    """
    recipe = recipe.strip()
    if recipe.startswith("rho_flat(") and recipe.endswith(")"):
        return float(recipe[len("rho_flat("):-1]) * np.full(d, 1.0 / math.sqrt(d))
    if recipe == "flat":
        v = np.full(d, 1.0 / math.sqrt(d))
    elif recipe == "random_unit":
        if rng is None:
            raise ValueError("random_unit needs an rng")
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
    elif recipe == "coordinate_e1":
        v = np.zeros(d)
        v[0] = 1.0
    elif recipe == "zero":
        return np.zeros(d)
    else:
        raise ValueError(f"unknown mean recipe {recipe!r}")
    return norm * v


def load_vector(path: str | Path, d: int | None = None) -> np.ndarray:
    """Read a vector from ``.npy`` or a text/CSV file of numbers."""
    path = Path(path)
    if path.suffix == ".npy":
        v = np.load(path)
    else:
        text = path.read_text().replace(",", " ")
        v = np.array([float(tok) for tok in text.split()])
    v = np.asarray(v, dtype=float).ravel()
    if d is not None and v.shape[0] != d:
        raise ValueError(f"{path}: expected {d} entries, found {v.shape[0]}")
    return v


def symmetric_two_class(d: int, noise: NoiseDistribution, norm: float = 1.0, recipe: str = "flat",
                        rng: np.random.Generator | None = None) -> MixtureSpec:
    """Two classes with means ``+mu`` and ``-mu`` and equal weights."""
    mu = mean_vector(recipe, d, rng, norm)
    return MixtureSpec(np.stack([mu, -mu]), np.array([0.5, 0.5]), np.array([0, 1]), noise)


def centered(d: int, noise: NoiseDistribution) -> MixtureSpec:
    """Single class with zero mean (pure i.i.d. data)."""
    return MixtureSpec(np.zeros((1, d)), np.array([1.0]), np.array([0]), noise)
