"""Run configuration: YAML file -> validated :class:`RunConfig`.

Unknown keys are rejected at every level. ``load_config`` fills defaults, and
``dump_config`` writes the effective configuration back out; loading that dump
gives the same configuration.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .distributions import NoiseDistribution, parse_distribution
from .mixture import MixtureSpec, mean_vector, symmetric_two_class
from .models import (ProjectiveModel, make_logistic, make_multi_index, make_null, make_phase_retrieval,
                     make_two_layer)
from .seeding import stream


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ModelConfig(_Strict):
    name: Literal["logistic", "two_layer", "phase_retrieval", "he3_he2", "multi_index", "null"] = "logistic"
    k1: int = Field(2, ge=1)
    lam: float = Field(0.0, ge=0.0)
    activation: Literal["tanh", "sigmoid", "smoothed_relu"] = "tanh"
    num_classes: int = Field(2, ge=2)
    link: str | list[float] = "square"
    loss_scale: float = Field(1.0, gt=0.0)


class VectorConfig(_Strict):
    recipe: Literal["flat", "random_unit", "coordinate_e1", "zero"] = "flat"
    norm: float = Field(1.0, ge=0.0)


class DataConfig(_Strict):
    d: int = Field(1000, ge=2)
    noise: str = "gaussian"
    mixture: Literal["symmetric", "centered", "custom"] = "symmetric"
    mean: VectorConfig = VectorConfig()
    means: list[VectorConfig] | None = None  # custom mixtures only
    weights: list[float] | None = None
    labels: list[int] | None = None
    teacher: VectorConfig = VectorConfig()  # frozen columns of index models

    @field_validator("noise")
    @classmethod
    def _known_noise(cls, v: str) -> str:
        try:
            parse_distribution(v)
        except (ValueError, KeyError) as exc:
            raise ValueError(f"unknown distribution {v!r}") from exc
        return v

    @field_validator("weights")
    @classmethod
    def _weights_sum(cls, v):
        if v is None:
            return v
        if any(x < 0 for x in v):
            raise ValueError("weights must be non-negative")
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 (got {sum(v):.6g})")
        return v

    @model_validator(mode="after")
    def _shapes(self):
        if self.mixture == "custom":
            if not self.means:
                raise ValueError("means: a custom mixture needs a list of means")
            k = len(self.means)
            if self.weights is not None and len(self.weights) != k:
                raise ValueError(f"weights: expected {k} entries")
            if self.labels is not None and len(self.labels) != k:
                raise ValueError(f"labels: expected {k} entries")
        elif self.means is not None:
            raise ValueError("means: only allowed with mixture: custom")
        return self


class SgdSection(_Strict):
    c_lr: float = Field(1.0, gt=0.0)
    T: float = Field(5.0, ge=0.0)
    replicas: int = Field(20, ge=1)
    record_stride: int | None = Field(None, ge=1)
    r_exit: float | None = Field(None, gt=0.0)
    zeta_exit: float | None = None
    init_scale: float = Field(1.0, gt=0.0)
    snapshot_times: list[float] = []


class EvaluatorSection(_Strict):
    method: Literal["gauss_hermite", "monte_carlo"] = "gauss_hermite"
    order: int = Field(10, ge=6)
    n_samples: int = Field(100_000, ge=1000)
    crn_seed: int = 0


class OdeSection(_Strict):
    solver: Literal["rk4", "rk45"] = "rk4"
    dt: float = Field(0.01, gt=0.0)


class DriftSection(_Strict):
    n_samples: int = Field(100_000, ge=1000)
    control_variates: bool = False


class FixedPointSection(_Strict):
    method: Literal["newton", "integrate"] = "newton"
    tol: float = Field(1e-10, gt=0.0)
    R_guess: float | None = Field(None, gt=0.0)


class SdeSection(_Strict):
    T: float = Field(1.0, gt=0.0)
    dt: float = Field(0.001, gt=0.0)
    n_paths: int = Field(10_000, ge=1)

    @model_validator(mode="after")
    def _step(self):
        if self.dt > 1e-3 * self.T * (1 + 1e-12):
            raise ValueError("dt: must not exceed 1e-3 * T")
        return self


class ExperimentSection(_Strict):
    name: str | None = None
    params: dict[str, Any] = {}
    tolerances: dict[str, float] = {}


class RunConfig(_Strict):
    subcommand: Literal["sgd", "ode", "drift", "fixedpoint", "sde", "experiment", "validate"] | None = None
    master_seed: int = Field(0, ge=0)
    output_dir: str = "out"
    model: ModelConfig = ModelConfig()
    data: DataConfig = DataConfig()
    sgd: SgdSection = SgdSection()
    evaluator: EvaluatorSection = EvaluatorSection()
    ode: OdeSection = OdeSection()
    drift: DriftSection = DriftSection()
    fixedpoint: FixedPointSection = FixedPointSection()
    sde: SdeSection = SdeSection()
    experiment: ExperimentSection = ExperimentSection()

    @model_validator(mode="after")
    def _fill(self):
        if self.sgd.record_stride is None:
            self.sgd.record_stride = max(1, self.data.d // 100)
        if self.model.name == "two_layer" and self.model.k1 % self.model.num_classes:
            raise ValueError("model.k1: must be a multiple of model.num_classes")
        return self


def _format_validation(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"])
        msg = e["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(parts)


def parse_config(data: dict | None) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def load_config(path) -> RunConfig:
    """Read and validate a YAML config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"{path}{where}: {getattr(exc, 'problem', exc)}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        return parse_config(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


# ------------------------------------------------------------------ object construction


def build_model(cfg: RunConfig) -> ProjectiveModel:
    m = cfg.model
    if m.name == "logistic":
        return make_logistic(m.k1, m.lam)
    if m.name == "two_layer":
        return make_two_layer(m.k1, m.activation, m.lam, m.num_classes)
    if m.name == "phase_retrieval":
        return make_phase_retrieval(m.lam, m.loss_scale)
    if m.name == "he3_he2":
        return make_multi_index("he3+he2", 1, m.lam, m.loss_scale)
    if m.name == "multi_index":
        return make_multi_index(m.link, m.k1, m.lam, m.loss_scale)
    return make_null(m.k1, m.lam)


def build_noise(cfg: RunConfig) -> NoiseDistribution:
    return parse_distribution(cfg.data.noise)


def build_mixture(cfg: RunConfig, model: ProjectiveModel) -> MixtureSpec:
    dc = cfg.data
    noise = build_noise(cfg)
    d = dc.d
    rng = stream(cfg.master_seed, "means")
    if dc.mixture == "symmetric":
        spec = symmetric_two_class(d, noise, dc.mean.norm, dc.mean.recipe, rng)
        if dc.weights is None and dc.labels is None:
            return spec
        means = spec.means
    elif dc.mixture == "centered":
        means = np.zeros((1, d))
    else:
        means = np.stack([mean_vector(v.recipe, d, rng, v.norm) for v in dc.means])
    k = means.shape[0]
    weights = np.array(dc.weights) if dc.weights is not None else np.full(k, 1.0 / k)
    labels = np.array(dc.labels) if dc.labels is not None else (np.arange(k) % model.num_classes)
    return MixtureSpec(means, weights, labels, noise, model.num_classes)


def build_teacher(cfg: RunConfig, model: ProjectiveModel) -> np.ndarray | None:
    if not model.k_frozen:
        return None
    rng = stream(cfg.master_seed, "means", 1)
    t = cfg.data.teacher
    cols = [mean_vector(t.recipe, cfg.data.d, rng, t.norm) for _ in range(model.k_frozen)]
    return np.stack(cols, axis=1)


def initial_w(model: ProjectiveModel) -> np.ndarray:
    return np.ones(model.k2) if model.k2 else np.zeros(0)


def scale_hint(cfg: RunConfig) -> float:
    return cfg.sgd.init_scale if math.isfinite(cfg.sgd.init_scale) else 1.0
