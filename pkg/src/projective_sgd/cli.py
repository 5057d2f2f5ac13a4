"""Command-line entry point: ``projective-sgd <subcommand> [options]``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 experiment ran but a claim missed its tolerance.
"""

from __future__ import annotations

import argparse
import inspect
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import config as C
from .dynamics import DriftEvaluatorConfig, compare_trajectories, drift_h, solve_ode
from .experiments import EXPERIMENTS, Claim, ExperimentReport
from .fluctuations import FixedPointError, build_sde_spec, find_fixed_point, simulate_sde
from .models import NumericalBlowUp, ParameterState, builtin_models, check_gradients
from .sgd import SgdConfig, gaussian_init, mean_curve, one_step_drift_oracle, run_replicas
from .seeding import child_seed
from .summary import SummaryState, compute_summary

log = logging.getLogger("projective_sgd")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 1, 2, 3
SUBCOMMANDS = ("sgd", "ode", "drift", "fixedpoint", "sde", "experiment", "validate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise C.ConfigError(f"command line: {message}")


def _add_common(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="YAML run configuration")
    p.add_argument("--out", default=d, help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides master_seed)")
    p.add_argument("--threads", type=int, default=d, help="worker processes for replica runs")
    p.add_argument("--d", type=int, default=d, help="ambient dimension (overrides data.d)")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="only write files, print nothing on success")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="projective-sgd", description="Online SGD on projective losses and its summary limits.")
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        _add_common(sp, suppress=True)
        if name == "experiment":
            sp.add_argument("name", nargs="?", help=f"one of: {', '.join(EXPERIMENTS)}")
    return parser


def _raw_config(path) -> dict:
    if path is None:
        return {}
    cfg = C.load_config(path)  # validates the file as written
    return cfg.model_dump(mode="json", exclude_unset=False) | {"_explicit_stride": _explicit_stride(path)}


def _explicit_stride(path) -> bool:
    data = yaml.safe_load(Path(path).read_text()) or {}
    return isinstance(data.get("sgd"), dict) and data["sgd"].get("record_stride") is not None


def resolve_config(args) -> C.RunConfig:
    raw = _raw_config(args.config)
    explicit_stride = raw.pop("_explicit_stride", False)
    if args.seed is not None:
        raw["master_seed"] = args.seed
    if args.d is not None:
        raw.setdefault("data", {})["d"] = args.d
        if not explicit_stride:
            raw.setdefault("sgd", {})["record_stride"] = None
    if args.out is not None:
        raw["output_dir"] = args.out
    if args.command:
        raw["subcommand"] = args.command
    if getattr(args, "name", None):
        raw.setdefault("experiment", {})["name"] = args.name
    return C.parse_config(raw)


# ------------------------------------------------------------------ shared setup


class _Setup:
    def __init__(self, cfg: C.RunConfig):
        self.cfg = cfg
        self.model = C.build_model(cfg)
        self.spec = C.build_mixture(cfg, self.model)
        self.frozen = C.build_teacher(cfg, self.model)
        self.w0 = C.initial_w(self.model)
        self.d = cfg.data.d
        ev = cfg.evaluator
        self.evaluator = DriftEvaluatorConfig(ev.method, ev.order, ev.n_samples, ev.crn_seed)

    def sgd_config(self) -> SgdConfig:
        s = self.cfg.sgd
        return SgdConfig(s.c_lr, s.T, s.record_stride, s.r_exit, s.zeta_exit, self.cfg.master_seed,
                         tuple(s.snapshot_times))

    def init(self, replica: int) -> ParameterState:
        return gaussian_init(self.model, self.d, self.frozen, self.cfg.master_seed, replica, self.w0,
                             self.cfg.sgd.init_scale)

    def limit_start(self) -> SummaryState:
        """``d -> infinity`` summary of the Gaussian init: trained Gram block ``scale^2 I``, trained-other 0."""
        theta = np.zeros((self.d, self.model.k_theta))
        if self.model.k_frozen:
            theta[:, self.model.k1:] = self.frozen
        u = compute_summary(ParameterState(theta, self.w0.copy()), self.spec, self.model)
        G = u.G.copy()
        k1 = self.model.k1
        G[:k1, :] = 0.0
        G[:, :k1] = 0.0
        G[:k1, :k1] = self.cfg.sgd.init_scale ** 2 * np.eye(k1)
        return SummaryState(G, self.w0.copy(), u.layout)

    def ode(self, u0: SummaryState, T: float):
        return solve_ode(u0, self.model, self.spec.weights, self.spec.labels, self.cfg.sgd.c_lr, T,
                         self.cfg.ode.solver, self.cfg.ode.dt, self.evaluator)


def _report(name: str, cfg: C.RunConfig) -> ExperimentReport:
    return ExperimentReport(name, {"d": cfg.data.d, "model": cfg.model.name, "noise": cfg.data.noise,
                                   "master_seed": cfg.master_seed})


def _summary_rows(names, values, extra: dict | None = None) -> list[dict]:
    rows = []
    for i, n in enumerate(names):
        row = {"coordinate": n, "value": float(values[i])}
        for k, v in (extra or {}).items():
            row[k] = float(v[i])
        rows.append(row)
    return rows


# ------------------------------------------------------------------ subcommands


def cmd_sgd(cfg: C.RunConfig, out: Path, threads: int) -> ExperimentReport:
    s = _Setup(cfg)
    rep = _report("sgd", cfg)
    batch = max(1, math.ceil(cfg.sgd.replicas / max(1, threads)))
    trajs = run_replicas(s.model, s.spec, s.init, s.sgd_config(), list(range(cfg.sgd.replicas)),
                         batch_size=batch, n_jobs=threads, keep_final=False)
    for t in trajs:
        t.to_csv(out / f"sgd_replica_{t.replica:03d}.csv")
    curve = mean_curve(trajs)
    ode = s.ode(s.limit_start(), cfg.sgd.T)
    dev = compare_trajectories(curve, ode.curve(), cfg.sgd.T)
    blown = [t.replica for t in trajs if t.blew_up]
    rep.tables["final_mean"] = _summary_rows(curve.names, curve.values[-1])
    rep.tables["replicas"] = [dict(replica=t.replica, steps=int(t.steps[-1]), blew_up=t.blew_up,
                                   exit_step_R=t.exit_step_R, exit_step_deloc=t.exit_step_deloc,
                                   max_zeta_eff=float(np.max(t.zeta_eff))) for t in trajs]
    rep.add(Claim.of("sup_deviation_from_ode", dev.sup, 0.0, True, "reported, no tolerance"))
    if blown:
        raise NumericalBlowUp(f"replicas {blown} blew up")
    return rep


def cmd_ode(cfg: C.RunConfig, out: Path, threads: int) -> ExperimentReport:
    s = _Setup(cfg)
    rep = _report("ode", cfg)
    sol = s.ode(s.limit_start(), cfg.sgd.T)
    sol.to_csv(out / "ode.csv")
    rep.tables["final"] = _summary_rows(sol.layout.names, sol.U[-1])
    rep.notes.append(f"solver {sol.solver}, {sol.n_steps} steps, max PSD clip {sol.max_clip:.3g}")
    if sol.blew_up:
        raise NumericalBlowUp(f"ODE left the bounded region before T={cfg.sgd.T}")
    return rep


def cmd_drift(cfg: C.RunConfig, out: Path, threads: int) -> ExperimentReport:
    s = _Setup(cfg)
    rep = _report("drift", cfg)
    state = s.init(0)
    u = compute_summary(state, s.spec, s.model)
    h_lim = drift_h(u, s.model, s.spec.weights, s.spec.labels, cfg.sgd.c_lr, s.evaluator, strict=False)
    h_d = drift_h(u, s.model, s.spec.weights, s.spec.labels, cfg.sgd.c_lr, s.evaluator, d=s.d, strict=False)
    est = one_step_drift_oracle(s.model, s.spec, state, cfg.sgd.c_lr, cfg.drift.n_samples,
                                child_seed(cfg.master_seed, "oracle"), control_variates=cfg.drift.control_variates)
    z = np.where(est.se > 0, (est.mean - h_d) / np.where(est.se > 0, est.se, 1.0), 0.0)
    rep.tables["drift"] = _summary_rows(u.layout.names, est.mean,
                                        {"se": est.se, "gaussian_finite_d": h_d, "limit": h_lim, "z_vs_gaussian": z})
    rep.notes.append(f"oracle sampler {est.sampler}, {est.n_samples} samples")
    rep.add(Claim.of("max_abs_z_vs_gaussian_finite_d", float(np.max(np.abs(z))), 0.0, True,
                     "reported, no tolerance"))
    return rep


def _fixed_point(s: _Setup):
    cfg = s.cfg
    u0 = s.limit_start()
    if cfg.fixedpoint.R_guess is not None:
        G = u0.G.copy()
        G[: s.model.k1, : s.model.k1] = cfg.fixedpoint.R_guess * np.eye(s.model.k1)
        u0 = SummaryState(G, u0.w.copy(), u0.layout)
    fp = find_fixed_point(u0, s.model, s.spec.weights, s.spec.labels, cfg.sgd.c_lr, s.evaluator,
                          method=cfg.fixedpoint.method, tol=cfg.fixedpoint.tol)
    if not fp.converged:
        raise FixedPointError(f"{fp.method} did not converge: {fp.message} (residual {fp.residual:.3g})")
    return fp


def cmd_fixedpoint(cfg: C.RunConfig, out: Path, threads: int) -> ExperimentReport:
    s = _Setup(cfg)
    rep = _report("fixedpoint", cfg)
    fp = _fixed_point(s)
    names = fp.u_star.layout.names
    rep.tables["u_star"] = _summary_rows(names, fp.u_star.vector())
    if fp.stability is not None:
        rep.tables["stability"] = [dict(index=i, real=float(np.real(v)), imag=float(np.imag(v)))
                                   for i, v in enumerate(fp.stability)]
    rep.add(Claim.of("residual", fp.residual, 0.0, fp.residual <= 1e3 * cfg.fixedpoint.tol,
                     f"sup |h(u_star)| <= {1e3 * cfg.fixedpoint.tol:.3g}"))
    rep.notes.append(f"{fp.method}: {fp.iterations} iterations, pinned {list(fp.pinned)}")
    return rep


def cmd_sde(cfg: C.RunConfig, out: Path, threads: int) -> ExperimentReport:
    s = _Setup(cfg)
    rep = _report("sde", cfg)
    fp = _fixed_point(s)
    # coordinates touching an identically-zero column (a zero mean) carry no fluctuation
    layout, G = fp.u_star.layout, fp.u_star.G
    live = [n for n, (i, j) in enumerate(layout.pairs) if G[i, i] > 0 and G[j, j] > 0]
    live += list(range(len(layout.pairs), len(layout.names)))
    spec = build_sde_spec(fp.u_star, s.model, s.spec.weights, s.spec.labels, cfg.sgd.c_lr, s.evaluator,
                          seed=child_seed(cfg.master_seed, "volatility"), coordinates=live)
    (out / "sde_spec.txt").write_text(spec.to_text())
    ens = simulate_sde(np.zeros(spec.size), spec, cfg.sde.T, cfg.sde.dt, cfg.sde.n_paths,
                       child_seed(cfg.master_seed, "sde"), record_every=max(1, int(round(0.01 * cfg.sde.T / cfg.sde.dt))))
    var = ens.variance()
    with (out / "sde_variance.csv").open("w") as fh:
        fh.write(",".join(["t", *spec.names]) + "\n")
        for t, row in zip(ens.times, var):
            fh.write(",".join(repr(float(x)) for x in (t, *row)) + "\n")
    if not np.all(np.isfinite(var)):
        raise NumericalBlowUp("SDE ensemble variance is not finite")
    rep.tables["final_variance"] = _summary_rows(spec.names, var[-1])
    return rep


def cmd_validate(cfg: C.RunConfig, out: Path, threads: int) -> ExperimentReport:
    """Gradient checks for every built-in model and moment checks for the configured noise law."""
    rep = _report("validate", cfg)
    for name, model in builtin_models().items():
        chk = check_gradients(model, seed=cfg.master_seed)
        rep.add(Claim.of(f"gradient_{name}", chk.max_rel_error, 0.0, chk.passed(), "max relative error <= 1e-5"))
    noise = C.build_noise(cfg)
    rng = np.random.default_rng(child_seed(cfg.master_seed, "probe"))
    x = noise.sample(10**6, rng)
    for k, exact in ((1, 0.0), (2, 1.0), (3, noise.m3), (4, noise.m4)):
        se = float(np.std(x**k)) / math.sqrt(x.size)
        val = float(np.mean(x**k))
        rep.add(Claim.of(f"moment_{k}", val, se, abs(val - exact) <= 5 * se + 1e-12,
                         f"within 5 SE of exact {exact:.6g}"))
    return rep


def cmd_experiment(cfg: C.RunConfig, out: Path, threads: int) -> ExperimentReport:
    name = cfg.experiment.name
    fn = EXPERIMENTS[name]
    sig = inspect.signature(fn).parameters
    params = dict(cfg.experiment.params)
    unknown = set(params) - set(sig)
    if unknown:
        raise C.ConfigError(f"experiment.params: unknown parameters {sorted(unknown)} for {name}")
    params["master_seed"] = cfg.master_seed
    if "d" in sig and "d" in cfg.model_fields_set | cfg.data.model_fields_set:
        params.setdefault("d", cfg.data.d)
    if "n_jobs" in sig:
        params["n_jobs"] = threads
    if cfg.experiment.tolerances:
        params["tolerances"] = dict(cfg.experiment.tolerances)
    try:
        return fn(**params)
    except ValueError as exc:
        if "tolerance" in str(exc):
            raise C.ConfigError(f"experiment.tolerances: {exc}") from None
        raise


COMMANDS = {"sgd": cmd_sgd, "ode": cmd_ode, "drift": cmd_drift, "fixedpoint": cmd_fixedpoint, "sde": cmd_sde,
            "experiment": cmd_experiment, "validate": cmd_validate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
        cfg = resolve_config(args)
        command = cfg.subcommand
        if command is None:
            raise C.ConfigError("subcommand: none given on the command line or in the config")
        if command == "experiment" and not cfg.experiment.name:
            raise C.ConfigError("experiment.name: no experiment named")
        if command == "experiment" and cfg.experiment.name not in EXPERIMENTS:
            raise C.ConfigError(f"experiment.name: unknown experiment {cfg.experiment.name!r}; "
                                f"expected one of {sorted(EXPERIMENTS)}")
        if args.d is not None and command == "experiment":
            cfg.data.d = args.d
    except C.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_effective.yaml").write_text(C.dump_config(cfg))
    threads = args.threads or os.cpu_count() or 1
    t0 = time.perf_counter()
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            rep = COMMANDS[command](cfg, out, threads)
    except C.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalBlowUp, FixedPointError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        fail = _report(command, cfg)
        fail.notes.append(f"numerical failure: {exc}")
        fail.add(Claim.failed("numerical_failure", str(exc)))
        fail.wall_clock = time.perf_counter() - t0
        fail.write(out)
        return EXIT_NUMERIC
    if not rep.wall_clock:
        rep.wall_clock = time.perf_counter() - t0
    rep.parameters = {**rep.parameters, "config": C.dump_config(cfg)}
    rep.write(out)
    if not args.quiet:
        print(rep.to_text(), end="")
    if command == "experiment" and not rep.passed:
        return EXIT_TOLERANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
