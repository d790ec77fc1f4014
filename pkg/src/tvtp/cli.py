"""Command line entry point: ``tvtp <command> [options]``.

Exit status is 0 on success, 1 on invalid input (one-line message on
stderr) and 2 on numerical failure (a JSON object on stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, files, montecarlo
from .filter import ZeroLikelihoodError, forward_filter, kim_smoother
from .inference import lr_pvalue
from .model import ModelSpec, ParamVector, SpecError, load_spec
from .optimize import FitConfig, FitError, fit
from .simulate import DEFAULT_WARMUP, simulate_covariates, simulate_latent_factor, simulate_tvtp

log = logging.getLogger("tvtp")


class NumericalFailure(Exception):
    def __init__(self, kind: str, message: str, detail=None):
        super().__init__(message)
        self.payload = {"error": kind, "message": message}
        if detail is not None:
            self.payload["detail"] = detail


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _design(config: str | None) -> tuple[ModelSpec, ParamVector | None]:
    if config is None:
        return montecarlo.business_cycle_design()
    return load_spec(config)


def _theta_star(arg: str | None, spec: ModelSpec, fallback: ParamVector | None) -> ParamVector:
    if arg is None:
        if fallback is None:
            raise SpecError("no true parameters: give --theta-star or a theta table in the spec file")
        return fallback
    if Path(arg).exists():
        _, theta = load_spec(arg)
        if theta is None:
            raise SpecError(f"{arg} has no theta table")
        return theta
    try:
        values = [float(v) for v in arg.split(",")]
    except ValueError:
        raise SpecError(f"--theta-star: {arg!r} is neither a file nor a comma-separated list") from None
    return ParamVector.from_flat(spec, values)


def _s0(arg: str):
    if arg == "uniform":
        return arg
    try:
        return int(arg)
    except ValueError:
        raise SpecError("--s0 must be an expanded-state index or 'uniform'") from None


# -- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec, theta = _design(args.config)
    theta = _theta_star(args.theta_star, spec, theta)
    if args.n < 1:
        raise SpecError("--n must be positive")
    ss = np.random.SeedSequence(args.seed)
    sx, sy = ss.spawn(2)
    if spec.kernel == "latent_factor":
        sim = simulate_latent_factor(spec, theta, args.n, seed=sy)
        x = None
    else:
        warmup = DEFAULT_WARMUP + spec.p
        m = spec.covariate_dim
        x = simulate_covariates(args.a, warmup + args.n, seed=sx, dim=max(m, 1))[:, :m]
        sim = simulate_tvtp(spec, theta, x, args.n, seed=sy, warmup=warmup)
        x = sim.x
    text = files.data_csv_text(sim.y, x, spec.p, sim.regimes if args.emit_truth else None)
    _emit(text, args.out)
    return 0


def _fit_config(args, spec: ModelSpec, theta0: ParamVector | None) -> FitConfig:
    init = args.init
    if init == "user" and theta0 is None:
        raise SpecError("--init user needs a theta table in the spec file")
    return FitConfig(
        starts=args.starts,
        max_iters=args.max_iters,
        grad_tol=args.grad_tol,
        seed=args.seed,
        s0=_s0(args.s0),
        init=init,
        theta0=theta0 if init == "user" else None,
    )


def cmd_fit(args) -> int:
    spec, theta0 = load_spec(args.config)
    data = files.load_dataset(args.data, spec)
    try:
        res = fit(spec, data, _fit_config(args, spec, theta0))
    except FitError as exc:
        raise NumericalFailure("FitError", str(exc), exc.starts) from None
    files.write_fit_json(res, args.out)
    d = files.fit_to_dict(res)
    report = files.estimate_table([(Path(args.data).stem, d)], estimator=args.estimator)
    if args.report:
        Path(args.report).write_text(report)
    sys.stdout.write(report)
    return 0


def cmd_smooth(args) -> int:
    d = files.read_fit_json(args.fit)
    spec, theta = files.fit_theta(d)
    data = files.load_dataset(args.data, spec)
    s0 = d.get("s0", 0)
    fr = forward_filter(spec, theta, data, s0)
    sm = kim_smoother(spec, theta, data, fr)
    _emit(files.smoothed_csv_text(sm), args.out)
    return 0


def cmd_coverage(args) -> int:
    spec, theta = _design(args.config)
    star = _theta_star(args.theta_star, spec, theta)
    cfg = None
    if args.init == "heuristic":
        cfg = FitConfig(starts=args.starts, seed=args.seed, s0=0)
    elif args.starts > 1:
        cfg = FitConfig(starts=args.starts, seed=args.seed, s0=0, init="user", theta0=star)
    reports = [
        montecarlo.run_coverage(spec, star, n, args.reps, seed=args.seed, level=args.level, a=args.a, jobs=args.jobs, fit_config=cfg)
        for n in args.n
    ]
    paths = montecarlo.write_tables(reports, args.out)
    for r in reports:
        log.info(
            "n=%d reps=%d failed=%d invalid_hessian=%d wall=%.1fs", r.n, r.replications, r.failed, r.invalid_hessian, r.wall_clock["total"]
        )
    sys.stdout.write(montecarlo.coverage_table(reports, "ops"))
    for p in paths.values():
        log.info("wrote %s", p)
    return 0


def cmd_check(args) -> int:
    spec, theta = _design(args.config)
    theta = _theta_star(args.theta_star, spec, theta)
    rep = diagnostics.check_stationarity(spec, theta, draws=args.draws, seed=args.seed)
    out = {"schema_version": "tvtp-check/1", "stationarity": rep.to_dict()}
    if spec.kernel != "constant" or spec.J > 1:
        mom = diagnostics.log_moment_check(spec, theta, draws=max(args.draws, 10_000), seed=args.seed)
        out["log_moment"] = {"estimate": mom.estimate, "se": mom.se, "stable": mom.stable, "path": mom.path}
    text = json.dumps(out, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    status = rep.status
    radius = f"spectral radius {rep.spectral_radius:.6g}" if rep.mode == "constant_A" else f"E|M| {rep.m_norm_estimate:.6g} (se {rep.m_norm_se:.2g})"
    sys.stdout.write(f"mode {rep.mode}: {radius}: {status}\n")
    if "log_moment" in out:
        lm = out["log_moment"]
        sys.stdout.write(f"E|log min q|^2 = {lm['estimate']:.6g} (se {lm['se']:.2g}), stable={lm['stable']}\n")
    return 0


def cmd_lr_test(args) -> int:
    a = files.read_fit_json(args.restricted)
    b = files.read_fit_json(args.full)
    df = args.df if args.df is not None else len(b["param_names"]) - len(a["param_names"])
    if df < 1:
        raise SpecError("degrees of freedom must be positive")
    stat = max(0.0, 2 * (b["loglik"] - a["loglik"]))
    p = lr_pvalue(a["loglik"], b["loglik"], df)
    sys.stdout.write(f"LR statistic {stat!r} df {df} p-value {p!r}\n")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvtp", description="Regime-switching models with time-varying transitions.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a data CSV")
    s.add_argument("--config", help="spec file (TOML or JSON); default is the built-in business-cycle design")
    s.add_argument("--theta-star", help="parameter file or comma-separated values")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--a", type=float, default=0.4, help="AR coefficient of the covariates")
    s.add_argument("--emit-truth", action="store_true", help="add the true regime column")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="maximum likelihood fit")
    f.add_argument("--config", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--starts", type=int, default=5)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--s0", default="0", help="initial expanded state index (0-based) or 'uniform'")
    f.add_argument("--init", choices=("heuristic", "user"), default="heuristic")
    f.add_argument("--max-iters", type=int, default=500)
    f.add_argument("--grad-tol", type=float, default=1e-6)
    f.add_argument("--estimator", choices=("ops", "hessian_based", "demeaned_ops"), default="ops")
    f.add_argument("--out", required=True, help="FitResult JSON")
    f.add_argument("--report", help="also write the estimate table here")
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("smooth", help="smoothed regime probabilities")
    m.add_argument("--fit", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--out")
    m.set_defaults(func=cmd_smooth)

    c = sub.add_parser("coverage", help="coverage experiment")
    c.add_argument("--config")
    c.add_argument("--theta-star")
    c.add_argument("--n", type=int, nargs="+", default=[200])
    c.add_argument("--reps", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--level", type=float, default=0.95)
    c.add_argument("--a", type=float, default=0.4)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--starts", type=int, default=1)
    c.add_argument("--init", choices=("truth", "heuristic"), default="truth", help="start the optimizer at theta* or the heuristic")
    c.add_argument("--out", default="table.csv")
    c.set_defaults(func=cmd_coverage)

    k = sub.add_parser("check", help="stationarity and moment diagnostics")
    k.add_argument("--config")
    k.add_argument("--theta-star")
    k.add_argument("--draws", type=int, default=10_000)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out")
    k.set_defaults(func=cmd_check)

    lr = sub.add_parser("lr-test", help="likelihood-ratio test of two fits")
    lr.add_argument("--restricted", required=True)
    lr.add_argument("--full", required=True)
    lr.add_argument("--df", type=int)
    lr.set_defaults(func=cmd_lr_test)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        sys.stderr.write(json.dumps(exc.payload, default=str) + "\n")
        return 2
    except ZeroLikelihoodError as exc:
        sys.stderr.write(json.dumps({"error": "ZeroLikelihoodError", "message": str(exc)}) + "\n")
        return 2
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except (SpecError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        sys.stderr.write(f"error: {msg}\n")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
