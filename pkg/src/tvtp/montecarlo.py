"""Coverage experiment: simulate, fit, and count interval hits per estimator.

Each replication draws its randomness from
``SeedSequence(seed, spawn_key=(n, rep))``, so a replication's result does
not depend on how replications are split across worker processes.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .inference import ESTIMATORS
from .model import ModelSpec, ParamVector, SpecError
from .optimize import FitConfig, FitError, fit
from .simulate import DEFAULT_WARMUP, simulate_covariates, simulate_tvtp

logger = logging.getLogger(__name__)

SCHEMA = "tvtp-coverage/1"


@dataclass(frozen=True)
class CoverageSetup:
    """Everything a replication needs; picklable for worker processes."""

    spec: ModelSpec
    theta_star: ParamVector
    level: float = 0.95
    a: float = 0.4
    seed: int = 0
    fit_config: FitConfig | None = None

    def config(self) -> FitConfig:
        if self.fit_config is not None:
            return self.fit_config
        return FitConfig(starts=1, init="user", theta0=self.theta_star, s0=0)


def replication_seeds(seed: int, n: int, rep: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent streams for the covariates and the regime/observation draws."""
    child = np.random.SeedSequence(seed, spawn_key=(n, rep))
    sx, sy = child.spawn(2)
    return sx, sy


def run_replication(setup: CoverageSetup, n: int, rep: int) -> dict[str, Any]:
    """Simulate one sample, fit it and score interval inclusion of theta*."""
    spec, star = setup.spec, setup.theta_star
    sx, sy = replication_seeds(setup.seed, n, rep)
    warmup = DEFAULT_WARMUP + spec.p
    x = simulate_covariates(setup.a, warmup + n, seed=sx, dim=max(spec.covariate_dim, 1))[:, : spec.covariate_dim]
    sim = simulate_tvtp(spec, star, x, n, seed=sy, warmup=warmup)
    rec: dict[str, Any] = {"n": n, "rep": rep}
    t0 = time.perf_counter()
    try:
        res = fit(spec, sim.dataset(), setup.config())
    except (FitError, SpecError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rec.update(status="failed", reason=type(exc).__name__, seconds=time.perf_counter() - t0)
        return rec
    truth = star.to_flat()
    cis = res.intervals(setup.level)
    rec.update(
        status="ok",
        loglik=res.loglik,
        converged=res.converged,
        seconds=time.perf_counter() - t0,
        hessian_valid=bool(res.covariance.valid["hessian_based"]),
    )
    for name in ESTIMATORS:
        lo, hi = cis[name][:, 0], cis[name][:, 1]
        # NaN bounds (undefined intervals) compare False, i.e. non-coverage
        rec[name] = (lo <= truth) & (truth <= hi)
    return rec


def _replication_task(args):
    return run_replication(*args)


@dataclass
class CoverageReport:
    """Per-parameter coverage counts for one sample size."""

    n: int
    replications: int
    level: float
    seed: int
    names: list[str]
    counts: dict[str, np.ndarray]
    invalid_hessian: int
    failed: int
    records: list[dict[str, Any]] = field(default_factory=list)
    wall_clock: dict[str, float] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def fits(self) -> int:
        return self.replications - self.failed

    def fractions(self, estimator: str) -> np.ndarray:
        return self.counts[estimator] / max(self.fits, 1)

    def matched(self, estimator: str) -> np.ndarray:
        """``(fits, P)`` inclusion indicators of the successful replications."""
        rows = [r[estimator] for r in self.records if r["status"] == "ok"]
        return np.array(rows, dtype=bool).reshape(-1, len(self.names))


def run_coverage(
    spec: ModelSpec,
    theta_star: ParamVector,
    n: int,
    replications: int,
    seed: int = 0,
    level: float = 0.95,
    *,
    a: float = 0.4,
    jobs: int = 1,
    fit_config: FitConfig | None = None,
) -> CoverageReport:
    """Run ``replications`` simulate-and-fit rounds at sample size ``n``.

    Failed fits are recorded and left out of the denominator; invalid
    Hessian-based intervals count as non-coverage for that estimator.
    """
    if replications < 1:
        raise SpecError("replications must be >= 1")
    if not 0 < level < 1:
        raise SpecError("level must lie in (0, 1)")
    setup = CoverageSetup(spec, theta_star, level, a, seed, fit_config)
    tasks = [(setup, n, rep) for rep in range(replications)]
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_replication_task, tasks, chunksize=max(1, replications // (4 * jobs))))
    else:
        records = [_replication_task(t) for t in tasks]
    elapsed = time.perf_counter() - t0
    P = spec.n_params
    counts = {name: np.zeros(P, dtype=np.int64) for name in ESTIMATORS}
    invalid = failed = 0
    for rec in records:
        if rec["status"] != "ok":
            failed += 1
            continue
        invalid += not rec["hessian_valid"]
        for name in ESTIMATORS:
            counts[name] += rec[name]
    secs = [r["seconds"] for r in records]
    cfg = setup.config().summary()
    cfg.update(a=a, warmup=DEFAULT_WARMUP + spec.p, start="theta_star" if fit_config is None else cfg["init"])
    logger.info("n=%d: %d reps, %d failed, %.1fs", n, replications, failed, elapsed)
    return CoverageReport(
        n=n,
        replications=replications,
        level=level,
        seed=seed,
        names=spec.param_names,
        counts=counts,
        invalid_hessian=invalid,
        failed=failed,
        records=records,
        wall_clock={"total": elapsed, "mean_fit": float(np.mean(secs)), "max_fit": float(np.max(secs))},
        config=cfg,
    )


# -- tables ----------------------------------------------------------------


def _header(estimator: str, reports: list[CoverageReport]) -> str:
    r0 = reports[0]
    return f"# schema: {SCHEMA} estimator={estimator} level={r0.level} seed={r0.seed}"


def coverage_table(reports: list[CoverageReport], estimator: str) -> str:
    """One estimator panel as CSV text: one row per sample size.

    Only deterministic quantities are written, so the same seed gives the
    same bytes whatever the number of worker processes.
    """
    if not reports:
        raise SpecError("no reports")
    buf = io.StringIO()
    buf.write(_header(estimator, reports) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "replications", "failed", "invalid_hessian", *reports[0].names])
    for rep in reports:
        w.writerow([rep.n, rep.replications, rep.failed, rep.invalid_hessian, *(int(c) for c in rep.counts[estimator])])
    return buf.getvalue()


def replication_table(reports: list[CoverageReport]) -> str:
    """Per-replication inclusion indicators (1/0) for matched-seed comparisons."""
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA} replications level={reports[0].level} seed={reports[0].seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    names = reports[0].names
    cols = [f"{e}:{nm}" for e in ESTIMATORS for nm in names]
    w.writerow(["n", "rep", "status", "loglik", *cols])
    for report in reports:
        for rec in report.records:
            if rec["status"] != "ok":
                w.writerow([rec["n"], rec["rep"], rec["status"], "", *([""] * len(cols))])
                continue
            flags = [int(v) for e in ESTIMATORS for v in rec[e]]
            w.writerow([rec["n"], rec["rep"], "ok", repr(float(rec["loglik"])), *flags])
    return buf.getvalue()


def panel_paths(out: str | Path) -> dict[str, Path]:
    """``table.csv`` -> ``table_hessian_based.csv`` etc. plus the replication file."""
    out = Path(out)
    stem, suffix = out.stem, out.suffix or ".csv"
    paths = {e: out.with_name(f"{stem}_{e}{suffix}") for e in ESTIMATORS}
    paths["replications"] = out.with_name(f"{stem}_replications{suffix}")
    return paths


def write_tables(reports: list[CoverageReport], out: str | Path) -> dict[str, Path]:
    paths = panel_paths(out)
    for e in ESTIMATORS:
        paths[e].write_text(coverage_table(reports, e))
    paths["replications"].write_text(replication_table(reports))
    return paths



BUSINESS_CYCLE_THETA = (-2.33, 0.16, 0.08, 0.17, 0.15, 0.005, 0.50, -1.70, -1.61, -5.66, -4.85)


def business_cycle_design() -> tuple[ModelSpec, ParamVector]:
    """Two-regime mean-switching AR(4) with one logistic covariate.

    The default data-generating process of the coverage experiment and of
    ``simulate`` when no spec file is given.
    """
    spec = ModelSpec(k=4, J=2, d=5, switch_mean=True, kernel="logistic", covariate_dim=1)
    return spec, ParamVector.from_flat(spec, BUSINESS_CYCLE_THETA)
