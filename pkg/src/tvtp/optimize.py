"""Maximum likelihood by BFGS over the unconstrained parameterization."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.special import logit, ndtri

from .filter import batch_period_logdens, initial_distribution
from .inference import (
    CovarianceBundle,
    confidence_intervals,
    covariance_bundle,
    fd_hessian,
    fd_period_scores,
)
from .model import (
    Dataset,
    ModelSpec,
    ParamVector,
    SpecError,
    _from_unconstrained,
    pack,
    permute_regimes,
    permute_state,
    regime_order,
    unconstrained_jacobian,
)

logger = logging.getLogger(__name__)


class FitError(RuntimeError):
    """No start converged; ``starts`` carries per-start diagnostics."""

    def __init__(self, message: str, starts: list[dict[str, Any]]):
        super().__init__(message)
        self.starts = starts


@dataclass
class FitConfig:
    starts: int = 5
    max_iters: int = 500
    grad_tol: float = 1e-6
    seed: int = 0
    s0: int | str = 0
    init: str = "heuristic"
    theta0: ParamVector | None = None
    covariance: bool = True

    def __post_init__(self) -> None:
        if self.starts < 1:
            raise SpecError("starts must be >= 1")
        if self.max_iters < 1 or self.grad_tol <= 0:
            raise SpecError("max_iters and grad_tol must be positive")
        if self.init not in ("heuristic", "user"):
            raise SpecError("init must be 'heuristic' or 'user'")
        if self.init == "user" and self.theta0 is None:
            raise SpecError("init='user' needs theta0")

    def summary(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("theta0")
        return d


@dataclass
class OptimizeResult:
    v: NDArray[np.float64]
    fun: float
    grad: NDArray[np.float64]
    converged: bool
    iterations: int
    n_evals: int
    message: str
    trace: list[float] = field(default_factory=list)


def bfgs(fun, grad, v0: NDArray, *, max_iters: int = 500, grad_tol: float = 1e-6, ftol: float = 1e-10) -> OptimizeResult:
    """Minimize ``fun`` with BFGS and Armijo backtracking.

    Non-finite trial values count as ``+inf``.  Converged means the sup-norm
    of the gradient is at most ``grad_tol`` and the last accepted step
    changed the objective by at most ``ftol`` relatively.
    """
    v = np.asarray(v0, dtype=float).copy()
    f = float(fun(v))
    if not np.isfinite(f):
        return OptimizeResult(v, f, np.full(v.size, np.nan), False, 0, 1, "non-finite objective at start")
    g = grad(v)
    n_evals = 1
    Hinv = np.eye(v.size)
    first = True
    rel_change = 0.0
    trace = [f]
    message = "iteration limit"
    it = 0
    for it in range(max_iters):
        if not np.all(np.isfinite(g)):
            message = "non-finite gradient"
            break
        if np.max(np.abs(g)) <= grad_tol and rel_change <= ftol:
            message = "converged"
            break
        d = -Hinv @ g
        slope = g @ d
        if slope >= 0:
            Hinv = np.eye(v.size)
            d, slope = -g, -(g @ g)
        big = np.max(np.abs(d))
        if big > 5.0:
            d *= 5.0 / big
            slope *= 5.0 / big
        step = 1.0
        accepted = False
        for _ in range(50):
            trial = v + step * d
            ft = float(fun(trial))
            n_evals += 1
            if np.isfinite(ft) and ft <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            message = "line search failed"
            break
        assert ft <= f
        g_new = grad(trial)
        s, y = trial - v, g_new - g
        rel_change = abs(f - ft) / max(1.0, abs(f))
        v, f = trial, ft
        trace.append(f)
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                Hinv = np.eye(v.size) * (sy / (y @ y))
                first = False
            rho = 1.0 / sy
            Hy = Hinv @ y
            Hinv = Hinv + ((sy + y @ Hy) * rho**2) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
        g = g_new
    else:
        it = max_iters
    converged = bool(np.all(np.isfinite(g)) and np.max(np.abs(g)) <= grad_tol and rel_change <= ftol)
    if message == "line search failed" and np.max(np.abs(g)) <= grad_tol:
        converged = True
    return OptimizeResult(v, f, g, converged, it, n_evals, message, trace)


# -- initial values --------------------------------------------------------


def heuristic_init(spec: ModelSpec, data: Dataset) -> ParamVector:
    """Deterministic starting values from simple sample statistics.

    Means are spread evenly over ``mean(y) +/- sd(y)``; AR coefficients come
    from least squares on the demeaned lags; ``sigma`` is the residual sd;
    kernels start from a 0.9 stay probability (latent factor: alpha 0.5,
    tau 0, rho 0).
    """
    lay = spec._layout
    if data.n < 10 * spec.n_params:
        raise SpecError(f"heuristic start needs n >= {10 * spec.n_params}")
    y = data.y
    yw = y[spec.p :]
    ybar, sd = yw.mean(), yw.std()
    if not sd > 0:
        raise SpecError("series has zero variance")
    J, k = spec.J, spec.k
    mu = np.linspace(ybar - sd, ybar + sd, J) if (spec.switch_mean and J > 1) else np.array([ybar])
    if k:
        idx = np.arange(spec.p, y.size)
        X = np.column_stack([y[idx - j] - ybar for j in range(1, k + 1)])
        gamma = np.linalg.lstsq(X, y[idx] - ybar, rcond=None)[0]
        resid = y[idx] - ybar - X @ gamma
    else:
        gamma = np.zeros(0)
        resid = yw - ybar
    sigma = np.full(lay.n_sigma, resid.std())
    stay = 0.9
    row = lambda i: np.where(np.arange(J) == i, stay, (1 - stay) / max(J - 1, 1))  # noqa: E731
    if spec.kernel == "constant":
        kern = np.concatenate([row(i)[: J - 1] for i in range(J)]) if J > 1 else np.zeros(0)
    elif spec.kernel == "logistic":
        beta = np.zeros((J, J - 1, lay.m + 1))
        for i in range(J):
            r = row(i)
            beta[i, :, 0] = np.log(r[: J - 1] / r[J - 1])
        kern = beta.ravel()
        if J == 2:
            kern = np.zeros((2, 1, lay.m + 1))
            kern[0, 0, 0], kern[1, 0, 0] = logit(stay), logit(1 - stay)
            kern = kern.ravel()
    elif spec.kernel == "probit":
        beta = np.zeros((J, J - 1, lay.m + 1))
        for i in range(J):
            r, rest = row(i), 1.0
            for j in range(J - 1):
                beta[i, j, 0] = ndtri(r[j] / rest)
                rest -= r[j]
        kern = beta.ravel()
    else:
        kern = np.array([0.5, 0.0, 0.0])
    flat = np.concatenate([mu, np.tile(gamma, lay.n_gamma), sigma, kern])
    return ParamVector.from_flat(spec, flat)


# -- fit -------------------------------------------------------------------


@dataclass
class FitResult:
    """Maximum likelihood estimate with derivative-based covariances."""

    spec: ModelSpec
    theta: ParamVector
    loglik: float
    n: int
    s0: int | str
    converged: bool
    gradient: NDArray[np.float64]
    period_scores: NDArray[np.float64] | None
    hessian: NDArray[np.float64] | None
    covariance: CovarianceBundle | None
    starts: list[dict[str, Any]]
    config: dict[str, Any]
    optimizer: dict[str, Any]

    @property
    def names(self) -> list[str]:
        return self.spec.param_names

    def standard_errors(self, estimator: str = "ops") -> NDArray[np.float64]:
        if self.covariance is None:
            raise SpecError("covariances were not computed")
        se = self.covariance.standard_errors(estimator)
        if not self.covariance.valid[estimator]:
            se = np.full(se.shape, np.nan)
        return se

    def intervals(self, level: float = 0.95) -> dict[str, NDArray[np.float64]]:
        if self.covariance is None:
            raise SpecError("covariances were not computed")
        return confidence_intervals(self.theta.to_flat(), self.covariance, level)


def _objective(spec: ModelSpec, data: Dataset, s0):
    def fun(v):
        ld = batch_period_logdens(spec, _from_unconstrained(spec, v[None, :]), data, s0)[0]
        total = ld.sum()
        return -total if np.isfinite(total) else np.inf

    def grad(v):
        per = fd_period_scores(lambda V: batch_period_logdens(spec, _from_unconstrained(spec, V), data, s0), v)
        return -per.sum(axis=0)

    return fun, grad


def _start_points(spec: ModelSpec, data: Dataset, config: FitConfig) -> list[NDArray]:
    base = config.theta0 if config.init == "user" else heuristic_init(spec, data)
    v0 = pack(base, spec)
    pts = [v0]
    if config.starts > 1:
        rng = np.random.default_rng(config.seed)
        scale = np.full(v0.size, 0.5)
        yw = data.y[spec.p :]
        scale[spec._layout.mu] *= max(yw.std(), 1e-8)
        for _ in range(config.starts - 1):
            pts.append(v0 + scale * rng.standard_normal(v0.size))
    return pts


def fit(spec: ModelSpec, data: Dataset, config: FitConfig | None = None) -> FitResult:
    """Maximize the conditional log-likelihood from several starts.

    The best converged start (ties go to the lower start index) is relabeled
    so regime means increase; the initial state ``s0`` is relabeled with it,
    which leaves the likelihood unchanged, and the result reports ``s0`` in
    the new labels.  The score, Hessian and covariance bundle are attached.

    Raises
    ------
    FitError
        When no start converges.
    """
    config = config or FitConfig()
    initial_distribution(spec, config.s0)
    fun, grad = _objective(spec, data, config.s0)
    runs: list[OptimizeResult] = []
    diag: list[dict[str, Any]] = []
    for i, v0 in enumerate(_start_points(spec, data, config)):
        res = bfgs(fun, grad, v0, max_iters=config.max_iters, grad_tol=config.grad_tol)
        runs.append(res)
        diag.append(
            {
                "start": i,
                "loglik": -res.fun,
                "converged": res.converged,
                "iterations": res.iterations,
                "grad_inf": float(np.max(np.abs(res.grad))) if np.all(np.isfinite(res.grad)) else float("nan"),
                "message": res.message,
            }
        )
        logger.debug("start %d: %s", i, diag[-1])
    ok = [i for i, r in enumerate(runs) if r.converged]
    if not ok:
        raise FitError("no start converged", diag)
    best_i = min(ok, key=lambda i: (runs[i].fun, i))
    best = runs[best_i]
    theta = ParamVector.from_flat(spec, _from_unconstrained(spec, best.v))
    perm = regime_order(theta)
    s0 = config.s0
    v = best.v
    grad_v = best.grad
    if not np.array_equal(perm, np.arange(spec.J)):
        # relabel the initial state with the regimes so the objective is unchanged
        theta = permute_regimes(theta, perm)
        if not isinstance(s0, str):
            s0 = permute_state(spec, int(s0), perm)
        fun, grad = _objective(spec, data, s0)
        v = pack(theta, spec)
        grad_v = grad(v)
    G = unconstrained_jacobian(spec, theta.to_flat())
    gradient = -grad_v @ G
    period_scores = hess = bundle = None
    if config.covariance:
        period_fn = lambda V: batch_period_logdens(spec, _from_unconstrained(spec, V), data, s0)  # noqa: E731
        period_scores = fd_period_scores(period_fn, v) @ G
        jac = lambda u: unconstrained_jacobian(spec, _from_unconstrained(spec, u))  # noqa: E731
        hess = fd_hessian(period_fn, v, jac)
        bundle = covariance_bundle(period_scores, hess, data.n)
    return FitResult(
        spec=spec,
        theta=theta,
        loglik=-best.fun,
        n=data.n,
        s0=s0,
        converged=best.converged,
        gradient=gradient,
        period_scores=period_scores,
        hessian=hess,
        covariance=bundle,
        starts=diag,
        config=config.summary(),
        optimizer={
            "best_start": best_i,
            "iterations": best.iterations,
            "n_evals": best.n_evals,
            "message": best.message,
            "relabel": [int(p) + 1 for p in perm],
            "grad_inf": float(np.max(np.abs(grad_v))),
            "final_step_values": [float(x) for x in best.trace[-3:]],
        },
    )
