"""Score, observed Hessian and the three asymptotic covariance estimators.

Derivatives are central finite differences taken on the unconstrained scale
and mapped to the economic scale with the Jacobian of the transform.  Every
perturbation of one derivative is evaluated in a single batched filter pass.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .filter import batch_period_logdens
from .model import Dataset, ModelSpec, ParamVector, SpecError, _from_unconstrained, pack, unconstrained_jacobian

EPS = np.finfo(float).eps
INNER_STEP = EPS ** (1 / 3)
OUTER_STEP = EPS ** (1 / 4)

ESTIMATORS = ("hessian_based", "ops", "demeaned_ops")

# maps a (B, P) batch of unconstrained points to (B, n) period values
PeriodFn = Callable[[NDArray], NDArray]


def fd_steps(v: NDArray, scale: float = INNER_STEP) -> NDArray:
    h = scale * np.maximum(1.0, np.abs(v))
    # make v + h exactly representable so the difference quotient uses the true step
    return (v + h) - v


def _score_points(v: NDArray, h: NDArray) -> NDArray:
    P = v.size
    pts = np.repeat(v[None, :], 2 * P, axis=0)
    idx = np.arange(P)
    pts[2 * idx, idx] += h
    pts[2 * idx + 1, idx] -= h
    return pts


def fd_period_scores(fun: PeriodFn, v: NDArray, h: NDArray | None = None) -> NDArray:
    """Central-difference period scores ``(n, P)`` of ``fun`` at ``v``."""
    v = np.asarray(v, dtype=float)
    h = fd_steps(v) if h is None else h
    vals = fun(_score_points(v, h))
    return ((vals[0::2] - vals[1::2]) / (2 * h[:, None])).T


def fd_hessian(fun: PeriodFn, v: NDArray, jac: Callable[[NDArray], NDArray] | None = None) -> NDArray:
    """Hessian of ``sum(fun)`` by central differences of the FD gradient.

    With ``jac`` (returning ``dv/dtheta`` at an unconstrained point) the
    result is the Hessian with respect to the economic parameters:
    ``d/dv [G(v)' grad_v] @ G(v)``.  Symmetrized before returning.
    """
    v = np.asarray(v, dtype=float)
    P = v.size
    ho = fd_steps(v, OUTER_STEP)
    outer = _score_points(v, ho)
    pts = np.concatenate([_score_points(o, fd_steps(o)) for o in outer])
    vals = fun(pts).sum(axis=1).reshape(2 * P, 2 * P)
    grads = np.empty((2 * P, P))
    for r, o in enumerate(outer):
        hi = fd_steps(o)
        g = (vals[r, 0::2] - vals[r, 1::2]) / (2 * hi)
        grads[r] = jac(o).T @ g if jac is not None else g
    D = ((grads[0::2] - grads[1::2]) / (2 * ho[:, None])).T
    H = D @ jac(v) if jac is not None else D
    return (H + H.T) / 2


def _model_fn(spec: ModelSpec, data: Dataset, s0) -> PeriodFn:
    def fun(V: NDArray) -> NDArray:
        return batch_period_logdens(spec, _from_unconstrained(spec, V), data, s0)

    return fun


def _jac_fn(spec: ModelSpec) -> Callable[[NDArray], NDArray]:
    return lambda v: unconstrained_jacobian(spec, _from_unconstrained(spec, v))


@dataclass(frozen=True)
class Score:
    """Gradient of the log-likelihood and its period decomposition."""

    gradient: NDArray[np.float64]
    periods: NDArray[np.float64]


def score(spec: ModelSpec, theta: ParamVector, data: Dataset, s0=0) -> Score:
    """Period scores on the economic scale; their sum is the gradient.

    Raises
    ------
    SpecError
        If a perturbed point gives a non-finite likelihood (``theta`` too
        close to the boundary of the domain).
    """
    v = pack(theta, spec)
    G = unconstrained_jacobian(spec, theta.to_flat())
    per_v = fd_period_scores(_model_fn(spec, data, s0), v)
    if not np.all(np.isfinite(per_v)):
        raise SpecError("non-finite finite differences; theta is on or near the domain boundary")
    periods = per_v @ G
    return Score(periods.sum(axis=0), periods)


def hessian(spec: ModelSpec, theta: ParamVector, data: Dataset, s0=0) -> NDArray[np.float64]:
    """Observed Hessian of the conditional log-likelihood (economic scale)."""
    H = fd_hessian(_model_fn(spec, data, s0), pack(theta, spec), _jac_fn(spec))
    if not np.all(np.isfinite(H)):
        raise SpecError("non-finite Hessian; theta is on or near the domain boundary")
    return H


@dataclass(frozen=True)
class CovarianceBundle:
    """Three estimates of ``Var(theta_hat)``.

    ``valid[name]`` is False when the estimate cannot give intervals: a
    non-positive diagonal for the Hessian-based inverse, or a singular
    information matrix.
    """

    hessian_based: NDArray[np.float64]
    ops: NDArray[np.float64]
    demeaned_ops: NDArray[np.float64]
    valid: dict[str, bool] = field(default_factory=dict)
    score_mean: NDArray[np.float64] | None = None

    def matrix(self, name: str) -> NDArray[np.float64]:
        return getattr(self, name)

    def standard_errors(self, name: str) -> NDArray[np.float64]:
        diag = np.diag(self.matrix(name))
        with np.errstate(invalid="ignore"):
            return np.where(diag > 0, np.sqrt(np.where(diag > 0, diag, 0.0)), np.nan)


def _safe_inv(M: NDArray) -> tuple[NDArray, bool]:
    try:
        if not np.all(np.isfinite(M)) or np.linalg.cond(M) > 1e14:
            raise np.linalg.LinAlgError
        return np.linalg.inv(M), True
    except np.linalg.LinAlgError:
        return np.full(M.shape, np.nan), False


def covariance_bundle(period_scores: NDArray, hess: NDArray, n: int | None = None) -> CovarianceBundle:
    """Hessian-based, outer-product and demeaned outer-product covariances."""
    S = np.asarray(period_scores, dtype=float)
    n = S.shape[0] if n is None else n
    P = S.shape[1]
    if n <= P:
        raise SpecError(f"need more periods ({n}) than parameters ({P})")
    H_inv, h_ok = _safe_inv(-np.asarray(hess, dtype=float))
    if h_ok:
        H_inv = (H_inv + H_inv.T) / 2
        h_ok = bool(np.all(np.diag(H_inv) > 0))
    ops, o_ok = _safe_inv(S.T @ S)
    mean = S.mean(axis=0)
    Sc = S - mean
    dm, d_ok = _safe_inv(Sc.T @ Sc)
    return CovarianceBundle(
        hessian_based=H_inv,
        ops=(ops + ops.T) / 2,
        demeaned_ops=(dm + dm.T) / 2,
        valid={"hessian_based": h_ok, "ops": o_ok, "demeaned_ops": d_ok},
        score_mean=mean,
    )


def normal_quantile(level: float) -> float:
    if not 0 < level < 1:
        raise SpecError("confidence level must lie in (0, 1)")
    return float(stats.norm.ppf((1 + level) / 2))


def confidence_intervals(theta_hat: NDArray, bundle: CovarianceBundle, level: float = 0.95) -> dict[str, NDArray]:
    """Wald intervals per estimator, shape ``(P, 2)``; NaN rows where undefined.

    Covariances are already on the economic scale (the period scores were
    mapped through the transform Jacobian), which is the delta method.
    """
    z = normal_quantile(level)
    theta_hat = np.asarray(theta_hat, dtype=float)
    out = {}
    for name in ESTIMATORS:
        se = bundle.standard_errors(name)
        if not bundle.valid.get(name, True):
            se = np.full_like(theta_hat, np.nan)
        out[name] = np.column_stack([theta_hat - z * se, theta_hat + z * se])
    return out


def lr_pvalue(loglik_restricted: float, loglik_full: float, df: int) -> float:
    """Upper-tail chi-square p-value of the likelihood-ratio statistic."""
    stat = max(0.0, 2.0 * (loglik_full - loglik_restricted))
    return float(stats.chi2.sf(stat, df))
