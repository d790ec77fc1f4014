"""Numerical checks of the stationarity and moment conditions at a given theta.

None of these certify anything beyond what they compute: the switching
condition is a Monte Carlo estimate with a standard error, and the moment
checks are advisory.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import log_ndtr

from .model import ModelSpec, ParamVector, SpecError
from .transition import covariate_rows, expanded_transition_matrix, latent_marginal_w, observation_mean, omega_rho

LOG_2PI = np.log(2 * np.pi)

# draws an (N, m) array of covariates from a Generator
XSampler = Callable[[np.random.Generator, int], NDArray]


def stationary_ar1_sampler(a: float = 0.4) -> XSampler:
    """Marginal law ``N(0, 1/(1 - a^2))`` of a Gaussian AR(1) covariate."""
    if abs(a) >= 1:
        raise SpecError("need |a| < 1")
    sd = 1 / np.sqrt(1 - a * a)

    def draw(rng: np.random.Generator, size: int, dim: int = 1) -> NDArray:
        return rng.standard_normal((size, dim)) * sd

    return draw


def companion_matrix(theta: ParamVector, spec: ModelSpec, regime: int = 0) -> NDArray[np.float64]:
    """``k x k`` companion matrix of the AR polynomial in ``regime``."""
    k = spec.k
    if k < 1:
        raise SpecError("companion matrix needs k >= 1")
    row = theta.gamma[regime if spec.switch_ar else 0]
    A = np.zeros((k, k))
    A[0] = row
    A[1:, :-1] = np.eye(k - 1)
    return A


def spectral_radius(A: ArrayLike) -> float:
    A = np.asarray(A, dtype=float)
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def matrix_norm(M: ArrayLike) -> float:
    """Entrywise absolute sum."""
    return float(np.abs(np.asarray(M)).sum())


def mean_base_matrix(spec: ModelSpec, theta: ParamVector, x_t: ArrayLike | None = None) -> NDArray[np.float64]:
    """``J x J`` base transition probabilities ``q[i, j] = P(j | i)``.

    Covariate kernels are evaluated at ``x_t``.  For the latent-factor
    kernel the previous shock is integrated out (the ``w`` probabilities).
    """
    J = spec.J
    if spec.kernel == "constant":
        return np.array(theta.kernel, dtype=float).reshape(J, J)
    if spec.kernel in ("logistic", "probit"):
        x = np.zeros((1, spec.covariate_dim)) if x_t is None else np.asarray(x_t, float).reshape(1, -1)
        return covariate_rows(spec.kernel, theta.kernel, x)[0]
    alpha, tau, _ = theta.kernel
    w0 = latent_marginal_w(alpha, tau, 0)
    w1 = latent_marginal_w(alpha, tau, 1)
    return np.array([[w0, 1 - w0], [w1, 1 - w1]])


def m_matrix(theta: ParamVector, spec: ModelSpec, x_t: ArrayLike | None = None, q: NDArray | None = None) -> NDArray:
    """Block matrix with block ``(j, i)`` equal to ``kron(A(j), A(j)) * q[i, j]``.

    ``q`` overrides the base transition matrix (used for Monte Carlo draws).
    """
    J, k = spec.J, spec.k
    q = mean_base_matrix(spec, theta, x_t) if q is None else q
    b = k * k
    M = np.zeros((J * b, J * b))
    for j in range(J):
        A = companion_matrix(theta, spec, j)
        K = np.kron(A, A)
        for i in range(J):
            M[j * b : (j + 1) * b, i * b : (i + 1) * b] = K * q[i, j]
    return M


@dataclass(frozen=True)
class StationarityReport:
    """Outcome of :func:`check_stationarity`.

    ``verdict`` is True/False when the condition holds/fails by more than two
    standard errors and None when inconclusive (``status`` says which).
    """

    mode: str
    spectral_radius: float | None
    m_norm_estimate: float | None
    m_norm_se: float | None
    verdict: bool | None
    status: str
    draws: int

    def to_dict(self) -> dict:
        return asdict(self)


def _verdict(est: float, se: float) -> tuple[bool | None, str]:
    if est + 2 * se < 1:
        return True, "stationary"
    if est - 2 * se >= 1:
        return False, "condition fails"
    return None, "inconclusive"


def check_stationarity(
    spec: ModelSpec,
    theta: ParamVector,
    x_sampler: XSampler | None = None,
    draws: int = 10_000,
    seed=None,
) -> StationarityReport:
    """Check the sufficient stationarity condition for ``(spec, theta)``.

    Without switching AR coefficients the spectral radius of the companion
    matrix must be below one.  With switching coefficients the expected
    entrywise norm of ``M(X_t)`` must be below one; it is estimated from
    ``draws`` covariate draws (``x_sampler``, default the stationary law of
    an AR(1) with coefficient 0.4) and is exact for kernels without
    covariates.
    """
    if not spec.switch_ar or spec.J == 1 or spec.k == 0:
        r = spectral_radius(companion_matrix(theta, spec, 0)) if spec.k else 0.0
        ok = r < 1
        return StationarityReport("constant_A", r, None, None, ok, "stationary" if ok else "condition fails", 0)
    if spec.kernel in ("logistic", "probit") and spec.covariate_dim > 0:
        if draws < 1000:
            raise SpecError("Monte Carlo mode needs draws >= 1000")
        rng = np.random.default_rng(seed)
        sampler = x_sampler or stationary_ar1_sampler(0.4)
        xs = np.asarray(sampler(rng, draws), dtype=float).reshape(draws, -1)
        rows = covariate_rows(spec.kernel, theta.kernel, xs)
        # norm is linear in q for fixed A, so each draw reduces to a weighted sum
        kn = np.array([matrix_norm(np.kron(A, A)) for A in (companion_matrix(theta, spec, j) for j in range(spec.J))])
        vals = np.einsum("nij,j->n", rows, kn)
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(draws))
        verdict, status = _verdict(est, se)
        return StationarityReport("switching_A", None, est, se, verdict, status, draws)
    est = matrix_norm(m_matrix(theta, spec))
    verdict, status = _verdict(est, 0.0)
    return StationarityReport("switching_A", None, est, 0.0, verdict, status, 0)


# -- minorization ---------------------------------------------------------


def _log_g(spec: ModelSpec, theta: ParamVector, y_t: float, lags: NDArray) -> NDArray:
    out = np.empty(spec.n_states)
    for s, comps in enumerate(spec.states):
        m = observation_mean(spec, theta, tuple(int(c) for c in comps), lags[: spec.k])
        sig = theta.sigma[comps[0]] if spec.switch_var else theta.sigma[0]
        out[s] = -0.5 * LOG_2PI - np.log(sig) - 0.5 * ((y_t - m) / sig) ** 2
    return out


def minorization_coeff(
    spec: ModelSpec,
    theta: ParamVector,
    y_window: ArrayLike,
    x_window: ArrayLike | None,
    r: int,
) -> float:
    """``min_{s_r, s_0} P(S_r = s_r | S_0 = s_0, window)`` at ``theta``.

    ``y_window`` holds ``Y_{1-p}, ..., Y_{r-1}`` (``p + r - 1`` values) and
    ``x_window`` the covariates ``X_1..X_r``.  Intermediate regimes are
    summed out with the observation densities of periods ``1..r-1``, which
    is the path enumeration written as matrix products.
    """
    if r < 1:
        raise SpecError("r must be >= 1")
    p, S = spec.p, spec.n_states
    if S > 2048:
        raise SpecError("window too large to enumerate")
    y = np.asarray(y_window, dtype=float)
    if y.size != p + r - 1:
        raise SpecError(f"y_window needs p + r - 1 = {p + r - 1} values")
    m = spec.covariate_dim
    x = np.zeros((r, m)) if x_window is None else np.asarray(x_window, dtype=float).reshape(r, -1)
    W = np.eye(S)
    for ell in range(1, r + 1):
        lags = y[p - 2 + ell :: -1][:p] if p else np.zeros(0)
        Q = expanded_transition_matrix(spec, theta, lags, x[ell - 1] if m else None)
        W = W @ Q
        if ell < r:
            lg = _log_g(spec, theta, y[p - 1 + ell], lags)
            W = W * np.exp(lg - lg.max())
            W /= W.sum(axis=1, keepdims=True).max()
    P = W / W.sum(axis=1, keepdims=True)
    return float(P.min())


# -- log moments ------------------------------------------------------------


@dataclass(frozen=True)
class MomentCheck:
    """Monte Carlo moment with a nested-doubling stability flag."""

    estimate: float
    se: float
    draws: int
    stable: bool
    path: list[float]


def _min_log_q(spec: ModelSpec, theta: ParamVector, rng: np.random.Generator, draws: int, x_sampler) -> NDArray:
    J = spec.J
    if spec.kernel == "constant":
        return np.full(draws, np.log(np.min(np.asarray(theta.kernel).reshape(J, J))))
    if spec.kernel == "latent_factor":
        alpha, tau, rho = theta.kernel
        u = rng.standard_normal(draws)
        w0 = omega_rho(alpha, tau, rho, 0, u)
        w1 = omega_rho(alpha, tau, rho, 1, u)
        with np.errstate(divide="ignore"):
            return np.log(np.minimum.reduce([w0, 1 - w0, w1, 1 - w1]))
    sampler = x_sampler or stationary_ar1_sampler(0.4)
    xs = np.asarray(sampler(rng, draws), dtype=float).reshape(draws, -1)
    if spec.kernel == "probit" and J == 2:
        # log scale avoids underflow in the far tails
        beta = np.asarray(theta.kernel).reshape(2, 1 + spec.covariate_dim)
        eta = beta[:, 0][None, :] + xs @ beta[:, 1:].T
        return np.minimum(log_ndtr(eta), log_ndtr(-eta)).min(axis=1)
    rows = covariate_rows(spec.kernel, theta.kernel, xs)
    with np.errstate(divide="ignore"):
        return np.log(rows.reshape(draws, -1).min(axis=1))


def log_moment_check(
    spec: ModelSpec,
    theta: ParamVector,
    draws: int = 10_000,
    seed=None,
    x_sampler: XSampler | None = None,
    power: float = 2.0,
) -> MomentCheck:
    """Estimate ``E|log min q(s1 | s0, X)|**power`` by Monte Carlo.

    The estimate is recomputed on nested prefixes of 1/8, 1/4, 1/2 and all
    of the draws; it is flagged unstable when it is non-finite or when a
    doubling moves it by more than three standard errors of the smaller
    sample.
    """
    if draws < 10_000:
        raise SpecError("log_moment_check needs draws >= 10000")
    rng = np.random.default_rng(seed)
    vals = np.abs(_min_log_q(spec, theta, rng, draws, x_sampler)) ** power
    sizes = [draws // 8, draws // 4, draws // 2, draws]
    path, ses = [], []
    for n in sizes:
        v = vals[:n]
        path.append(float(v.mean()))
        ses.append(float(v.std(ddof=1) / np.sqrt(n)) if np.all(np.isfinite(v)) else float("inf"))
    stable = bool(np.all(np.isfinite(path)))
    if stable:
        for i in range(len(sizes) - 1):
            # the relative slack absorbs summation roundoff on constant samples
            if abs(path[i + 1] - path[i]) > 3 * ses[i] + 1e-12 * abs(path[i]):
                stable = False
    return MomentCheck(path[-1], ses[-1], draws, stable, path)
