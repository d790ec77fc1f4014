"""Transition kernels on base and expanded regime spaces.

Families
--------
constant
    Fixed row-stochastic ``J x J`` matrix.
logistic
    Multinomial logit against the last regime; for ``J = 2`` the row is
    ``(L(x'b_i), 1 - L(x'b_i))`` with ``L`` the logistic function.
probit
    Sequential (continuation-ratio) probit; for ``J = 2`` the row is
    ``(Phi(x'b_i), 1 - Phi(x'b_i))``.
latent_factor
    Threshold crossing of an AR(1) latent factor whose innovation is
    correlated with the previous observation shock.  Internal regime 0 is
    "factor below threshold".
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate
from scipy.special import ndtr

from .model import ModelSpec, ParamVector, SpecError

# -- bivariate normal ------------------------------------------------------

_GL = {n: np.polynomial.legendre.leggauss(n) for n in (6, 12, 20)}


def _bvnu(h: NDArray, k: NDArray, r: NDArray) -> NDArray:
    """Upper bivariate normal probability ``P(X > h, Y > k)``, correlation ``r``.

    Gauss-Legendre integration over the correlation (6, 12 or 20 points by
    ``|r|``), with a separate expansion for ``|r|`` near one; accurate to
    about 1e-15 absolute.
    """
    h, k, r = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float), np.asarray(r, float))
    out = np.empty(h.shape)
    h, k, r, flat = h.ravel(), k.ravel(), r.ravel(), out.ravel()
    ar = np.abs(r)
    groups = [(ar < 0.3, 6), ((ar >= 0.3) & (ar < 0.75), 12), ((ar >= 0.75) & (ar < 0.925), 20)]
    for mask, npts in groups:
        if not mask.any():
            continue
        x, w = _GL[npts]
        hh, kk, rr = h[mask], k[mask], r[mask]
        hk = hh * kk
        hs = (hh * hh + kk * kk) / 2
        asr = np.arcsin(rr) / 2
        sn = np.sin(asr[:, None] * (1 + x[None, :]))
        val = (np.exp((sn * hk[:, None] - hs[:, None]) / (1 - sn**2)) * w).sum(axis=1)
        flat[mask] = val * asr / (2 * np.pi) + ndtr(-hh) * ndtr(-kk)
    mask = ar >= 0.925
    if mask.any():
        x, w = _GL[20]
        flat[mask] = _bvnu_high(h[mask], k[mask], r[mask], x, w)
    np.clip(flat, 0.0, 1.0, out=flat)
    return out


def _bvnu_high(h, k, r, x, w):
    k = np.where(r < 0, -k, k)
    hk = h * k
    bvn = np.zeros(h.shape)
    inner = np.abs(r) < 1
    if inner.any():
        hi, ki, hki = h[inner], k[inner], hk[inner]
        a2 = (1 - r[inner]) * (1 + r[inner])
        a = np.sqrt(a2)
        bs = (hi - ki) ** 2
        c = (4 - hki) / 8
        dd = (12 - hki) / 80
        asr = -(bs / a2 + hki) / 2
        b0 = np.where(asr > -100, a * np.exp(asr) * (1 - c * (bs - a2) * (1 - dd * bs) / 3 + c * dd * a2**2), 0.0)
        b = np.sqrt(bs)
        sp = np.sqrt(2 * np.pi) * ndtr(-b / a)
        b0 = np.where(hki > -100, b0 - np.exp(-hki / 2) * sp * b * (1 - c * bs * (1 - dd * bs) / 3), b0)
        half = a / 2
        xs = (half[:, None] * (1 + x[None, :])) ** 2
        asr2 = -(bs[:, None] / xs + hki[:, None]) / 2
        rs = np.sqrt(1 - xs)
        sp2 = 1 + c[:, None] * xs * (1 + 5 * dd[:, None] * xs)
        ep = np.exp(-(hki[:, None] / 2) * xs / (1 + rs) ** 2) / rs
        term = np.where(asr2 > -100, np.exp(np.maximum(asr2, -700.0)) * (sp2 - ep), 0.0)
        bvn[inner] = (half * (term * w).sum(axis=1) - b0) / (2 * np.pi)
    pos = r > 0
    res = np.where(pos, bvn + ndtr(-np.maximum(h, k)), 0.0)
    neg = ~pos
    L = np.where(h < 0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
    res = np.where(neg & (h >= k), -bvn, res)
    res = np.where(neg & (h < k), L - bvn, res)
    return res


def bvn_cdf(h: ArrayLike, k: ArrayLike, r: ArrayLike) -> NDArray:
    """Standard bivariate normal CDF ``P(X <= h, Y <= k)`` with correlation ``r``."""
    return _bvnu(-np.asarray(h, float), -np.asarray(k, float), r)


# -- latent factor ---------------------------------------------------------


def omega_rho(alpha, tau, rho, s_prev, u_prev) -> NDArray:
    """Probability that the latent factor stays/lands below the threshold.

    Returns ``P(W_t < tau | regime_{t-1} = s_prev, U_{t-1} = u_prev)`` where
    ``s_prev`` is 0 (below threshold) or 1.  The truncated Gaussian integral
    over the previous factor value equals a bivariate normal probability,
    which is what gets evaluated here.  Broadcasts over all arguments.
    """
    alpha, tau, rho, u_prev = (np.asarray(a, float) for a in (alpha, tau, rho, u_prev))
    s_prev = np.asarray(s_prev)
    if np.any(np.abs(alpha) >= 1) or np.any(np.abs(rho) >= 1):
        raise SpecError("omega_rho needs |alpha| < 1 and |rho| < 1")
    if not np.all(np.isfinite(u_prev)):
        raise SpecError("omega_rho needs a finite previous shock")
    ca = np.sqrt(1 - alpha**2)
    cr = np.sqrt(1 - rho**2)
    c = tau * ca
    A = (tau - rho * u_prev) / cr
    B = alpha / (ca * cr)
    nb = np.sqrt(1 + B**2)
    h, corr = A / nb, B / nb
    below = bvn_cdf(h, c, corr) / ndtr(c)
    above = bvn_cdf(h, -c, -corr) / ndtr(-c)
    return np.clip(np.where(s_prev == 0, below, above), 0.0, 1.0)


def latent_marginal_w(alpha: float, tau: float, s_prev: int) -> float:
    """Stay-below probability with the previous shock integrated out.

    Plain adaptive quadrature of the zero-correlation display; this is the
    ``w`` used for the stationarity condition and as an independent check of
    :func:`omega_rho` at ``rho = 0``.
    """
    ca = np.sqrt(1 - alpha**2)
    c = tau * ca

    def f(x):
        return ndtr(tau - alpha * x / ca) * np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)

    opts = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
    if s_prev == 0:
        num = integrate.quad(f, -np.inf, c, **opts)[0]
        return num / ndtr(c)
    num = integrate.quad(f, c, np.inf, **opts)[0]
    return num / ndtr(-c)


# -- base kernels ----------------------------------------------------------


def _softmax_last_ref(eta: NDArray) -> NDArray:
    """Softmax over ``(eta_1..eta_{J-1}, 0)`` along the last axis."""
    z = np.concatenate([eta, np.zeros(eta.shape[:-1] + (1,))], axis=-1)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _sequential_probit(eta: NDArray) -> NDArray:
    stay = ndtr(eta)
    leave = ndtr(-eta)
    J = eta.shape[-1] + 1
    out = np.empty(eta.shape[:-1] + (J,))
    rest = np.ones(eta.shape[:-1])
    for j in range(J - 1):
        out[..., j] = rest * stay[..., j]
        rest = rest * leave[..., j]
    out[..., J - 1] = rest
    return out


def covariate_rows(family: str, beta: NDArray, x: NDArray) -> NDArray:
    """Base transition rows for logistic/probit kernels.

    ``beta`` has shape ``(..., J, J-1, 1+m)`` and ``x`` shape ``(T, m)``; the
    result has shape ``(..., T, J, J)`` indexed ``[time, origin, target]``.
    """
    xt = np.concatenate([np.ones((x.shape[0], 1)), x], axis=1)
    eta = np.einsum("...ijc,tc->...tij", beta, xt)
    if family == "logistic":
        return _softmax_last_ref(eta)
    return _sequential_probit(eta)


def observation_mean(spec: ModelSpec, theta: ParamVector, regimes: Sequence[int], y_lags: Sequence[float]) -> float:
    """Conditional mean of ``Y_t`` given regimes ``(s_t, s_{t-1}, ...)``.

    ``y_lags`` is ``(Y_{t-1}, ..., Y_{t-k})``, most recent first.
    """
    mu = theta.mu if spec.switch_mean else np.repeat(theta.mu, spec.J)
    gam = theta.gamma if spec.switch_ar else np.repeat(theta.gamma, spec.J, axis=0)
    s0 = regimes[0]
    m = mu[s0]
    for j in range(1, spec.k + 1):
        lag_regime = regimes[j] if spec.switch_mean and spec.J > 1 else 0
        m += gam[s0, j - 1] * (y_lags[j - 1] - mu[lag_regime])
    return float(m)


def _sigma_of(spec: ModelSpec, theta: ParamVector, regime: int) -> float:
    return float(theta.sigma[regime] if spec.switch_var else theta.sigma[0])


def base_transition(
    spec: ModelSpec,
    theta: ParamVector,
    origin: Sequence[int],
    y_lags: Sequence[float] | None = None,
    x_t: ArrayLike | None = None,
) -> NDArray[np.float64]:
    """Probability row over the ``J`` next base regimes.

    Parameters
    ----------
    origin : sequence of int
        Previous expanded state ``(s_{t-1}, ..., s_{t-d})``; logistic, probit
        and constant kernels only look at the first component.
    y_lags : sequence of float
        ``(Y_{t-1}, ..., Y_{t-p})``, most recent first.  Needed by the
        latent-factor kernel to form the previous standardized shock.
    x_t : array_like
        Covariates ``X_t``.
    """
    fam = spec.kernel
    i = int(origin[0])
    if fam == "constant":
        return theta.kernel[i].copy()
    if fam in ("logistic", "probit"):
        x = np.zeros(spec.covariate_dim) if x_t is None else np.asarray(x_t, float).ravel()
        if not np.all(np.isfinite(x)):
            raise SpecError("covariates must be finite")
        return covariate_rows(fam, theta.kernel, x[None, :])[0, i]
    if y_lags is None or len(y_lags) < spec.k + 1:
        raise SpecError("latent-factor kernel needs k + 1 lagged observations")
    sig = _sigma_of(spec, theta, i)
    if sig <= 0:
        raise SpecError("latent-factor kernel needs sigma > 0")
    u = (y_lags[0] - observation_mean(spec, theta, origin, y_lags[1:])) / sig
    alpha, tau, rho = theta.kernel
    w = float(omega_rho(alpha, tau, rho, i, u))
    return np.array([w, 1.0 - w])


def expanded_transition_matrix(
    spec: ModelSpec, theta: ParamVector, y_lags: Sequence[float] | None = None, x_t: ArrayLike | None = None
) -> NDArray[np.float64]:
    """``J**d x J**d`` transition matrix on expanded states.

    Entry ``(a, b)`` is the base probability of ``b``'s current regime given
    origin ``a``, times the lag-consistency indicator.
    """
    S, J = spec.n_states, spec.J
    Q = np.zeros((S, S))
    for a, comps in enumerate(spec.states):
        row = base_transition(spec, theta, tuple(comps), y_lags, x_t)
        prefix = a // J
        for b0 in range(J):
            Q[a, b0 * (S // J) + prefix] = row[b0]
    return Q
