"""Scaled forward filter, Kim smoother and path-enumeration oracles.

The forward recursion is written once for a batch of parameter vectors so
that finite-difference derivatives cost one vectorized pass instead of one
pass per perturbation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

from .model import Dataset, ModelSpec, ParamVector, SpecError
from .transition import base_transition, covariate_rows, observation_mean, omega_rho

LOG_2PI = np.log(2 * np.pi)

# upper bound on batch_rows * periods * states * J before chunking
_CHUNK_BUDGET = 4_000_000


class ZeroLikelihoodError(FloatingPointError):
    """Every state assigns zero density to an observation."""

    def __init__(self, t: int):
        super().__init__(f"zero likelihood at period t={t}")
        self.t = t


@dataclass(frozen=True)
class FilterResult:
    """Output of :func:`forward_filter`.

    ``predicted[t-1]`` and ``filtered[t-1]`` hold the expanded-state
    probabilities for period ``t``; ``initial`` is the distribution of
    ``S_0`` the recursion started from.
    """

    loglik: float
    period_logdens: NDArray[np.float64]
    predicted: NDArray[np.float64]
    filtered: NDArray[np.float64]
    initial: NDArray[np.float64]


def initial_distribution(spec: ModelSpec, s0) -> NDArray[np.float64]:
    """Distribution of ``S_0`` for a policy: a state index or ``"uniform"``."""
    S = spec.n_states
    if isinstance(s0, str):
        if s0 != "uniform":
            raise SpecError(f"unknown s0 policy {s0!r}")
        return np.full(S, 1.0 / S)
    s0 = int(s0)
    if not 0 <= s0 < S:
        raise SpecError(f"initial state {s0} out of range")
    out = np.zeros(S)
    out[s0] = 1.0
    return out


# -- batched building blocks ----------------------------------------------


def _blocks(spec: ModelSpec, flat: NDArray):
    lay = spec._layout
    B = flat.shape[0]
    mu = flat[:, lay.mu]
    gamma = flat[:, lay.gamma].reshape(B, lay.n_gamma, lay.k)
    sigma = flat[:, lay.sigma]
    return mu, gamma, sigma, flat[:, lay.kernel]


def _means(spec: ModelSpec, mu, gamma, y: NDArray, t_from: int, t_to: int) -> NDArray:
    """Conditional means ``(B, T, S)`` for periods ``t_from..t_to``.

    Period ``t`` observes ``y[p - 1 + t]``.
    """
    states = spec.states
    p, k = spec.p, spec.k
    c0 = states[:, 0]
    mu_idx = (lambda c: c) if spec.switch_mean else (lambda c: np.zeros_like(c))
    g_idx = c0 if spec.switch_ar else np.zeros_like(c0)
    idx = np.arange(t_from, t_to + 1) + p - 1
    out = np.repeat(mu[:, mu_idx(c0)][:, None, :], idx.size, axis=1)
    for j in range(1, k + 1):
        lag_c = states[:, j] if (spec.switch_mean and spec.J > 1) else np.zeros_like(c0)
        ylag = y[idx - j]
        out += gamma[:, g_idx, j - 1][:, None, :] * (ylag[None, :, None] - mu[:, mu_idx(lag_c)][:, None, :])
    return out


def _sigmas(spec: ModelSpec, sigma: NDArray) -> NDArray:
    c0 = spec.states[:, 0]
    return sigma[:, c0] if spec.switch_var else np.repeat(sigma[:, :1], spec.n_states, axis=1)


def _transition_tensor(spec: ModelSpec, kern: NDArray, data: Dataset, means0=None, sig=None) -> NDArray:
    """Base transition probabilities ``(B, T, S, J)`` indexed by origin state.

    ``T`` is 1 for the constant kernel.
    """
    lay = spec._layout
    B, J = kern.shape[0], spec.J
    c0 = spec.states[:, 0]
    if lay.family == "constant":
        free = kern.reshape(B, J, J - 1)
        P = np.concatenate([free, 1.0 - free.sum(axis=2, keepdims=True)], axis=2)
        return P[:, None, c0, :]
    if lay.family in ("logistic", "probit"):
        beta = kern.reshape(B, J, J - 1, lay.m + 1)
        rows = covariate_rows(lay.family, beta, data.x)
        return rows[:, :, c0, :]
    # latent factor: previous shock from the origin state's regimes
    y = data.y
    n = data.n
    resid = (y[spec.p - 1 : spec.p - 1 + n][None, :, None] - means0) / sig[:, None, :]
    alpha, tau, rho = (kern[:, i][:, None, None] for i in range(3))
    w = omega_rho(alpha, tau, rho, c0[None, None, :], resid)
    return np.stack([w, 1.0 - w], axis=-1)


def _run(spec: ModelSpec, flat: NDArray, data: Dataset, init: NDArray, keep: bool):
    """Core recursion for a batch ``flat`` of shape ``(B, P)``."""
    B = flat.shape[0]
    n, S, J = data.n, spec.n_states, spec.J
    mu, gamma, sigma, kern = _blocks(spec, flat)
    sig = _sigmas(spec, sigma)
    if spec.kernel == "latent_factor":
        means_all = _means(spec, mu, gamma, data.y, 0, n)
        means, means0 = means_all[:, 1:], means_all[:, :-1]
    else:
        means, means0 = _means(spec, mu, gamma, data.y, 1, n), None
    Q = _transition_tensor(spec, kern, data, means0, sig)
    ycur = data.y[spec.p : spec.p + n]
    with np.errstate(over="ignore", invalid="ignore"):
        z = (ycur[None, :, None] - means) / sig[:, None, :]
        logg = -0.5 * LOG_2PI - np.log(sig)[:, None, :] - 0.5 * z * z
        shift = logg.max(axis=2)
        g = np.exp(logg - shift[:, :, None])
    logdens = np.empty((B, n))
    pred_all = np.empty((B, n, S)) if keep else None
    filt_all = np.empty((B, n, S)) if keep else None
    f = np.broadcast_to(init, (B, S)).copy()
    varying = Q.shape[1] > 1
    pre = S // J
    with np.errstate(divide="ignore", invalid="ignore"):
        for t in range(n):
            q = Q[:, t] if varying else Q[:, 0]
            joint = (f[:, :, None] * q).reshape(B, pre, J, J).sum(axis=2)
            pred = joint.transpose(0, 2, 1).reshape(B, S)
            num = pred * g[:, t]
            c = num.sum(axis=1)
            ok = c > 0
            f = np.where(ok[:, None], num / np.where(ok, c, 1.0)[:, None], pred)
            logdens[:, t] = np.where(ok, np.log(c) + shift[:, t], -np.inf)
            if keep:
                pred_all[:, t] = pred
                filt_all[:, t] = f
    logdens[np.isnan(logdens)] = -np.inf
    return logdens, pred_all, filt_all, Q


def batch_period_logdens(spec: ModelSpec, flat: NDArray, data: Dataset, s0=0) -> NDArray[np.float64]:
    """Period log predictive densities ``(B, n)`` for a batch of parameters.

    Rows with a zero-likelihood period contain ``-inf`` there; nothing is
    raised, which is what line searches and finite differences want.
    """
    flat = np.atleast_2d(np.asarray(flat, dtype=float))
    init = initial_distribution(spec, s0)
    per_row = max(1, data.n * spec.n_states * spec.J * (64 if spec.kernel == "latent_factor" else 4))
    chunk = max(1, _CHUNK_BUDGET // per_row)
    out = np.empty((flat.shape[0], data.n))
    for start in range(0, flat.shape[0], chunk):
        stop = start + chunk
        out[start:stop] = _run(spec, flat[start:stop], data, init, keep=False)[0]
    return out


def forward_filter(spec: ModelSpec, theta: ParamVector, data: Dataset, s0=0) -> FilterResult:
    """Scaled forward recursion over expanded states.

    ``s0`` is either the index of the conditioning initial expanded state or
    ``"uniform"`` (equal mass on every expanded state).

    Raises
    ------
    ZeroLikelihoodError
        If some period has zero predictive density.
    """
    if data.n < 0:
        raise SpecError("dataset shorter than p")
    init = initial_distribution(spec, s0)
    if data.n == 0:
        S = spec.n_states
        return FilterResult(0.0, np.zeros(0), np.zeros((0, S)), np.zeros((0, S)), init)
    logdens, pred, filt, _ = _run(spec, theta.to_flat()[None, :], data, init, keep=True)
    bad = np.flatnonzero(~np.isfinite(logdens[0]))
    if bad.size:
        raise ZeroLikelihoodError(int(bad[0]) + 1)
    ld = logdens[0]
    return FilterResult(float(ld.sum()), ld, pred[0], filt[0], init)


def loglik(spec: ModelSpec, theta: ParamVector, data: Dataset, s0=0) -> float:
    return forward_filter(spec, theta, data, s0).loglik


def transition_tensor(spec: ModelSpec, theta: ParamVector, data: Dataset) -> NDArray[np.float64]:
    """Base transition rows ``(n, S, J)`` for periods ``1..n`` by origin state."""
    flat = theta.to_flat()[None, :]
    mu, gamma, sigma, kern = _blocks(spec, flat)
    means0 = None
    sig = _sigmas(spec, sigma)
    if spec.kernel == "latent_factor":
        means0 = _means(spec, mu, gamma, data.y, 0, data.n - 1)
    Q = _transition_tensor(spec, kern, data, means0, sig)[0]
    return np.broadcast_to(Q, (data.n,) + Q.shape[1:])


@dataclass(frozen=True)
class SmoothResult:
    """Smoothed probabilities over expanded states and base regimes."""

    smoothed: NDArray[np.float64]
    regimes: NDArray[np.float64]


def kim_smoother(spec: ModelSpec, theta: ParamVector, data: Dataset, result: FilterResult) -> SmoothResult:
    """Backward recursion for ``P(S_t | Y_1..Y_n)`` with time-varying transitions."""
    n, S, J = data.n, spec.n_states, spec.J
    sm = np.zeros((n, S))
    if n == 0:
        return SmoothResult(sm, np.zeros((0, J)))
    Q = transition_tensor(spec, theta, data)
    prefix = np.arange(S) // J
    sm[n - 1] = result.filtered[n - 1]
    for t in range(n - 2, -1, -1):
        pred = result.predicted[t + 1]
        ratio = np.divide(sm[t + 1], pred, out=np.zeros(S), where=pred > 0)
        # destination (b0, a_0..a_{d-2}) has index b0 * S/J + prefix(a)
        R = ratio.reshape(J, S // J)[:, prefix].T
        sm[t] = result.filtered[t] * np.sum(Q[t + 1] * R, axis=1)
        total = sm[t].sum()
        if total > 0:
            sm[t] /= total
    c0 = spec.states[:, 0]
    regimes = np.zeros((n, J))
    for j in range(J):
        regimes[:, j] = sm[:, c0 == j].sum(axis=1)
    return SmoothResult(sm, regimes)


# -- enumeration oracles ----------------------------------------------------

MAX_PATHS = 10_000_000


def _scalar_logg(spec: ModelSpec, theta: ParamVector, data: Dataset, t: int, comps) -> float:
    p = spec.p
    y_t = data.y[p - 1 + t]
    lags = [data.y[p - 1 + t - j] for j in range(1, spec.k + 1)]
    m = observation_mean(spec, theta, comps, lags)
    s = theta.sigma[comps[0]] if spec.switch_var else theta.sigma[0]
    return float(-0.5 * LOG_2PI - np.log(s) - 0.5 * ((y_t - m) / s) ** 2)


def _path_log_weights(spec: ModelSpec, theta: ParamVector, data: Dataset, s0):
    """Log joint weights of every regime path plus the expanded-state paths."""
    S, J, d, n = spec.n_states, spec.J, spec.d, data.n
    starts = list(range(S)) if isinstance(s0, str) else [int(s0)]
    n_paths = len(starts) * J**n
    if n_paths > MAX_PATHS:
        raise SpecError(f"{n_paths} paths exceed the enumeration limit")
    p = spec.p
    qtab = np.empty((n, S, J))
    gtab = np.empty((n, S))
    for t in range(1, n + 1):
        y_lags = [data.y[p - 1 + t - j] for j in range(1, p + 1)]
        x_t = data.x[t - 1] if data.x.shape[1] else None
        for a in range(S):
            comps = tuple(int(c) for c in spec.states[a])
            qtab[t - 1, a] = base_transition(spec, theta, comps, y_lags, x_t)
            gtab[t - 1, a] = _scalar_logg(spec, theta, data, t, comps)
    seqs = np.array(list(itertools.product(range(J), repeat=n)), dtype=np.int64).reshape(J**n, n)
    logw_all, paths_all = [], []
    for s in starts:
        state = np.full(seqs.shape[0], s, dtype=np.int64)
        logw = np.full(seqs.shape[0], np.log(1.0 / len(starts)))
        paths = np.empty_like(seqs)
        with np.errstate(divide="ignore"):
            for t in range(n):
                new = seqs[:, t] * (S // J) + state // J
                logw += np.log(qtab[t, state, seqs[:, t]]) + gtab[t, new]
                paths[:, t] = new
                state = new
        logw_all.append(logw)
        paths_all.append(paths)
    return np.concatenate(logw_all), np.concatenate(paths_all)


def loglik_oracle(spec: ModelSpec, theta: ParamVector, data: Dataset, s0=0) -> float:
    """Conditional log-likelihood by summing over every regime path."""
    if data.n == 0:
        return 0.0
    logw, _ = _path_log_weights(spec, theta, data, s0)
    return float(logsumexp(logw))


def smoothed_oracle(spec: ModelSpec, theta: ParamVector, data: Dataset, s0=0) -> NDArray[np.float64]:
    """Exact posterior expanded-state marginals ``(n, S)`` by enumeration."""
    logw, paths = _path_log_weights(spec, theta, data, s0)
    w = np.exp(logw - logsumexp(logw))
    out = np.zeros((data.n, spec.n_states))
    for t in range(data.n):
        np.add.at(out[t], paths[:, t], w)
    return out
