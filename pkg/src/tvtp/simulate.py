"""Synthetic data from the supported data-generating processes.

Every routine takes an integer seed (or a :class:`numpy.random.SeedSequence`)
and draws all of its randomness from one ``default_rng`` stream, so outputs
are fully determined by ``(seed, spec, theta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .model import Dataset, ModelSpec, ParamVector, SpecError
from .transition import base_transition, covariate_rows, observation_mean

DEFAULT_WARMUP = 500
MIN_SIGMA = 1e-8


@dataclass(frozen=True)
class Simulation:
    """Simulated sample.

    ``y`` has ``n + p`` values (the first ``p`` condition the likelihood),
    ``regimes`` holds the 0-based base regime behind each ``y`` value and
    ``initial_state`` is the expanded state at period 0.
    """

    y: NDArray[np.float64]
    x: NDArray[np.float64]
    regimes: NDArray[np.int64]
    initial_state: int
    p: int
    latent: NDArray[np.float64] | None = None
    shocks: NDArray[np.float64] | None = None

    def dataset(self) -> Dataset:
        return Dataset(y=self.y, x=self.x, p=self.p)


def simulate_covariates(a: float, n: int, burnin: int = 200, seed=None, dim: int = 1) -> NDArray[np.float64]:
    """Stationary Gaussian AR(1) covariates ``X_t = a X_{t-1} + xi_t``.

    Returns an ``(n, dim)`` array; columns are independent.
    """
    if abs(a) >= 1:
        raise SpecError("covariate AR coefficient must satisfy |a| < 1")
    rng = np.random.default_rng(seed)
    total = burnin + n
    xi = rng.standard_normal((total, dim))
    x = np.empty((total, dim))
    prev = rng.standard_normal(dim) / np.sqrt(1 - a * a)
    for t in range(total):
        prev = a * prev + xi[t]
        x[t] = prev
    return x[burnin:]


def _check_theta(spec: ModelSpec, theta: ParamVector) -> None:
    if np.any(theta.sigma < MIN_SIGMA):
        raise SpecError(f"sigma below {MIN_SIGMA} is not simulated")


def simulate_tvtp(
    spec: ModelSpec,
    theta: ParamVector,
    x: NDArray | None,
    n: int,
    seed=None,
    *,
    warmup: int | None = None,
    s_init: int | str = "uniform",
) -> Simulation:
    """Simulate regimes from the transition kernel, then ``Y`` given regimes.

    The first ``warmup`` periods (default ``500 + p``) are discarded; the
    covariates ``x`` must cover them, i.e. have at least ``warmup + n`` rows
    when the kernel uses covariates (the last rows are used).  ``s_init`` is
    the regime used for the pre-sample history, or ``"uniform"`` to draw it.
    """
    _check_theta(spec, theta)
    warmup = DEFAULT_WARMUP + spec.p if warmup is None else warmup
    rng = np.random.default_rng(seed)
    J, k, p = spec.J, spec.k, spec.p
    total = warmup + n
    uses_x = spec.kernel in ("logistic", "probit")
    m = spec.covariate_dim
    if uses_x:
        x = np.asarray(x, dtype=float).reshape(-1, m) if m else np.zeros((total, 0))
        if x.shape[0] < total:
            raise SpecError(f"need {total} covariate rows (warmup + n), got {x.shape[0]}")
        x = x[-total:]
        rows = covariate_rows(spec.kernel, theta.kernel, x)
    else:
        x = np.zeros((total, m)) if x is None or np.size(x) == 0 else np.asarray(x, dtype=float).reshape(-1, m)[-total:]
        if x.shape[0] < total:
            x = np.vstack([np.zeros((total - x.shape[0], m)), x])
    hist = max(spec.d, k + 1, p)
    if s_init == "uniform":
        init_regimes = rng.integers(0, J, size=hist)
    else:
        init_regimes = np.full(hist, int(s_init))
    mu = theta.mu if spec.switch_mean else np.repeat(theta.mu, J)
    reg = np.empty(hist + total, dtype=np.int64)
    y = np.empty(hist + total)
    reg[:hist] = init_regimes
    y[:hist] = mu[init_regimes]
    unif = rng.random(total)
    shocks = rng.standard_normal(total)
    for i in range(total):
        t = hist + i
        origin = tuple(int(r) for r in reg[t - 1 : t - 1 - spec.d : -1]) if t - 1 - spec.d >= 0 else tuple(
            int(r) for r in reg[t - 1 :: -1][: spec.d]
        )
        y_lags = y[t - 1 :: -1][:p]
        if uses_x:
            row = rows[i, origin[0]]
        elif spec.kernel == "constant":
            row = theta.kernel[origin[0]]
        else:
            row = base_transition(spec, theta, origin, y_lags)
        new = int(np.searchsorted(np.cumsum(row), unif[i], side="right"))
        reg[t] = min(new, J - 1)
        regimes_now = tuple(int(r) for r in reg[t : t - k - 1 : -1]) if t - k - 1 >= 0 else tuple(
            int(r) for r in reg[t::-1][: k + 1]
        )
        sig = theta.sigma[reg[t]] if spec.switch_var else theta.sigma[0]
        y[t] = observation_mean(spec, theta, regimes_now, y_lags[:k]) + sig * shocks[i]
    keep = slice(hist + warmup - p, hist + total)
    regimes = reg[keep]
    start = hist + warmup - 1
    s0 = spec.state_index(tuple(int(r) for r in reg[start : start - spec.d : -1]))
    return Simulation(
        y=y[keep].copy(),
        x=x[warmup:].copy(),
        regimes=regimes.copy(),
        initial_state=s0,
        p=p,
        shocks=shocks[warmup - p :].copy(),
    )


def simulate_latent_factor(
    spec: ModelSpec, theta: ParamVector, n: int, seed=None, *, warmup: int | None = None
) -> Simulation:
    """Simulate the threshold-crossing latent AR(1) factor model directly.

    ``W_t = alpha W_{t-1} + V_t`` with ``W_0`` from the stationary law,
    ``(U_t, V_{t+1})`` jointly normal with correlation ``rho`` and regime 1
    iff ``W_t >= tau``.  Returned ``latent`` and ``shocks`` are aligned with
    ``y``.
    """
    if spec.kernel != "latent_factor":
        raise SpecError("simulate_latent_factor needs the latent_factor kernel")
    _check_theta(spec, theta)
    alpha, tau, rho = theta.kernel
    warmup = DEFAULT_WARMUP + spec.p if warmup is None else warmup
    rng = np.random.default_rng(seed)
    k, p = spec.k, spec.p
    total = warmup + n
    mu = theta.mu if spec.switch_mean else np.repeat(theta.mu, 2)
    hist = max(spec.d, k + 1, p)
    w = np.empty(hist + total)
    u = np.zeros(hist + total)
    reg = np.empty(hist + total, dtype=np.int64)
    y = np.empty(hist + total)
    w[:hist] = rng.standard_normal(hist) / np.sqrt(1 - alpha**2)
    reg[:hist] = (w[:hist] >= tau).astype(np.int64)
    y[:hist] = mu[reg[:hist]]
    eps_u = rng.standard_normal(total)
    eps_v = rng.standard_normal(total)
    for i in range(total):
        t = hist + i
        v_t = rho * u[t - 1] + np.sqrt(1 - rho**2) * eps_v[i]
        w[t] = alpha * w[t - 1] + v_t
        reg[t] = int(w[t] >= tau)
        u[t] = eps_u[i]
        regimes_now = tuple(int(r) for r in reg[t : t - k - 1 : -1])
        y_lags = y[t - 1 :: -1][:k]
        sig = theta.sigma[reg[t]] if spec.switch_var else theta.sigma[0]
        y[t] = observation_mean(spec, theta, regimes_now, y_lags) + sig * u[t]
    keep = slice(hist + warmup - p, hist + total)
    start = hist + warmup - 1
    s0 = spec.state_index(tuple(int(r) for r in reg[start : start - spec.d : -1]))
    return Simulation(
        y=y[keep].copy(),
        x=np.zeros((n, spec.covariate_dim)),
        regimes=reg[keep].copy(),
        initial_state=s0,
        p=p,
        latent=w[keep].copy(),
        shocks=u[keep].copy(),
    )


def latent_transition_frequency(
    alpha: float,
    tau: float,
    rho: float,
    s_prev: int,
    u_prev: float | None,
    draws: int = 1_000_000,
    seed=None,
) -> tuple[float, float]:
    """Monte Carlo ``P(W_t < tau | regime_{t-1}, U_{t-1} = u_prev)``.

    Draws ``W_{t-1}`` from its stationary law restricted to the side of the
    threshold given by ``s_prev`` (rejection sampling) and ``V_t`` from its
    conditional law given ``U_{t-1}``.  With ``u_prev=None`` the previous
    shock is drawn from N(0, 1) as well, which targets the marginal
    transition probability.  Returns the frequency and its binomial
    standard error.
    """
    rng = np.random.default_rng(seed)
    sd = 1 / np.sqrt(1 - alpha**2)
    kept = []
    got = 0
    while got < draws:
        cand = rng.standard_normal(2 * (draws - got) + 1000) * sd
        cand = cand[cand < tau] if s_prev == 0 else cand[cand >= tau]
        kept.append(cand)
        got += cand.size
    w_prev = np.concatenate(kept)[:draws]
    u = rng.standard_normal(draws) if u_prev is None else u_prev
    v = rho * u + np.sqrt(1 - rho**2) * rng.standard_normal(draws)
    freq = float(np.mean(alpha * w_prev + v < tau))
    return freq, float(np.sqrt(max(freq * (1 - freq), 1e-300) / draws))
