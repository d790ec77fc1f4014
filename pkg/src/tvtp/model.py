"""Model class, expanded regime space and parameter transforms.

Regimes are 0-based internally and 1-based in every file or report.  An
expanded state is the tuple ``(s_t, s_{t-1}, ..., s_{t-d+1})`` and states are
enumerated lexicographically with the current regime as the most significant
digit, so ``index = sum(s_c * J**(d-1-c))``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

FAMILIES = ("constant", "logistic", "probit", "latent_factor")


class SpecError(ValueError):
    """Invalid model specification, parameter value or dataset."""


@dataclass(frozen=True)
class ModelSpec:
    """Structural description of a regime-switching autoregression.

    Parameters
    ----------
    k : int
        Autoregressive order.
    J : int
        Number of base regimes.
    d : int
        Number of regime lags carried in the expanded state.
    switch_mean, switch_ar, switch_var : bool
        Which parts of the observation equation depend on the regime.
    kernel : str
        Transition family, one of ``constant``, ``logistic``, ``probit`` or
        ``latent_factor``.
    covariate_dim : int
        Dimension of the covariate vector entering logistic/probit kernels.
    p : int, optional
        Number of conditioning observations. Defaults to ``k`` (``k + 1`` for
        the latent-factor kernel, which needs the previous residual).
    """

    k: int = 0
    J: int = 2
    d: int = 1
    switch_mean: bool = True
    switch_ar: bool = False
    switch_var: bool = False
    kernel: str = "constant"
    covariate_dim: int = 0
    p: int | None = None

    def __post_init__(self) -> None:
        if self.kernel not in FAMILIES:
            raise SpecError(f"unknown kernel family {self.kernel!r}")
        if self.k < 0 or self.J < 1 or self.d < 1 or self.covariate_dim < 0:
            raise SpecError("need k >= 0, J >= 1, d >= 1, covariate_dim >= 0")
        p_min = self.k + 1 if self.kernel == "latent_factor" else self.k
        if self.p is None:
            object.__setattr__(self, "p", p_min)
        elif self.p < p_min:
            raise SpecError(f"p must be at least {p_min}")
        if self.switch_mean and self.k > 0 and self.J > 1 and self.d < self.k + 1:
            raise SpecError("a switching mean with k lags needs d >= k + 1")
        if self.kernel == "latent_factor":
            if self.J != 2:
                raise SpecError("the latent-factor kernel needs J = 2")
            if self.d != self.k + 1:
                raise SpecError("the latent-factor kernel needs d = k + 1")

    @property
    def n_states(self) -> int:
        return self.J**self.d

    @property
    def n_params(self) -> int:
        return self._layout.size

    @property
    def param_names(self) -> list[str]:
        return list(self._layout.names)

    @cached_property
    def _layout(self) -> _Layout:
        return _Layout(self)

    @cached_property
    def states(self) -> NDArray[np.int64]:
        """All expanded states as a ``(J**d, d)`` array of 0-based regimes."""
        return np.array(list(itertools.product(range(self.J), repeat=self.d)), dtype=np.int64).reshape(
            self.n_states, self.d
        )

    def state_index(self, regimes: tuple[int, ...]) -> int:
        idx = 0
        for r in regimes:
            idx = idx * self.J + int(r)
        return idx

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "J": self.J,
            "d": self.d,
            "p": self.p,
            "switch_mean": self.switch_mean,
            "switch_ar": self.switch_ar,
            "switch_var": self.switch_var,
            "covariate_dim": self.covariate_dim,
            "kernel": {"family": self.kernel},
        }


class _Layout:
    """Index map between the flat parameter vector and its blocks.

    Order: means, AR coefficients (regime-major), standard deviations, kernel.
    """

    def __init__(self, spec: ModelSpec) -> None:
        J, k, m = spec.J, spec.k, spec.covariate_dim
        self.n_mu = J if spec.switch_mean else 1
        self.n_gamma = J if spec.switch_ar else 1
        self.n_sigma = J if spec.switch_var else 1
        names: list[str] = []
        names += [f"mu({j + 1})" for j in range(J)] if spec.switch_mean else ["mu"]
        for j in range(self.n_gamma):
            for lag in range(k):
                names.append(f"gamma_{lag + 1}({j + 1})" if spec.switch_ar else f"gamma_{lag + 1}")
        names += [f"sigma({j + 1})" for j in range(J)] if spec.switch_var else ["sigma"]
        fam = spec.kernel
        if fam == "constant":
            names += [f"p_{i + 1}{j + 1}" for i in range(J) for j in range(J - 1)]
        elif fam in ("logistic", "probit"):
            for i in range(J):
                for j in range(J - 1):
                    for c in range(m + 1):
                        names.append(f"beta_{i + 1}{c}" if J == 2 else f"beta_{i + 1}{j + 1}_{c}")
        else:
            names += ["alpha", "tau", "rho"]
        self.names = tuple(names)
        self.size = len(names)
        start = 0
        self.mu = slice(start, start + self.n_mu)
        start += self.n_mu
        self.gamma = slice(start, start + self.n_gamma * k)
        start += self.n_gamma * k
        self.sigma = slice(start, start + self.n_sigma)
        start += self.n_sigma
        self.kernel = slice(start, self.size)
        self.J, self.k, self.m, self.family = J, k, m, fam


@dataclass(frozen=True)
class ParamVector:
    """Economic parameters of a :class:`ModelSpec`.

    ``kernel`` holds the full ``J x J`` matrix for the constant family, the
    ``(J, J-1, 1+covariate_dim)`` coefficient array for logistic/probit
    (target ``j`` against the last regime; the intercept comes first) and
    ``(alpha, tau, rho)`` for the latent-factor kernel.
    """

    spec: ModelSpec
    mu: NDArray[np.float64]
    gamma: NDArray[np.float64]
    sigma: NDArray[np.float64]
    kernel: NDArray[np.float64]
    _flat: NDArray[np.float64] = field(repr=False, compare=False, default=None)  # type: ignore[assignment]

    @classmethod
    def from_flat(cls, spec: ModelSpec, values: ArrayLike) -> ParamVector:
        v = np.asarray(values, dtype=float).copy()
        lay = spec._layout
        if v.shape != (lay.size,):
            raise SpecError(f"expected {lay.size} parameters, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise SpecError("parameters must be finite")
        sigma = v[lay.sigma]
        if np.any(sigma <= 0):
            raise SpecError("sigma must be positive")
        kern = v[lay.kernel]
        J = spec.J
        if lay.family == "constant":
            free = kern.reshape(J, J - 1)
            last = 1.0 - free.sum(axis=1)
            if np.any(free < 0) or np.any(last < -1e-12):
                raise SpecError("constant transition rows must be probability vectors")
            kernel = np.column_stack([free, np.clip(last, 0.0, None)])
        elif lay.family in ("logistic", "probit"):
            kernel = kern.reshape(J, J - 1, lay.m + 1)
        else:
            if abs(kern[0]) >= 1 or abs(kern[2]) >= 1:
                raise SpecError("latent-factor kernel needs |alpha| < 1 and |rho| < 1")
            kernel = kern.copy()
        v.setflags(write=False)
        return cls(
            spec=spec,
            mu=v[lay.mu],
            gamma=v[lay.gamma].reshape(lay.n_gamma, lay.k),
            sigma=sigma,
            kernel=kernel,
            _flat=v,
        )

    @classmethod
    def from_named(cls, spec: ModelSpec, named: dict[str, float]) -> ParamVector:
        missing = [n for n in spec.param_names if n not in named]
        if missing:
            raise SpecError(f"missing parameters: {', '.join(missing)}")
        return cls.from_flat(spec, [float(named[n]) for n in spec.param_names])

    def to_flat(self) -> NDArray[np.float64]:
        if self._flat is None:
            parts = [self.mu, self.gamma.ravel(), self.sigma]
            if self.spec.kernel == "constant":
                parts.append(self.kernel[:, : self.spec.J - 1].ravel())
            else:
                parts.append(np.ravel(self.kernel))
            return np.concatenate(parts).astype(float)
        return self._flat.copy()

    def to_named(self) -> dict[str, float]:
        return dict(zip(self.spec.param_names, map(float, self.to_flat())))

    def transition_matrix(self) -> NDArray[np.float64]:
        if self.spec.kernel != "constant":
            raise SpecError("only the constant kernel has a fixed matrix")
        return self.kernel


# -- transforms ------------------------------------------------------------


def _to_unconstrained(spec: ModelSpec, flat: NDArray) -> NDArray:
    """Vectorized economic -> unconstrained map over the last axis."""
    lay = spec._layout
    v = np.array(flat, dtype=float, copy=True)
    v[..., lay.sigma] = np.log(flat[..., lay.sigma])
    kern = flat[..., lay.kernel]
    if lay.family == "constant" and lay.J > 1:
        free = kern.reshape(kern.shape[:-1] + (lay.J, lay.J - 1))
        last = 1.0 - free.sum(axis=-1, keepdims=True)
        v[..., lay.kernel] = np.log(free / last).reshape(kern.shape)
    elif lay.family == "latent_factor":
        v[..., lay.kernel.start] = np.arctanh(kern[..., 0])
        v[..., lay.kernel.start + 2] = np.arctanh(kern[..., 2])
    return v


def _from_unconstrained(spec: ModelSpec, v: NDArray) -> NDArray:
    """Vectorized unconstrained -> economic map over the last axis."""
    lay = spec._layout
    flat = np.array(v, dtype=float, copy=True)
    flat[..., lay.sigma] = np.exp(v[..., lay.sigma])
    kern = v[..., lay.kernel]
    if lay.family == "constant" and lay.J > 1:
        z = kern.reshape(kern.shape[:-1] + (lay.J, lay.J - 1))
        zmax = np.maximum(z.max(axis=-1, keepdims=True), 0.0)
        e = np.exp(z - zmax)
        denom = e.sum(axis=-1, keepdims=True) + np.exp(-zmax)
        flat[..., lay.kernel] = (e / denom).reshape(kern.shape)
    elif lay.family == "latent_factor":
        flat[..., lay.kernel.start] = np.tanh(kern[..., 0])
        flat[..., lay.kernel.start + 2] = np.tanh(kern[..., 2])
    return flat


def pack(theta: ParamVector, spec: ModelSpec | None = None) -> NDArray[np.float64]:
    """Map economic parameters to the unconstrained optimization vector.

    ``sigma`` goes through ``log``, ``alpha`` and ``rho`` through ``atanh``,
    constant-kernel rows through the additive log-ratio against the last
    column; every other coordinate is unchanged.
    """
    spec = spec or theta.spec
    flat = theta.to_flat()
    lay = spec._layout
    if lay.family == "constant" and lay.J > 1:
        if np.any(theta.kernel <= 0):
            raise SpecError("constant transition entries must be strictly positive to pack")
    return _to_unconstrained(spec, flat)


def unpack(v: ArrayLike, spec: ModelSpec) -> ParamVector:
    """Inverse of :func:`pack`."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise SpecError("unconstrained vector must be finite")
    flat = _from_unconstrained(spec, v)
    if not np.all(np.isfinite(flat)) or np.any(flat[spec._layout.sigma] <= 0):
        raise SpecError("unconstrained vector maps outside the parameter domain")
    return ParamVector.from_flat(spec, flat)


def unconstrained_jacobian(spec: ModelSpec, flat: ArrayLike) -> NDArray[np.float64]:
    """Matrix ``dv/dtheta`` of the pack map at economic point ``flat``."""
    lay = spec._layout
    flat = np.asarray(flat, dtype=float)
    G = np.eye(lay.size)
    idx = np.arange(lay.sigma.start, lay.sigma.stop)
    G[idx, idx] = 1.0 / flat[idx]
    if lay.family == "latent_factor":
        for off in (0, 2):
            i = lay.kernel.start + off
            G[i, i] = 1.0 / (1.0 - flat[i] ** 2)
    elif lay.family == "constant" and lay.J > 1:
        w = lay.J - 1
        for i in range(lay.J):
            sl = slice(lay.kernel.start + i * w, lay.kernel.start + (i + 1) * w)
            free = flat[sl]
            last = 1.0 - free.sum()
            G[sl, sl] = np.diag(1.0 / free) + 1.0 / last
    return G


# -- states and labels -----------------------------------------------------


def expand_states(spec: ModelSpec) -> tuple[NDArray[np.int64], NDArray[np.bool_]]:
    """Enumerate expanded states and their lag-consistent transitions.

    Returns the ``(J**d, d)`` state array and a boolean matrix whose entry
    ``(a, b)`` says whether ``b`` can follow ``a``: the last ``d - 1``
    components of ``b`` must equal the first ``d - 1`` components of ``a``.
    """
    states = spec.states
    consistent = np.all(states[None, :, 1:] == states[:, None, :-1], axis=2)
    return states, consistent


def regime_order(theta: ParamVector) -> NDArray[np.int64]:
    """Permutation ``perm`` with ``perm[new] = old`` that sorts the regimes.

    Regimes are ordered by mean, then standard deviation, then original
    label; blocks that do not switch do not take part in the key.
    """
    spec = theta.spec
    keys = []
    for j in range(spec.J):
        key = []
        if spec.switch_mean:
            key.append(theta.mu[j])
        if spec.switch_var:
            key.append(theta.sigma[j])
        key.append(j)
        keys.append(tuple(key))
    return np.array(sorted(range(spec.J), key=lambda j: keys[j]), dtype=np.int64)


def permute_regimes(theta: ParamVector, perm: ArrayLike) -> ParamVector:
    """Relabel regimes so that new regime ``r`` is old regime ``perm[r]``."""
    spec = theta.spec
    perm = np.asarray(perm, dtype=np.int64)
    if np.array_equal(perm, np.arange(spec.J)):
        return theta
    lay = spec._layout
    flat = theta.to_flat()
    out = flat.copy()
    if spec.switch_mean:
        out[lay.mu] = theta.mu[perm]
    if spec.switch_ar:
        out[lay.gamma] = theta.gamma[perm].ravel()
    if spec.switch_var:
        out[lay.sigma] = theta.sigma[perm]
    J = spec.J
    if lay.family == "constant":
        P = theta.kernel[np.ix_(perm, perm)]
        out[lay.kernel] = P[:, : J - 1].ravel()
    elif lay.family == "logistic" or (lay.family == "probit" and J == 2):
        full = np.concatenate([theta.kernel, np.zeros((J, 1, lay.m + 1))], axis=1)
        new = full[perm][:, perm] - full[perm][:, [perm[-1]]]
        out[lay.kernel] = new[:, : J - 1].ravel()
    elif lay.family == "probit":
        raise SpecError("sequential probit with J > 2 cannot be relabeled within the family")
    else:
        # swapping the two threshold regimes flips the sign of W, so tau and rho change sign
        alpha, tau, rho = theta.kernel
        out[lay.kernel] = [alpha, -tau, -rho]
    return ParamVector.from_flat(spec, out)


def relabel_regimes(theta: ParamVector) -> ParamVector:
    """Relabel so that regime means increase (identification restriction)."""
    return permute_regimes(theta, regime_order(theta))


def permute_state(spec: ModelSpec, state: int, perm: ArrayLike) -> int:
    """Index of expanded state ``state`` after relabeling with ``perm``."""
    inverse = np.argsort(np.asarray(perm))
    comps = spec.states[state]
    return spec.state_index(tuple(int(inverse[c]) for c in comps))


# -- data ------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Observed series with ``p`` conditioning values and aligned covariates.

    ``y`` has length ``n + p``; ``x`` has ``n`` rows and ``x[t - 1]`` is the
    covariate vector ``X_t`` for periods ``t = 1..n``.
    """

    y: NDArray[np.float64]
    x: NDArray[np.float64]
    p: int
    labels: tuple | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.size - self.p
        if n < 0:
            raise SpecError("series shorter than the number of conditioning values")
        x = np.asarray(self.x, dtype=float) if self.x is not None else np.zeros((n, 0))
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != n:
            raise SpecError(f"covariates have {x.shape[0]} rows, expected {n}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise SpecError("data contain non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.size - self.p

    @classmethod
    def for_spec(cls, spec: ModelSpec, y: ArrayLike, x: ArrayLike | None = None, labels=None) -> Dataset:
        y = np.asarray(y, dtype=float).ravel()
        n = y.size - spec.p
        if x is None:
            x = np.zeros((max(n, 0), spec.covariate_dim))
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if spec.kernel in ("logistic", "probit") and x.shape[1] != spec.covariate_dim:
            raise SpecError(f"expected {spec.covariate_dim} covariate columns, got {x.shape[1]}")
        return cls(y=y, x=x, p=spec.p, labels=labels)

    def head(self, n: int) -> Dataset:
        return Dataset(y=self.y[: self.p + n], x=self.x[:n], p=self.p)


# -- spec files ------------------------------------------------------------


def spec_from_dict(cfg: dict[str, Any]) -> tuple[ModelSpec, ParamVector | None]:
    """Build a spec (and parameters, when given) from a parsed spec file.

    Parameters may be given under ``theta`` as a name -> value table; kernel
    values may alternatively sit under ``kernel.params``.
    """
    kernel = cfg.get("kernel", {"family": "constant"})
    if isinstance(kernel, str):
        kernel = {"family": kernel}
    spec = ModelSpec(
        k=int(cfg.get("k", 0)),
        J=int(cfg.get("J", 2)),
        d=int(cfg.get("d", 1)),
        switch_mean=bool(cfg.get("switch_mean", True)),
        switch_ar=bool(cfg.get("switch_ar", False)),
        switch_var=bool(cfg.get("switch_var", False)),
        kernel=str(kernel.get("family", "constant")),
        covariate_dim=int(cfg.get("covariate_dim", 0)),
        p=cfg.get("p"),
    )
    named = dict(cfg.get("theta", {}))
    named.update(kernel.get("params", {}) or {})
    theta = ParamVector.from_named(spec, named) if named else None
    return spec, theta


def load_spec(path: str | Path) -> tuple[ModelSpec, ParamVector | None]:
    """Read a TOML or JSON spec file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        cfg = json.loads(text)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib

        cfg = tomllib.loads(text)
    return spec_from_dict(cfg)
