"""scikit-learn style wrapper around :func:`tvtp.optimize.fit`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .filter import forward_filter, kim_smoother
from .model import Dataset, ModelSpec
from .optimize import FitConfig, fit


class RegimeSwitchingAR(BaseEstimator):
    """Regime-switching autoregression with time-varying transitions.

    ``fit(X, y)`` takes the whole series ``y`` (the first ``p`` values only
    condition the likelihood) and covariates ``X`` with one row per value of
    ``y``; the first ``p`` rows of ``X`` are ignored.  Pass ``X=None`` for
    kernels without covariates.

    Parameters
    ----------
    k : int
        Autoregressive order.
    n_regimes : int
        Number of regimes ``J``.
    d : int, optional
        Regime memory; defaults to ``k + 1``.
    switch_mean, switch_ar, switch_var : bool
        Which observation parameters depend on the regime.
    kernel : {"constant", "logistic", "probit", "latent_factor"}
    n_starts : int
    max_iter : int
    tol : float
        Gradient sup-norm tolerance on the unconstrained scale.
    s0 : int or "uniform"
        Initial expanded state of the conditional likelihood.
    random_state : int
        Seed of the multi-start perturbations.

    Attributes
    ----------
    spec_ : ModelSpec
    result_ : FitResult
    params_ : dict
        Estimates by parameter name.
    loglik_ : float
    n_features_in_ : int
    """

    def __init__(
        self,
        k=1,
        n_regimes=2,
        d=None,
        switch_mean=True,
        switch_ar=False,
        switch_var=False,
        kernel="constant",
        n_starts=5,
        max_iter=500,
        tol=1e-6,
        s0=0,
        random_state=0,
    ):
        self.k = k
        self.n_regimes = n_regimes
        self.d = d
        self.switch_mean = switch_mean
        self.switch_ar = switch_ar
        self.switch_var = switch_var
        self.kernel = kernel
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.tol = tol
        self.s0 = s0
        self.random_state = random_state

    def _make_spec(self, m: int) -> ModelSpec:
        d = self.d if self.d is not None else (self.k + 1 if self.n_regimes > 1 else 1)
        return ModelSpec(
            k=self.k,
            J=self.n_regimes,
            d=d,
            switch_mean=self.switch_mean,
            switch_ar=self.switch_ar,
            switch_var=self.switch_var,
            kernel=self.kernel,
            covariate_dim=m if self.kernel in ("logistic", "probit") else 0,
        )

    def _dataset(self, X, y, spec: ModelSpec) -> Dataset:
        y = check_array(np.asarray(y, dtype=float).reshape(-1, 1), ensure_min_samples=spec.p + 2).ravel()
        if spec.covariate_dim:
            if X is None:
                raise ValueError("this kernel needs covariates X")
            X = check_array(X, ensure_2d=False)
            X = X.reshape(len(X), -1)
            if X.shape[0] != y.size:
                raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} values")
            x = X[spec.p :]
        else:
            x = None
        return Dataset.for_spec(spec, y, x)

    def fit(self, X, y):
        m = 0
        if X is not None:
            X = check_array(X, ensure_2d=False)
            m = 1 if X.ndim == 1 else X.shape[1]
        spec = self._make_spec(m)
        data = self._dataset(X, y, spec)
        cfg = FitConfig(starts=self.n_starts, max_iters=self.max_iter, grad_tol=self.tol, seed=self.random_state, s0=self.s0)
        self.spec_ = spec
        self.result_ = fit(spec, data, cfg)
        self.params_ = self.result_.theta.to_named()
        self.loglik_ = self.result_.loglik
        self.n_features_in_ = m
        return self

    def _filter(self, X, y):
        check_is_fitted(self)
        data = self._dataset(X, y, self.spec_)
        return data, forward_filter(self.spec_, self.result_.theta, data, self.s0)

    def predict_proba(self, X, y):
        """Smoothed regime probabilities, one row per period after the first ``p``."""
        data, fr = self._filter(X, y)
        return kim_smoother(self.spec_, self.result_.theta, data, fr).regimes

    def predict(self, X, y):
        """Most probable regime (0-based) per period."""
        return np.argmax(self.predict_proba(X, y), axis=1)

    def score(self, X, y):
        """Average log predictive density per period."""
        data, fr = self._filter(X, y)
        return fr.loglik / data.n

    def standard_errors(self, estimator="ops"):
        check_is_fitted(self)
        return dict(zip(self.spec_.param_names, self.result_.standard_errors(estimator)))
