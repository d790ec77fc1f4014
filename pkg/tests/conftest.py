import numpy as np
import pytest

from tvtp.model import Dataset, ModelSpec, ParamVector
from tvtp.montecarlo import business_cycle_design

FAMILIES = ("constant", "logistic", "probit", "latent_factor")


@pytest.fixture(scope="session")
def design():
    return business_cycle_design()


def random_theta(spec: ModelSpec, rng: np.random.Generator) -> ParamVector:
    """Draw a parameter vector well inside the domain."""
    lay = spec._layout
    v = np.empty(spec.n_params)
    v[lay.mu] = np.sort(rng.normal(0, 1.5, lay.n_mu))
    v[lay.gamma] = rng.uniform(-0.5, 0.5, lay.gamma.stop - lay.gamma.start) / max(spec.k, 1)
    v[lay.sigma] = rng.uniform(0.5, 1.5, lay.n_sigma)
    kern = lay.kernel
    if spec.kernel == "constant":
        rows = rng.dirichlet(np.full(spec.J, 2.0), size=spec.J)
        rows = 0.05 / spec.J + 0.95 * rows
        v[kern] = rows[:, : spec.J - 1].ravel()
    elif spec.kernel in ("logistic", "probit"):
        v[kern] = rng.normal(0, 1, kern.stop - kern.start)
    else:
        v[kern] = [rng.uniform(-0.8, 0.8), rng.normal(0, 0.7), rng.uniform(-0.8, 0.8)]
    return ParamVector.from_flat(spec, v)


def random_instance(rng: np.random.Generator, n: int, family: str | None = None, J=None, d=None, k=None):
    """Random small (spec, theta, data) triple for oracle comparisons."""
    family = family or FAMILIES[rng.integers(len(FAMILIES))]
    if family == "latent_factor":
        J = 2
        k = int(rng.integers(0, 2)) if k is None else k
        d = k + 1
    else:
        J = int(rng.integers(2, 4)) if J is None else J
        d = int(rng.integers(1, 3)) if d is None else d
        k = int(rng.integers(0, 3)) if k is None else k
    switch_mean = bool(rng.integers(2)) if k < d else False
    spec = ModelSpec(
        k=k,
        J=J,
        d=d,
        switch_mean=switch_mean or k == 0,
        switch_ar=bool(rng.integers(2)) and k > 0,
        switch_var=bool(rng.integers(2)),
        kernel=family,
        covariate_dim=int(rng.integers(1, 3)) if family in ("logistic", "probit") else 0,
    )
    theta = random_theta(spec, rng)
    y = rng.normal(0, 1.5, n + spec.p)
    x = rng.normal(0, 1, (n, spec.covariate_dim))
    return spec, theta, Dataset.for_spec(spec, y, x)
