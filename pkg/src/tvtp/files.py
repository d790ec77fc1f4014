"""Readers and writers for series CSVs, fit results and reports.

Every file starts with a ``# schema: <name>/<version>`` line so that stale
artifacts are rejected instead of misread.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .filter import SmoothResult
from .inference import ESTIMATORS
from .model import Dataset, ModelSpec, ParamVector, SpecError, spec_from_dict
from .optimize import FitResult

DATA_SCHEMA = "tvtp-data/1"
FIT_SCHEMA = "tvtp-fit/1"
SMOOTH_SCHEMA = "tvtp-smoothed/1"


def _num(v: float) -> str:
    return repr(float(v))


def _check_schema(line: str, expected: str, source) -> None:
    if not line.startswith("# schema:"):
        raise SpecError(f"{source}: missing schema header")
    name = line.split(":", 1)[1].split()[0]
    if name != expected:
        raise SpecError(f"{source}: schema {name!r}, expected {expected!r}")


# -- series ----------------------------------------------------------------


def data_csv_text(y: ArrayLike, x: ArrayLike | None, p: int, regimes: ArrayLike | None = None) -> str:
    """CSV text with columns ``t,y[,x1..xm][,regime]``.

    ``t`` runs from ``1 - p``; covariates are blank on the ``p`` conditioning
    rows.  Regimes are written 1-based.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size - p
    x = np.zeros((n, 0)) if x is None or np.size(x) == 0 else np.asarray(x, dtype=float).reshape(n, -1)
    m = x.shape[1]
    buf = io.StringIO()
    buf.write(f"# schema: {DATA_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "y", *(f"x{j + 1}" for j in range(m)), *(["regime"] if regimes is not None else [])])
    for i in range(y.size):
        t = i - p + 1
        row = [t, _num(y[i])]
        row += [_num(v) for v in x[t - 1]] if t >= 1 else [""] * m
        if regimes is not None:
            row.append(int(regimes[i]) + 1)
        w.writerow(row)
    return buf.getvalue()


def read_data_csv(path: str | Path) -> tuple[NDArray, NDArray, NDArray | None]:
    """Return ``(y, x, regimes)`` over all rows; blank covariates become NaN.

    A schema line is optional here so that plain user CSVs with a
    ``t,y,...`` header can be read directly.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if lines and lines[0].startswith("#"):
        _check_schema(lines[0], DATA_SCHEMA, path)
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if not rows:
        raise SpecError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "y" not in header:
        raise SpecError(f"{path}: header needs a 'y' column")
    body = [r for r in rows[1:] if r]
    iy = header.index("y")
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ireg = header.index("regime") if "regime" in header else None

    def val(s: str) -> float:
        s = s.strip()
        return float(s) if s else np.nan

    try:
        y = np.array([val(r[iy]) for r in body])
        x = np.array([[val(r[i]) for i in xcols] for r in body]).reshape(len(body), len(xcols))
        reg = np.array([int(r[ireg]) - 1 for r in body]) if ireg is not None else None
    except (ValueError, IndexError) as exc:
        raise SpecError(f"{path}: malformed row ({exc})") from None
    return y, x, reg


def load_dataset(path: str | Path, spec: ModelSpec) -> Dataset:
    """Read a data CSV and align it with ``spec`` (first ``p`` rows condition)."""
    y, x, _ = read_data_csv(path)
    if spec.kernel in ("logistic", "probit"):
        if x.shape[1] < spec.covariate_dim:
            raise SpecError(f"{path}: need {spec.covariate_dim} covariate columns, found {x.shape[1]}")
        x = x[spec.p :, : spec.covariate_dim]
    else:
        x = np.zeros((y.size - spec.p, spec.covariate_dim))
    return Dataset.for_spec(spec, y, x)


# -- fit results -------------------------------------------------------------


def _arr(a) -> Any:
    return None if a is None else np.asarray(a, dtype=float).tolist()


def fit_to_dict(res: FitResult) -> dict[str, Any]:
    names = res.names
    out: dict[str, Any] = {
        "schema_version": FIT_SCHEMA,
        "spec": res.spec.to_dict(),
        "param_names": names,
        "theta": {k: float(v) for k, v in zip(names, res.theta.to_flat())},
        "loglik": float(res.loglik),
        "n": res.n,
        "s0": res.s0,
        "converged": res.converged,
        "gradient": _arr(res.gradient),
        "hessian": _arr(res.hessian),
        "config": res.config,
        "optimizer": res.optimizer,
        "starts": res.starts,
    }
    if res.covariance is not None:
        cov = res.covariance
        out["covariance"] = {e: _arr(cov.matrix(e)) for e in ESTIMATORS}
        out["valid"] = dict(cov.valid)
        out["standard_errors"] = {e: _arr(res.standard_errors(e)) for e in ESTIMATORS}
    return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def write_fit_json(res: FitResult, path: str | Path) -> None:
    # NaN is written as the JSON extension token so values survive a round trip
    Path(path).write_text(json.dumps(fit_to_dict(res), indent=2, default=_json_default) + "\n")


def read_fit_json(path: str | Path) -> dict[str, Any]:
    d = json.loads(Path(path).read_text())
    if d.get("schema_version") != FIT_SCHEMA:
        raise SpecError(f"{path}: not a {FIT_SCHEMA} file")
    return d


def fit_theta(d: dict[str, Any]) -> tuple[ModelSpec, ParamVector]:
    spec, _ = spec_from_dict(d["spec"])
    return spec, ParamVector.from_named(spec, d["theta"])


# -- smoothed probabilities -------------------------------------------------


def smoothed_csv_text(sm: SmoothResult) -> str:
    """``t,regime_1..regime_J`` smoothed probabilities for periods ``1..n``."""
    probs = np.asarray(sm.regimes)
    buf = io.StringIO()
    buf.write(f"# schema: {SMOOTH_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *(f"regime_{j + 1}" for j in range(probs.shape[1]))])
    for t, row in enumerate(probs, start=1):
        w.writerow([t, *(_num(v) for v in row)])
    return buf.getvalue()


def read_smoothed_csv(path: str | Path) -> NDArray[np.float64]:
    lines = Path(path).read_text().splitlines()
    _check_schema(lines[0], SMOOTH_SCHEMA, path)
    rows = list(csv.reader(lines[2:]))
    return np.array([[float(v) for v in r[1:]] for r in rows if r])


# -- report -------------------------------------------------------------------


def _fmt(v: float) -> str:
    if not np.isfinite(v):
        return "nan"
    if v != 0 and (abs(v) >= 1e4 or abs(v) < 1e-3):
        return f"{v:.3e}"
    return f"{v:.3f}"


def estimate_table(columns: list[tuple[str, dict[str, Any]]], estimator: str = "ops", pvalues=None) -> str:
    """Plain-text estimate table: one column per fit, standard errors below.

    ``columns`` pairs a label with a fit dictionary (see
    :func:`fit_to_dict`).  Rows are the union of parameter names in order of
    first appearance, then the log-likelihood and, when given, p-values.
    """
    names: list[str] = []
    for _, d in columns:
        names += [nm for nm in d["param_names"] if nm not in names]
    cells = [[""] + [label for label, _ in columns]]
    for nm in names:
        est, se = [nm], [""]
        for _, d in columns:
            if nm in d["theta"]:
                i = d["param_names"].index(nm)
                est.append(_fmt(d["theta"][nm]))
                ses = d.get("standard_errors", {}).get(estimator)
                s = ses[i] if ses is not None and ses[i] is not None else float("nan")
                se.append(f"({_fmt(s)})")
            else:
                est.append("")
                se.append("")
        cells += [est, se]
    cells.append(["log-likelihood", *(_fmt(d["loglik"]) for _, d in columns)])
    if pvalues is not None:
        cells.append(["p-value", *("" if p is None else _fmt(p) for p in pvalues)])
    widths = [max(len(r[c]) for r in cells) for c in range(len(cells[0]))]
    lines = ["  ".join(cell.rjust(w) if c else cell.ljust(w) for c, (cell, w) in enumerate(zip(r, widths))) for r in cells]
    note = f"Standard errors ({estimator}) in parentheses."
    return "\n".join(line.rstrip() for line in lines) + "\n" + note + "\n"
