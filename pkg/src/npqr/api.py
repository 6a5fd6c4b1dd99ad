"""End-to-end estimation: design, QR process, functional, inference, rearrangement."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from npqr.basis import BasisSpec, TauGrid
from npqr.dataio import Dataset, DesignMatrix, ModelSpec, build_design
from npqr.errors import ConfigError, DataError
from npqr.functional import LoadMatrix, LoadSpec, apply_load, build_load
from npqr.inference import InferenceConfig, InferenceResult, infer
from npqr.qrfit import QrProcessFit, fit_process
from npqr.rearrange import RearrangeSpec, rearrange_estimates

JSON_FIELDS = ("point_est", "std_error", "ci", "ci_one_sided", "pvalues", "taus", "var_unique",
               "coefficients", "load")
POINT_ONLY_FIELDS = ("point_est", "taus", "var_unique", "coefficients", "load")

NULL_HYPOTHESES = (
    "H0: functional <= 0 everywhere",
    "H0: functional >= 0 everywhere",
    "H0: functional = 0 everywhere",
)


@dataclass(frozen=True)
class Fitted:
    design: DesignMatrix
    fit: QrProcessFit
    load: LoadMatrix
    point_est: np.ndarray


def fit_model(ds: Dataset, model: ModelSpec, basis: BasisSpec, taus: TauGrid,
              load_spec: LoadSpec = LoadSpec(), *, warm_start: bool = True, threads: int = 1) -> Fitted:
    """Point estimation only."""
    design = build_design(ds, model, basis)
    fit = fit_process(design, ds.outcome, taus, np.ones(ds.n), warm_start=warm_start, threads=threads,
                      rank_checked=True)
    load = build_load(load_spec, basis, ds, design)
    return Fitted(design, fit, load, apply_load(load, fit))


def rearrange_result(result: InferenceResult, spec: RearrangeSpec) -> InferenceResult:
    """Rearrange point estimates and, if ``spec.bands``, every band surface."""
    if not spec.enabled:
        return result
    changes = {"point_est": rearrange_estimates(result.point_est, spec)}
    if spec.bands and result.ci is not None:
        changes["ci"] = np.stack([rearrange_estimates(result.ci[..., k], spec) for k in range(2)], axis=-1)
        changes["ci_one_sided"] = np.stack(
            [rearrange_estimates(result.ci_one_sided[..., k], spec) for k in range(2)], axis=-1)
    return dataclasses.replace(result, **changes)


def npqr(ds: Dataset, model: ModelSpec, basis: BasisSpec, taus: TauGrid, load_spec: LoadSpec = LoadSpec(),
         inference: InferenceConfig = InferenceConfig(), rearrange: RearrangeSpec | None = None, *,
         warm_start: bool = True) -> InferenceResult:
    """Estimate a functional of the conditional quantile process with inference."""
    if load_spec.deriv > 0 and not basis.supports_derivatives:
        raise ConfigError("derivative undefined for indicator basis", module="functional")
    fitted = fit_model(ds, model, basis, taus, load_spec, warm_start=warm_start, threads=inference.threads)
    result = infer(fitted.design, ds.outcome, fitted.fit, fitted.load, inference, fitted.point_est,
                   np.unique(ds.treatment))
    if rearrange is not None:
        result = rearrange_result(result, rearrange)
    return result


def result_to_dict(result: InferenceResult) -> dict:
    fields = JSON_FIELDS if result.std_error is not None else POINT_ONLY_FIELDS
    return {k: np.asarray(getattr(result, k), dtype=float).tolist() for k in fields}


def write_result_json(result: InferenceResult, path) -> None:
    # float repr is the shortest string that round-trips exactly
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result_to_dict(result), fh, indent=1)
        fh.write("\n")


def read_result_json(path) -> InferenceResult:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    arr = {k: np.asarray(v, dtype=float) for k, v in d.items()}
    return InferenceResult(**arr)


def format_report(result: InferenceResult, taus: TauGrid, title: str = "") -> str:
    """Text table at the print taus, followed by the sup-test p-values."""
    lines = []
    if title:
        lines += [title, ""]
    idx = taus.print_index
    labels = result.row_labels or tuple(str(k) for k in range(result.point_est.shape[0]))
    has_inf = result.std_error is not None
    for j, lab in enumerate(labels):
        if len(labels) > 1:
            lines.append(f"w = {lab}")
        head = f"{'tau':>6} {'estimate':>12}"
        if has_inf:
            head += f" {'std.err':>12} {'CI lower':>12} {'CI upper':>12} {'1s lower':>12} {'1s upper':>12}"
        lines.append(head)
        for t in idx:
            row = f"{result.taus[t]:>6.3f} {result.point_est[j, t]:>12.6f}"
            if has_inf:
                row += (f" {result.std_error[j, t]:>12.6f} {result.ci[j, t, 0]:>12.6f} {result.ci[j, t, 1]:>12.6f}"
                        f" {result.ci_one_sided[j, t, 0]:>12.6f} {result.ci_one_sided[j, t, 1]:>12.6f}")
            lines.append(row)
        lines.append("")
    if has_inf:
        lines.append("Sup-test p-values")
        for h, p in zip(NULL_HYPOTHESES, result.pvalues):
            lines.append(f"  {h:<34} {p:.4f}")
    else:
        lines.append("Point estimates only (no inference performed).")
    return "\n".join(lines) + "\n"


def emit_surface(result: InferenceResult, path, field: str = "point_est") -> None:
    """Write a grid: header of taus, first column eval points, body of estimates."""
    if result.point_est.shape[0] == 1 and tuple(result.row_labels) == ("average",):
        raise ConfigError("cannot emit a surface for an averaged functional; use a pointwise load "
                          "(average = false)", module="cli")
    body = getattr(result, field) if field == "point_est" else None
    if body is None:
        if field in ("ci_lower", "ci_upper") and result.ci is not None:
            body = result.ci[..., 0 if field == "ci_lower" else 1]
        else:
            raise ConfigError(f"no surface field {field!r} in this result", module="cli")
    labels = result.row_labels or tuple(repr(float(v)) for v in result.var_unique)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["w"] + [repr(float(t)) for t in result.taus])
        for lab, row in zip(labels, body):
            wr.writerow([lab] + [repr(float(v)) for v in row])


def read_surface(path):
    """Inverse of :func:`emit_surface`: ``(taus, points, values)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"surface file {path!r} is empty", module="cli")
    taus = np.array([float(v) for v in rows[0][1:]])
    pts = np.array([float(r[0]) for r in rows[1:]])
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return taus, pts, vals
