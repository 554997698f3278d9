"""Linear suitability scorer over sub-metric vectors and its evaluation suite."""

from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .analytics import DegenerateError, kendall, pearson, spearman


class ClipMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SuitabilityModel:
    metrics: tuple[str, ...]
    weights: dict
    bias: float
    feature_mean: dict
    feature_std: dict
    ridge_lambda: float

    def __post_init__(self):
        names = set(self.metrics)
        if not (set(self.weights) == set(self.feature_mean) == set(self.feature_std) == names):
            raise ValueError("weights, means and stds must cover the same metrics")
        if not all(s > 0 for s in self.feature_std.values()):
            raise ValueError("feature stds must be positive")
        if self.ridge_lambda <= 0:
            raise ValueError("ridge_lambda must be positive")

    def to_dict(self) -> dict:
        return {
            "metrics": list(self.metrics),
            "weights": dict(self.weights),
            "bias": self.bias,
            "feature_mean": dict(self.feature_mean),
            "feature_std": dict(self.feature_std),
            "ridge_lambda": self.ridge_lambda,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuitabilityModel":
        try:
            return cls(tuple(d["metrics"]), dict(d["weights"]), float(d["bias"]),
                       dict(d["feature_mean"]), dict(d["feature_std"]),
                       float(d["ridge_lambda"]))
        except (KeyError, TypeError) as e:
            raise ValueError(f"malformed suitability model: {e}") from e


def save_model(model: SuitabilityModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> SuitabilityModel:
    return SuitabilityModel.from_dict(json.loads(Path(path).read_text()))


def _vals(v) -> Mapping:
    return v if isinstance(v, Mapping) else v.values


def _target_map(targets) -> dict:
    items = targets.items() if isinstance(targets, Mapping) else list(targets)
    out = {}
    dup = []
    for cid, t in items:
        if cid in out:
            dup.append(cid)
        out[cid] = float(t)
    if dup:
        raise ClipMismatchError(f"duplicate clip ids in targets: {', '.join(sorted(set(dup)))}")
    return out


def design_matrix(vectors: Sequence, metrics: Sequence[str]) -> np.ndarray:
    rows = []
    for v in vectors:
        vals = _vals(v)
        missing = [m for m in metrics if m not in vals]
        if missing:
            cid = getattr(v, "clip_id", "?")
            raise KeyError(f"clip {cid} is missing metric(s) {', '.join(missing)}")
        rows.append([vals[m] for m in metrics])
    return np.asarray(rows, dtype=np.float64)


def fit_ridge(vectors: Iterable, targets, lam: float = 1.0,
              metrics: Sequence[str] | None = None) -> SuitabilityModel:
    """Ridge regression on standardised metrics with an unregularised bias.

    ``vectors`` are SubMetricVector objects; ``targets`` maps clip_id to the
    target score (a mapping or a sequence of pairs). The clip id sets must
    match. Solved directly from the regularised normal equations.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    vectors = list(vectors)
    tmap = _target_map(targets)
    ids = [v.clip_id for v in vectors]
    if len(set(ids)) != len(ids):
        raise ClipMismatchError("duplicate clip ids in metric vectors")
    only_v = sorted(set(ids) - set(tmap))
    only_t = sorted(set(tmap) - set(ids))
    if only_v or only_t:
        raise ClipMismatchError(
            f"clip ids without targets: {only_v[:10]}; targets without metrics: {only_t[:10]}"
        )
    if metrics is None:
        metrics = [m for m in vectors[0].values if all(m in v.values for v in vectors)]
    metrics = tuple(metrics)
    n, p = len(vectors), len(metrics)
    if n < p + 2:
        raise ValueError(f"need at least {p + 2} samples for {p} metrics, got {n}")
    X = design_matrix(vectors, metrics)
    y = np.array([tmap[c] for c in ids])
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Z = (X - mean) / std
    # Z has zero column means, so the unregularised bias decouples to mean(y)
    ybar = float(y.mean())
    w = np.linalg.solve(Z.T @ Z + lam * np.eye(p), Z.T @ (y - ybar))
    return SuitabilityModel(
        metrics,
        {m: float(w[i]) for i, m in enumerate(metrics)},
        ybar,
        {m: float(mean[i]) for i, m in enumerate(metrics)},
        {m: float(std[i]) for i, m in enumerate(metrics)},
        float(lam),
    )


def predict(model: SuitabilityModel, vector) -> float:
    vals = _vals(vector)
    total = model.bias
    for m in model.metrics:
        if m not in vals:
            raise KeyError(f"missing metric {m!r}")
        total += model.weights[m] * (vals[m] - model.feature_mean[m]) / model.feature_std[m]
    return total


@dataclass(frozen=True)
class EvalReport:
    plcc: float
    srcc: float
    krcc: float
    rmse: float
    degenerate: bool = False


def evaluate(preds, targets) -> EvalReport:
    """PLCC, SRCC, KRCC (tau-b) and RMSE. Constant input yields NaN
    correlations with ``degenerate`` set; RMSE is always reported."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("preds and targets must be equal-length non-empty vectors")
    rmse = math.sqrt(float(np.mean((p - t) ** 2)))
    try:
        return EvalReport(pearson(p, t), spearman(p, t), kendall(p, t), rmse)
    except (DegenerateError, ValueError):
        nan = float("nan")
        return EvalReport(nan, nan, nan, rmse, True)
