"""Filtering analytics: correlations, cascade threshold error, two-component
mixture fit of the score distribution and single-threshold filtering."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

log = logging.getLogger(__name__)


class DegenerateError(ValueError):
    """Input has no spread (constant or all-tied)."""


# -- correlation -------------------------------------------------------------

def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D vectors of equal length")
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    a = x - x.mean()
    b = y - y.mean()
    va = float(np.dot(a, a))
    vb = float(np.dot(b, b))
    if va == 0.0 or vb == 0.0:
        raise DegenerateError("constant vector")
    r = float(np.dot(a, b)) / math.sqrt(va * vb)
    return min(1.0, max(-1.0, r))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(x, y)
    return pearson(stats.rankdata(x), stats.rankdata(y))


def kendall(x, y) -> float:
    """Kendall tau-b."""
    x, y = _pair(x, y)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateError("all-tied vector")
    tau = stats.kendalltau(x, y, variant="b").statistic
    return min(1.0, max(-1.0, float(tau)))


@dataclass(frozen=True)
class CorrelationReport:
    metric_pair: tuple[str, str]
    pearson: float
    spearman: float
    n: int = 0
    skipped: int = 0

    def __post_init__(self):
        if self.metric_pair[0] == self.metric_pair[1]:
            raise ValueError("metric pair names must differ")


def _values(v) -> Mapping:
    return v.values if hasattr(v, "values") and not isinstance(v, Mapping) else v


def correlate_metrics(vectors: Iterable, pairs: Sequence[tuple[str, str]]) -> list:
    """Pearson and Spearman per metric pair, skipping clips missing either metric."""
    vals = [_values(v) for v in vectors]
    out = []
    for a, b in pairs:
        rows = [(m[a], m[b]) for m in vals if a in m and b in m]
        skipped = len(vals) - len(rows)
        if len(rows) < 2:
            raise ValueError(f"fewer than 2 complete rows for {a}:{b}")
        x = np.array([r[0] for r in rows])
        y = np.array([r[1] for r in rows])
        out.append(CorrelationReport((a, b), pearson(x, y), spearman(x, y), len(rows), skipped))
    return out


# -- cascade threshold error -------------------------------------------------

def _keep(vals, thresholds) -> np.ndarray:
    keep = np.ones(len(vals[next(iter(thresholds))]) if thresholds else 0, dtype=bool)
    for m, t in thresholds.items():
        keep &= vals[m] >= t
    return keep


def cascade_error(vectors: Iterable, ideal_thresholds: Mapping[str, float],
                  deviated: Iterable[str], deviation: float) -> int:
    """Number of clips whose keep/drop decision changes when the thresholds of
    ``deviated`` metrics are multiplied by ``1 + deviation``.

    A clip is kept when every metric is at or above its threshold.
    """
    deviated = set(deviated)
    unknown = deviated - set(ideal_thresholds)
    if unknown:
        raise KeyError(f"unknown metric(s): {', '.join(sorted(unknown))}")
    rows = [_values(v) for v in vectors]
    vals = {}
    for m in ideal_thresholds:
        try:
            vals[m] = np.array([r[m] for r in rows], dtype=np.float64)
        except KeyError:
            raise KeyError(f"metric {m!r} missing from some clips") from None
    if not rows:
        return 0
    moved = {m: t * (1 + deviation) if m in deviated else t for m, t in ideal_thresholds.items()}
    return int(np.count_nonzero(_keep(vals, ideal_thresholds) != _keep(vals, moved)))


# -- two-component mixture ---------------------------------------------------

@dataclass(frozen=True)
class GaussianMixture1D:
    weights: tuple[float, float]
    means: tuple[float, float]
    stds: tuple[float, float]
    log_likelihood: float
    converged: bool = True
    n_iter: int = 0
    history: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not all(w > 0 for w in self.weights) or abs(sum(self.weights) - 1) > 1e-9:
            raise ValueError(f"bad mixture weights {self.weights}")
        if not all(s > 0 for s in self.stds):
            raise ValueError(f"bad mixture stds {self.stds}")
        if self.means[0] > self.means[1]:
            raise ValueError("components must be ordered by mean")

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "means": list(self.means),
                "stds": list(self.stds), "log_likelihood": self.log_likelihood,
                "converged": self.converged, "n_iter": self.n_iter}


def _log_norm(x, m, s):
    return -0.5 * ((x - m) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)


def fit_gmm2(scores, tol: float = 1e-8, max_iter: int = 500) -> GaussianMixture1D:
    """EM fit of a two-component 1-D Gaussian mixture.

    Deterministic start: means at the 25th/75th percentiles, equal weights,
    stds at half the overall std. Stops when the mean per-sample
    log-likelihood changes by less than ``tol``. Stds are floored at
    1e-4 of the data range.
    """
    x = np.asarray(scores, dtype=np.float64).ravel()
    if x.size < 100:
        raise DegenerateError(f"need at least 100 scores, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    span = float(x.max() - x.min())
    if span == 0:
        raise DegenerateError("scores are constant")
    floor = 1e-4 * span
    mu = np.percentile(x, [25, 75]).astype(np.float64)
    if mu[0] == mu[1]:
        mu = np.array([x.min(), x.max()])
    sd = np.full(2, max(0.5 * float(x.std()), floor))
    w = np.array([0.5, 0.5])

    def loglik(w, mu, sd):
        lp = np.stack([np.log(w[k]) + _log_norm(x, mu[k], sd[k]) for k in range(2)])
        tot = logsumexp(lp, axis=0)
        return lp, tot

    lp, tot = loglik(w, mu, sd)
    ll = float(tot.mean())
    history = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        r = np.exp(lp - tot)  # responsibilities, 2 x n
        nk = r.sum(axis=1)
        if np.any(nk <= 0):
            raise DegenerateError("a mixture component lost all mass")
        w = nk / nk.sum()
        mu = (r @ x) / nk
        sd = np.sqrt(np.maximum((r * (x[None, :] - mu[:, None]) ** 2).sum(axis=1) / nk,
                                floor * floor))
        lp, tot = loglik(w, mu, sd)
        new = float(tot.mean())
        history.append(new)
        if abs(new - ll) < tol:
            ll = new
            converged = True
            break
        ll = new
    if not converged:
        log.warning("EM did not converge in %d iterations", max_iter)
    order = np.argsort(mu, kind="stable")
    w, mu, sd = w[order], mu[order], sd[order]
    # renormalise against rounding so the weights invariant holds exactly enough
    w = w / w.sum()
    return GaussianMixture1D(
        (float(w[0]), float(w[1])), (float(mu[0]), float(mu[1])), (float(sd[0]), float(sd[1])),
        ll * x.size, converged, it, tuple(history),
    )


def decomposition_threshold(g: GaussianMixture1D) -> float:
    """Point between the means where both components have equal posterior.

    Solves w1 N(x; m1, s1) = w2 N(x; m2, s2) in closed form; falls back to the
    midpoint of the means when no root lies strictly between them.
    """
    (w1, w2), (m1, m2), (s1, s2) = g.weights, g.means, g.stds
    mid = 0.5 * (m1 + m2)
    if m1 == m2:
        return mid
    k = math.log((w1 * s2) / (w2 * s1))
    if s1 == s2:
        x = mid + s1 * s1 * math.log(w1 / w2) / (m2 - m1)
        return x if m1 < x < m2 else mid
    # a x^2 + b x + c = 0 from equating the two log densities
    a = 0.5 / (s2 * s2) - 0.5 / (s1 * s1)
    b = m1 / (s1 * s1) - m2 / (s2 * s2)
    c = 0.5 * m2 * m2 / (s2 * s2) - 0.5 * m1 * m1 / (s1 * s1) + k
    disc = b * b - 4 * a * c
    if disc < 0:
        return mid
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = [q / a]
    if q != 0:
        roots.append(c / q)
    inside = [r for r in roots if m1 < r < m2]
    return inside[0] if inside else mid


# -- filtering ---------------------------------------------------------------

@dataclass(frozen=True)
class FilterDecision:
    clip_id: str
    kept: bool
    vtss: float
    threshold: float


def filter_by_vtss(scores: Mapping[str, float], threshold: float) -> list[FilterDecision]:
    """Keep clips with score at or above ``threshold`` (inclusive)."""
    return [FilterDecision(cid, bool(s >= threshold), float(s), float(threshold))
            for cid, s in scores.items()]


def write_decisions(path, decisions: Iterable[FilterDecision]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "vtss", "kept", "threshold"])
        for d in decisions:
            w.writerow([d.clip_id, repr(d.vtss), int(d.kept), repr(d.threshold)])
