"""Annotator bias removal and score histograms."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SCORE_MIN = 1.0
SCORE_MAX = 5.0


class DebiasError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    annotator_id: str
    raw_score: float

    def __post_init__(self):
        if not SCORE_MIN <= self.raw_score <= SCORE_MAX:
            raise ValueError(f"score {self.raw_score} outside [{SCORE_MIN}, {SCORE_MAX}]")


@dataclass(frozen=True)
class ConsolidatedScore:
    video_id: str
    score: float
    n_annotators: int


def _pstd(xs: Sequence[float], mean: float) -> float:
    return math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / len(xs))


def rescale(triples: Sequence[tuple[str, str, float]]) -> list[float]:
    """Per-annotator standardisation mapped onto the global mean and std.

    ``triples`` are ``(video_id, annotator_id, score)``; the result is aligned
    with the input. Population statistics at both levels. An annotator whose
    scores are all equal maps every score to the global mean.
    """
    if not triples:
        raise DebiasError("no annotation records")
    by_ann = defaultdict(list)
    for _, a, s in triples:
        by_ann[a].append(float(s))
    few = sorted(a for a, xs in by_ann.items() if len(xs) < 2)
    if few:
        raise DebiasError(f"annotators with fewer than 2 records: {', '.join(few)}")
    all_scores = [float(s) for _, _, s in triples]
    m_g = math.fsum(all_scores) / len(all_scores)
    s_g = _pstd(all_scores, m_g)
    z = {}
    for a, xs in by_ann.items():
        if min(xs) == max(xs):
            z[a] = [0.0] * len(xs)
            continue
        m = math.fsum(xs) / len(xs)
        d = [x - m for x in xs]
        # second centering pass: the rounded mean can leave a residual that
        # dominates when the spread is tiny
        c = math.fsum(d) / len(d)
        d = [v - c for v in d]
        sd = math.sqrt(math.fsum(v * v for v in d) / len(d))
        z[a] = [v / sd for v in d]
    pos = {a: 0 for a in by_ann}
    out = []
    for _, a, _ in triples:
        out.append(z[a][pos[a]] * s_g + m_g)
        pos[a] += 1
    return out


def debias(records: Iterable[AnnotationRecord]) -> list[ConsolidatedScore]:
    """Per-video mean of rescaled annotator scores, sorted by video_id."""
    records = list(records)
    triples = [(r.video_id, r.annotator_id, r.raw_score) for r in records]
    scaled = rescale(triples)
    per_video = defaultdict(list)
    annotators = defaultdict(set)
    for (v, a, _), s in zip(triples, scaled):
        per_video[v].append(s)
        annotators[v].add(a)
    return [ConsolidatedScore(v, math.fsum(xs) / len(xs), len(annotators[v]))
            for v, xs in sorted(per_video.items())]


def read_annotations(path) -> list[AnnotationRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"video_id", "annotator_id", "score"}
        if not need <= set(reader.fieldnames or ()):
            raise DebiasError(f"{path}: header must contain video_id,annotator_id,score")
        for row_no, row in enumerate(reader, start=2):
            try:
                score = float(row["score"])
            except (TypeError, ValueError):
                raise DebiasError(f"{path}: row {row_no}: bad score {row['score']!r}") from None
            try:
                out.append(AnnotationRecord(row["video_id"], row["annotator_id"], score))
            except ValueError as e:
                raise DebiasError(f"{path}: row {row_no}: {e}") from None
    return out


def write_scores(path, scores: Iterable[ConsolidatedScore]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "score", "n_annotators"])
        for s in scores:
            w.writerow([s.video_id, repr(s.score), s.n_annotators])


def read_scores(path, column: str | None = None) -> dict:
    """id -> score from a CSV whose first column is the id.

    ``column`` defaults to the second column.
    """
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 2:
            raise ValueError(f"{path}: need an id column and a score column")
        if column is None:
            column = header[1]
        if column not in header:
            raise ValueError(f"{path}: no {column!r} column")
        j = header.index(column)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out[row[0]] = float(row[j])
            except (ValueError, IndexError):
                raise ValueError(f"{path}: row {row_no}: bad {column} value") from None
    return out


def score_distribution(scores: Sequence[float], bins: int = 20) -> list[tuple[float, float, int]]:
    """Fixed-width histogram over [min, max]; the last bin includes max.

    Returns ``(lo, hi, count)`` per bin; empty input gives an empty list.
    """
    x = np.asarray(list(scores), dtype=np.float64)
    if x.size == 0:
        return []
    if bins < 1:
        raise ValueError("bins must be positive")
    counts, edges = np.histogram(x, bins=bins, range=(x.min(), x.max()))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def write_distribution(path, dist) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in dist:
            w.writerow([repr(lo), repr(hi), c])
