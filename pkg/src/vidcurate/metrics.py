"""Per-clip sub-metrics: motion and clarity, plus externally supplied scores."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .features import grayscale
from .frameio import Frame
from .splitter import ClipSpan

log = logging.getLogger(__name__)

MOTION_THRESHOLD = 10
CLARITY_SCALE = 1000.0
SAMPLE_RATE = 2  # sampled frames per second

COMPUTED = ("motion", "motion_mag", "clarity")


class MetricCollisionError(ValueError):
    pass


class MetricParseError(ValueError):
    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass
class SubMetricVector:
    clip_id: str
    values: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def set(self, name: str, value: float, source: str = "computed") -> None:
        if name in self.values:
            raise MetricCollisionError(f"{self.clip_id}: metric {name!r} already present")
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"{self.clip_id}: metric {name!r} is not finite")
        if source == "computed" and not 0.0 <= value <= 1.0:
            raise ValueError(f"{self.clip_id}: computed metric {name!r}={value} outside [0, 1]")
        self.values[name] = value
        self.provenance[name] = source


def sample_stride(fps, rate: int = SAMPLE_RATE) -> int:
    """Frame stride giving roughly ``rate`` samples per second (at least 1)."""
    return max(1, round(Fraction(fps) / rate))


def _gray(frame) -> np.ndarray:
    if isinstance(frame, np.ndarray) and frame.ndim == 2:
        return np.ascontiguousarray(frame, dtype=np.uint8)
    return grayscale(frame)


def motion_score(frames: Sequence, threshold: int = MOTION_THRESHOLD) -> tuple[float, float]:
    """(motion, motion_mag) over consecutive frames of an already-sampled clip.

    ``motion`` is the mean fraction of pixels whose grayscale absolute
    difference exceeds ``threshold``; ``motion_mag`` is the mean absolute
    difference divided by 255.
    """
    if len(frames) < 2:
        raise ValueError("motion needs at least two sampled frames")
    grays = [_gray(f) for f in frames]
    frac = []
    mag = []
    for a, b in zip(grays, grays[1:]):
        if a.shape != b.shape:
            raise ValueError("frame size changed inside a clip")
        n, total = _kernels.changed_fraction(a, b, threshold)
        frac.append(n / a.size)
        mag.append(total / (255.0 * a.size))
    return float(np.mean(frac)), float(np.mean(mag))


def laplacian_variance(gray: np.ndarray) -> float:
    """Population variance of the 4-neighbour Laplacian over interior pixels."""
    g = np.asarray(gray, dtype=np.int64)
    if g.shape[0] < 3 or g.shape[1] < 3:
        return 0.0
    lap = (g[:-2, 1:-1] + g[2:, 1:-1] + g[1:-1, :-2] + g[1:-1, 2:] - 4 * g[1:-1, 1:-1])
    return float(lap.var())


def clarity_score(frames: Sequence) -> float:
    """Mean Laplacian variance of sampled frames, squashed by v/(v+1000)."""
    if len(frames) < 1:
        raise ValueError("clarity needs at least one frame")
    v = float(np.mean([laplacian_variance(_gray(f)) for f in frames]))
    return v / (v + CLARITY_SCALE)


def clip_metrics(clip_id: str, sampled: Sequence) -> SubMetricVector:
    vec = SubMetricVector(clip_id)
    motion, mag = motion_score(sampled)
    vec.set("motion", motion)
    vec.set("motion_mag", mag)
    vec.set("clarity", clarity_score(sampled))
    return vec


def sample_spans(frames: Iterable[Frame], spans: Sequence[ClipSpan], fps) -> dict:
    """Collect the sampled frames of every span in one pass over the stream."""
    stride = sample_stride(fps)
    spans = sorted(spans, key=lambda s: s.start_frame)
    out = {s.clip_id: [] for s in spans}
    k = 0
    for i, frame in enumerate(frames):
        while k < len(spans) and i >= spans[k].end_frame:
            k += 1
        if k == len(spans):
            break
        s = spans[k]
        if i >= s.start_frame and (i - s.start_frame) % stride == 0:
            out[s.clip_id].append(frame)
    return out


def compute_metrics(frames: Iterable[Frame], spans: Sequence[ClipSpan], fps) -> list:
    sampled = sample_spans(frames, spans, fps)
    vectors = []
    for s in spans:
        fr = sampled[s.clip_id]
        if len(fr) < 2:
            log.warning("clip %s has %d sampled frames; skipped", s.clip_id, len(fr))
            continue
        vectors.append(clip_metrics(s.clip_id, fr))
    return vectors


def ingest_external(vectors: dict, path) -> list[dict]:
    """Merge external score columns into ``vectors`` (clip_id -> SubMetricVector).

    Returns the rejects report: one entry per row whose clip_id is unknown.
    Rows are validated before anything is merged, so a parse error or name
    collision leaves ``vectors`` untouched.
    """
    rejects = []
    updates = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "clip_id" or len(header) < 2:
            raise MetricParseError("header must be clip_id,<metric>[,<metric>...]", 1)
        names = header[1:]
        if len(set(names)) != len(names):
            raise MetricParseError("duplicate metric column", 1)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MetricParseError(f"expected {len(header)} cells, got {len(row)}", row_no)
            clip_id = row[0]
            vals = []
            for name, cell in zip(names, row[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise MetricParseError(f"{name}: non-numeric value {cell!r}", row_no) from None
                if not math.isfinite(v):
                    raise MetricParseError(f"{name}: non-finite value {cell!r}", row_no)
                vals.append(v)
            if clip_id not in vectors:
                rejects.append({"row": row_no, "clip_id": clip_id, "reason": "unknown clip_id"})
                continue
            vec = vectors[clip_id]
            for name in names:
                if name in vec.values:
                    raise MetricCollisionError(
                        f"row {row_no}: metric {name!r} already present for {clip_id}"
                    )
            updates.append((vec, vals))
    for vec, vals in updates:
        for name, v in zip(names, vals):
            vec.set(name, v, "external")
    return rejects


def write_metrics_csv(path, vectors: Sequence[SubMetricVector]) -> None:
    extra = []
    for v in vectors:
        for name in v.values:
            if name not in COMPUTED and name not in extra:
                extra.append(name)
    cols = list(COMPUTED) + extra
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id"] + cols)
        for v in vectors:
            w.writerow([v.clip_id] + [repr(v.values[c]) if c in v.values else "" for c in cols])


def read_metrics_csv(path) -> dict:
    """clip_id -> SubMetricVector. Empty cells are treated as missing."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "clip_id":
            raise MetricParseError("header must start with clip_id", 1)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            vec = SubMetricVector(row[0])
            for name, cell in zip(header[1:], row[1:]):
                if cell == "":
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise MetricParseError(f"{name}: non-numeric value {cell!r}", row_no) from None
                vec.set(name, value, "computed" if name in COMPUTED else "external")
            out[vec.clip_id] = vec
    return out
