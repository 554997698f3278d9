"""Turn transition events into clip spans."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)


class InconsistentEventsError(ValueError):
    """Event frames fall outside the stream."""


@dataclass(frozen=True)
class SplitConfig:
    min_clip_sec: float = 2.0
    max_clip_sec: float = 30.0
    trim_frames: int = 2

    def __post_init__(self):
        if self.min_clip_sec < 0 or self.max_clip_sec <= 0 or self.trim_frames < 0:
            raise ValueError("clip limits and trim must be non-negative")
        if self.min_clip_sec > self.max_clip_sec:
            raise ValueError("min_clip_sec exceeds max_clip_sec")


@dataclass(frozen=True)
class ClipSpan:
    """Frames ``[start_frame, end_frame)`` of one source."""

    start_frame: int
    end_frame: int
    start_sec: float
    end_sec: float
    source_id: str = ""

    def __post_init__(self):
        if self.end_frame <= self.start_frame:
            raise ValueError(f"empty span [{self.start_frame}, {self.end_frame})")

    @property
    def clip_id(self) -> str:
        return f"{self.source_id}:{self.start_frame}-{self.end_frame}"

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame

    def to_json(self) -> dict:
        return {
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "start_sec": self.start_sec,
            "end_sec": self.end_sec,
        }


def _frame_of(e) -> int:
    if isinstance(e, int):
        return e
    if isinstance(e, dict):
        return int(e["frame"])
    return e.frame_index


def _split_range(start: int, end: int, cuts: Sequence[int], fps: Fraction,
                 cfg: SplitConfig, source_id: str) -> list[ClipSpan]:
    min_frames = Fraction(cfg.min_clip_sec) * fps
    step = int(Fraction(cfg.max_clip_sec) * fps)  # frames per max-length piece
    if step < 1:
        raise ValueError("max_clip_sec is shorter than one frame")
    inner = sorted({c for c in cuts if start < c < end})
    edges = [start] + inner + [end]
    spans = []
    for i in range(len(edges) - 1):
        lo = edges[i] + (cfg.trim_frames if i > 0 else 0)
        hi = edges[i + 1] - (cfg.trim_frames if i + 1 < len(edges) - 1 else 0)
        pos = lo
        while pos < hi:
            stop = min(hi, pos + step)
            if stop - pos >= min_frames:
                spans.append(ClipSpan(pos, stop, float(pos / fps), float(stop / fps), source_id))
            pos = stop
    return spans


def split(events: Iterable, fps, total_frames: int, config: SplitConfig = SplitConfig(),
          source_id: str = "") -> list[ClipSpan]:
    """Clip spans between transition events.

    Each event frame is a boundary; ``trim_frames`` are dropped on both sides
    of it. Spans shorter than ``min_clip_sec`` are dropped and spans longer
    than ``max_clip_sec`` are cut into pieces of exactly ``max_clip_sec``
    (the remainder is kept if long enough).
    """
    fps = Fraction(fps)
    if fps <= 0:
        raise ValueError("fps must be positive")
    frames = [_frame_of(e) for e in events]
    for f in frames:
        if f < 0 or f >= total_frames:
            raise InconsistentEventsError(
                f"event at frame {f} outside stream of {total_frames} frames"
            )
    return _split_range(0, total_frames, frames, fps, config, source_id)


def resplit(spans: Iterable[ClipSpan], events: Iterable, fps,
            config: SplitConfig = SplitConfig()) -> list[ClipSpan]:
    """Apply the splitting rules again inside each existing span."""
    fps = Fraction(fps)
    frames = [_frame_of(e) for e in events]
    out = []
    for s in spans:
        out.extend(_split_range(s.start_frame, s.end_frame, frames, fps, config, s.source_id))
    return out


def write_manifest(path, source_id: str, spans: Iterable[ClipSpan]) -> None:
    doc = {"source_id": source_id, "clips": [s.to_json() for s in spans]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_manifest(path) -> tuple[str, list[ClipSpan]]:
    doc = json.loads(Path(path).read_text())
    try:
        sid = str(doc["source_id"])
        spans = [ClipSpan(int(c["start_frame"]), int(c["end_frame"]), float(c["start_sec"]),
                          float(c["end_sec"]), sid) for c in doc["clips"]]
    except (KeyError, TypeError) as e:
        raise ValueError(f"{path}: malformed manifest: {e}") from e
    return sid, spans
