"""Synthetic detection corpus, detection scoring and runtime benchmark."""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .detector import (DetectorConfig, SvmModel, TransitionEvent, decision, detect,
                       make_training_pairs, read_events)
from .frameio import Frame, open_source, write_y4m
from .features import pair_features_prepared, prepare

log = logging.getLogger(__name__)

SCENARIOS = ("hard-cut", "dissolve", "fast-pan", "static", "flash")

DEFAULT_CORPUS = {
    "width": 160,
    "height": 120,
    "frames": 90,
    "fps": 30,
    "dissolve_length": 15,
}

RESOLUTIONS = {
    "256": (256, 256),
    "512": (512, 512),
    "720p": (1280, 720),
    "1080p": (1920, 1080),
    "4k": (3840, 2160),
}


# -- synthetic video -------------------------------------------------------

def _periodic_noise(rng, h, w, cutoff):
    """Band-limited noise that tiles seamlessly, scaled to [-1, 1]."""
    spec = np.fft.fft2(rng.standard_normal((h, w)))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    spec *= np.exp(-(fx * fx + fy * fy) / (2 * cutoff * cutoff))
    n = np.fft.ifft2(spec).real
    return n / (np.abs(n).max() + 1e-12)


def make_scene(rng, h, w):
    """Seamlessly tiling textured scene (H x W x 3 float) with a random palette."""
    c0 = rng.uniform(30, 220, 3)
    c1 = rng.uniform(30, 220, 3)
    blobs = _periodic_noise(rng, h, w, rng.uniform(0.02, 0.05)) > rng.uniform(-0.2, 0.2)
    img = np.where(blobs[..., None], c1, c0)
    shade = _periodic_noise(rng, h, w, 0.03)[..., None] * rng.uniform(20, 50, 3)
    detail = _periodic_noise(rng, h, w, 0.15)[..., None] * rng.uniform(5, 20)
    return img + shade + detail


def render(scene, ox, oy, h, w):
    """Crop ``h`` x ``w`` at sub-pixel offset (ox, oy), wrapping around the tile."""
    m = np.float32([[1, 0, -ox], [0, 1, -oy]])
    return cv2.warpAffine(scene.astype(np.float32), m, (w, h), flags=cv2.INTER_LINEAR,
                          borderMode=cv2.BORDER_WRAP)


def _finish(img, rng, noise):
    img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


class _Shot:
    def __init__(self, rng, h, w, speed):
        self.scene = make_scene(rng, 2 * h, 2 * w)
        ang = rng.uniform(0, 2 * np.pi)
        self.v = (speed * np.cos(ang), speed * np.sin(ang))
        self.o = rng.uniform(0, 2 * w), rng.uniform(0, 2 * h)
        self.h, self.w = h, w

    def frame(self, t):
        return render(self.scene, self.o[0] + self.v[0] * t, self.o[1] + self.v[1] * t,
                      self.h, self.w)


def make_video(scenario: str, rng, width=160, height=120, frames=90, dissolve_length=15,
               noise=2.0):
    """Frames (BGR uint8) and ground-truth events for one synthetic video.

    Truth events are dicts ``{frame, kind, start, end}``; for a dissolve the
    span covers every frame that blends both scenes.
    """
    h, w = height, width
    drift = lambda: rng.uniform(0.0, 0.5)  # noqa: E731
    k = int(rng.integers(frames // 3, 2 * frames // 3))
    truth = []
    if scenario == "static":
        a = _Shot(rng, h, w, drift())
        raw = [a.frame(t) for t in range(frames)]
    elif scenario == "fast-pan":
        a = _Shot(rng, h, w, rng.uniform(6.0, 12.0))
        raw = [a.frame(t) for t in range(frames)]
    elif scenario == "flash":
        a = _Shot(rng, h, w, drift())
        raw = [a.frame(t) for t in range(frames)]
        raw[k] = raw[k] + rng.uniform(60, 100)
    elif scenario == "hard-cut":
        a = _Shot(rng, h, w, drift())
        b = _Shot(rng, h, w, drift())
        raw = [a.frame(t) if t < k else b.frame(t) for t in range(frames)]
        truth.append({"frame": k, "kind": "cut", "start": k, "end": k})
    elif scenario == "dissolve":
        L = dissolve_length
        k = min(k, frames - L - 2)
        a = _Shot(rng, h, w, drift())
        b = _Shot(rng, h, w, drift())
        raw = []
        for t in range(frames):
            alpha = min(1.0, max(0.0, (t - k) / L))
            if alpha == 0.0:
                raw.append(a.frame(t))
            elif alpha == 1.0:
                raw.append(b.frame(t))
            else:
                raw.append((1 - alpha) * a.frame(t) + alpha * b.frame(t))
        truth.append({"frame": k + L // 2, "kind": "gradual", "start": k, "end": k + L})
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    return [_finish(f, rng, noise) for f in raw], truth


def _parse_spec(spec: dict):
    params = dict(DEFAULT_CORPUS)
    counts = []
    for key, val in spec.items():
        m = re.fullmatch(r"(dissolve)-(\d+)", key)
        if m:
            counts.append(("dissolve", int(val), int(m.group(2))))
        elif key in SCENARIOS:
            counts.append((key, int(val), None))
        elif key in params:
            params[key] = val
        else:
            raise ValueError(f"unknown corpus spec key {key!r}")
    return counts, params


def make_corpus(spec: dict, seed: int, out_dir) -> dict:
    """Write y4m videos and ``truth.json`` into ``out_dir``.

    ``spec`` maps scenario names to counts; ``dissolve-N`` selects a fade of
    N frames. Size and length keys override DEFAULT_CORPUS. Output is
    byte-identical for equal (spec, seed).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts, p = _parse_spec(spec)
    rng = np.random.default_rng(seed)
    videos = []
    for scenario, n, length in counts:
        for i in range(n):
            vid = f"{scenario if length is None else f'{scenario}-{length}'}_{i:04d}"
            frames, truth = make_video(
                scenario, rng, p["width"], p["height"], p["frames"],
                length or p["dissolve_length"],
            )
            with open(out / f"{vid}.y4m", "wb") as fh:
                write_y4m(fh, (Frame(f, j) for j, f in enumerate(frames)),
                          fps=(int(p["fps"]), 1))
            videos.append({
                "video_id": vid,
                "file": f"{vid}.y4m",
                "scenario": scenario,
                "frames": len(frames),
                "fps": int(p["fps"]),
                "events": truth,
            })
    truth_doc = {"seed": seed, "spec": spec, "videos": videos}
    (out / "truth.json").write_text(json.dumps(truth_doc, indent=1) + "\n")
    return truth_doc


def load_truth(path) -> dict:
    return json.loads(Path(path).read_text())


def load_corpus_frames(corpus_dir, video: dict) -> list[Frame]:
    _, it = open_source(str(Path(corpus_dir) / video["file"]), "y4m")
    return list(it)


def training_sources(n: int, seed: int, width=160, height=120, frames=30):
    """Frame lists for SVM training: static shots and pans of mixed speed."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        speed = rng.uniform(0.0, 0.5) if i % 2 == 0 else rng.uniform(0.5, 12.0)
        shot = _Shot(rng, height, width, speed)
        out.append([Frame(_finish(shot.frame(t), rng, 2.0), t) for t in range(frames)])
    return out


def train_reference_model(seed: int = 1, n_sources: int = 24, n_per_class: int = 300):
    """SVM trained on synthetic same-source / cross-source pairs."""
    from .detector import train_svm

    pairs = make_training_pairs(training_sources(n_sources, seed), n_per_class, seed)
    return train_svm(pairs, seed=seed)


def run_corpus(corpus_dir, model: SvmModel, config: DetectorConfig = DetectorConfig(),
               truth: dict | None = None) -> dict[str, list[TransitionEvent]]:
    truth = truth or load_truth(Path(corpus_dir) / "truth.json")
    preds = {}
    for v in truth["videos"]:
        _, it = open_source(str(Path(corpus_dir) / v["file"]), "y4m")
        preds[v["video_id"]] = detect(it, model, config, Fraction(v["fps"]))
    return preds


# -- scoring ---------------------------------------------------------------

@dataclass(frozen=True)
class DetectionScore:
    accuracy: float
    recall: float
    precision: float
    f1: float
    matched: int
    missed: int
    spurious: int
    tolerance_frames: int
    per_video: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("accuracy", "recall", "precision", "f1", "matched", "missed", "spurious",
                 "tolerance_frames")}


def _span(t) -> tuple[int, int]:
    if isinstance(t, dict):
        f = int(t["frame"])
        return int(t.get("start", f)), int(t.get("end", f))
    return t.frame_index, t.frame_index


def _frame(p) -> int:
    return int(p["frame"]) if isinstance(p, dict) else p.frame_index


def match_events(pred: Sequence, truth: Sequence, tolerance: int):
    """Greedy one-to-one matching in frame order.

    A prediction matches a truth event when it falls within the truth span
    widened by ``tolerance`` on both sides. Returns matched (pred_i, truth_j)
    index pairs.
    """
    pf = sorted(range(len(pred)), key=lambda i: _frame(pred[i]))
    spans = [_span(t) for t in truth]
    tj = sorted(range(len(truth)), key=lambda j: spans[j])
    used = set()
    pairs = []
    for i in pf:
        f = _frame(pred[i])
        for j in tj:
            if j in used:
                continue
            lo, hi = spans[j]
            if lo - tolerance <= f <= hi + tolerance:
                used.add(j)
                pairs.append((i, j))
                break
    return pairs


def score_detection(pred: dict, truth: dict, tolerance_frames: int = 2) -> DetectionScore:
    """Event-level precision/recall and video-level has-transition accuracy.

    ``pred`` and ``truth`` map video id to event lists; videos missing from
    ``pred`` count as having no predictions.
    """
    matched = missed = spurious = correct = 0
    per_video = {}
    vids = sorted(truth)
    for vid in vids:
        t = truth[vid]
        p = pred.get(vid, [])
        m = len(match_events(p, t, tolerance_frames))
        matched += m
        missed += len(t) - m
        spurious += len(p) - m
        ok = (len(p) > 0) == (len(t) > 0)
        correct += ok
        per_video[vid] = {"matched": m, "missed": len(t) - m, "spurious": len(p) - m,
                          "correct": ok}
    recall = matched / (matched + missed) if matched + missed else 1.0
    precision = matched / (matched + spurious) if matched + spurious else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = correct / len(vids) if vids else 1.0
    return DetectionScore(accuracy, recall, precision, f1, matched, missed, spurious,
                          tolerance_frames, per_video)


def truth_by_video(truth_doc: dict) -> dict:
    return {v["video_id"]: v["events"] for v in truth_doc["videos"]}


def read_predictions(path) -> dict:
    """Predictions from a directory of ``<video_id>.jsonl`` files or a single
    JSONL file whose records carry ``video_id``."""
    path = Path(path)
    if path.is_dir():
        return {p.stem: read_events(p) for p in sorted(path.glob("*.jsonl"))}
    out: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            if "video_id" not in d:
                raise ValueError(f"{path}:{lineno}: record has no video_id")
            out.setdefault(d["video_id"], []).append(TransitionEvent.from_json(d))
    return out


# -- benchmark -------------------------------------------------------------

@dataclass(frozen=True)
class BenchRecord:
    resolution: tuple[int, int]
    ms_per_frame: float
    frames_measured: int
    warmup_frames: int

    def __post_init__(self):
        if self.frames_measured < 100:
            raise ValueError("frames_measured must be at least 100")


def parse_resolution(s: str) -> tuple[int, int]:
    s = s.strip().lower()
    if s in RESOLUTIONS:
        return RESOLUTIONS[s]
    m = re.fullmatch(r"(\d+)x(\d+)", s)
    if not m:
        raise ValueError(f"bad resolution {s!r}")
    return int(m.group(1)), int(m.group(2))


def _bench_frames(rng, w, h, n=4):
    """A short pan over a textured scene at full resolution."""
    base = rng.integers(0, 256, (h // 8 + 2, w // 8 + 2, 3), dtype=np.uint8)
    scene = cv2.resize(base, (w + 64, h + 64), interpolation=cv2.INTER_CUBIC)
    out = []
    for i in range(n):
        img = scene[4 * i:4 * i + h, 4 * i:4 * i + w]
        img = cv2.add(img, rng.integers(0, 8, img.shape, dtype=np.uint8))
        out.append(Frame(np.ascontiguousarray(img), i))
    return out


def bench(resolutions: Sequence[tuple[int, int]], model: SvmModel | None = None,
          frames: int = 100, warmup: int = 10, seed: int = 0) -> list[BenchRecord]:
    """Mean wall-clock ms per frame pair, single-threaded.

    The timed path is the streaming one: prepare the incoming frame, compute
    features against the previous prepared frame, evaluate the SVM. Each
    frame is prepared once, as in ``detect``. Resolutions are measured in
    interleaved rounds so slow drift in machine speed affects all of them
    alike.
    """
    if frames < 100:
        raise ValueError("frames must be at least 100")
    model = model or SvmModel(-1.0, -1.0, 0.0)
    prev_threads = cv2.getNumThreads()
    cv2.setNumThreads(1)
    try:
        rng = np.random.default_rng(seed)
        sets = [_bench_frames(rng, w, h) for w, h in resolutions]
        prev = [prepare(s[0]) for s in sets]
        times = [[] for _ in sets]
        for step in range(warmup + frames):
            for r, s in enumerate(sets):
                f = s[(step + 1) % len(s)]
                t0 = time.perf_counter()
                cur = prepare(f)
                decision(model, pair_features_prepared(prev[r], cur))
                dt = time.perf_counter() - t0
                prev[r] = cur
                if step >= warmup:
                    times[r].append(dt)
    finally:
        cv2.setNumThreads(prev_threads)
    return [BenchRecord(res, 1000.0 * float(np.mean(t)), len(t), warmup)
            for res, t in zip(resolutions, times)]
