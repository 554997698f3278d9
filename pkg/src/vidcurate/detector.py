"""Shot transition detection.

A linear SVM fuses the colour and structure distances of consecutive frames
into one decision value per pair. A sliding-window Gaussian over recent
decision values decides when a value is anomalous: single-pair spikes are
cuts, and a sustained shift of the windowed mean is a gradual transition.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .features import PairFeatures, iter_pair_features

log = logging.getLogger(__name__)

MODEL_VERSION = "1"
MIN_TRAIN_PAIRS = 10


class ModelError(ValueError):
    """Model file is malformed or has the wrong version."""


class ModelVersionError(ModelError):
    pass


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class SvmModel:
    w_color: float
    w_struct: float
    bias: float
    mean: tuple[float, float] = (0.0, 0.0)
    std: tuple[float, float] = (1.0, 1.0)
    version: str = MODEL_VERSION
    # informational only, not part of the model file
    train_accuracy: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        if len(self.mean) != 2 or len(self.std) != 2:
            raise ModelError("mean and std must have two components")
        if not all(s > 0 for s in self.std):
            raise ModelError(f"std components must be positive, got {self.std}")

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.w_color, self.w_struct])

    def scaled(self, c: float) -> "SvmModel":
        """Model with weights and bias multiplied by ``c``."""
        return SvmModel(self.w_color * c, self.w_struct * c, self.bias * c, self.mean, self.std)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "w_color": self.w_color,
            "w_struct": self.w_struct,
            "bias": self.bias,
            "mean": list(self.mean),
            "std": list(self.std),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        if not isinstance(d, dict):
            raise ModelError("model must be a JSON object")
        if "version" not in d:
            raise ModelError("model is missing 'version'")
        if str(d["version"]) != MODEL_VERSION:
            raise ModelVersionError(
                f"unsupported model version {d['version']!r}, expected {MODEL_VERSION!r}"
            )
        for key in ("w_color", "w_struct", "bias", "mean", "std"):
            if key not in d:
                raise ModelError(f"model is missing {key!r}")
        try:
            return cls(
                float(d["w_color"]), float(d["w_struct"]), float(d["bias"]),
                tuple(d["mean"]), tuple(d["std"]),
            )
        except (TypeError, ValueError) as e:
            raise ModelError(f"malformed model: {e}") from e


@dataclass(frozen=True)
class LabeledPair:
    features: PairFeatures
    label: int

    def __post_init__(self):
        if self.label not in (1, -1):
            raise ValueError(f"label must be +1 or -1, got {self.label}")


def _as_xy(pairs: Sequence[LabeledPair]):
    X = np.array([[p.features.d_color, p.features.d_struct] for p in pairs], dtype=np.float64)
    y = np.array([p.label for p in pairs], dtype=np.float64)
    return X, y


def train_svm(pairs: Sequence[LabeledPair], epochs: int = 20, reg_lambda: float = 1e-3,
              seed: int = 0) -> SvmModel:
    """Linear SVM by stochastic subgradient descent on the L2-regularised hinge loss.

    Features are standardised over the training set. Step size is 1/(lambda*t)
    with the weights projected onto the ball of radius 1/sqrt(lambda) after
    each step; the bias is not regularised. The returned model averages the
    iterates over the second half of training.
    """
    pairs = list(pairs)
    if len(pairs) < MIN_TRAIN_PAIRS:
        raise TrainingError(f"need at least {MIN_TRAIN_PAIRS} pairs, got {len(pairs)}")
    if reg_lambda <= 0:
        raise TrainingError("reg_lambda must be positive")
    if epochs < 1:
        raise TrainingError("epochs must be at least 1")
    X, y = _as_xy(pairs)
    if len(set(y.tolist())) < 2:
        raise TrainingError("training pairs contain a single class")
    if not np.all(np.isfinite(X)):
        raise TrainingError("non-finite feature values")

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # a constant feature carries no information; leave it unscaled
    std[std == 0] = 1.0
    Z = (X - mean) / std

    n = len(y)
    rng = np.random.default_rng(seed)
    radius = 1.0 / math.sqrt(reg_lambda)
    w = np.zeros(2)
    b = 0.0
    w_sum = np.zeros(2)
    b_sum = 0.0
    n_avg = 0
    t = 0
    total = epochs * n
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (reg_lambda * t)
            zi = Z[i]
            margin = y[i] * (w @ zi + b)
            w *= 1.0 - eta * reg_lambda
            if margin < 1.0:
                w += eta * y[i] * zi
                b += eta * y[i]
            norm = math.hypot(w[0], w[1])
            if norm > radius:
                w *= radius / norm
            if t > total // 2:
                w_sum += w
                b_sum += b
                n_avg += 1
    w = w_sum / n_avg
    b = b_sum / n_avg

    acc = float(np.mean(np.sign(Z @ w + b) == y))
    log.info("trained SVM on %d pairs: w=%s b=%.4f acc=%.4f", n, w, b, acc)
    return SvmModel(float(w[0]), float(w[1]), float(b), tuple(mean), tuple(std),
                    train_accuracy=acc)


def decision(model: SvmModel, features) -> float:
    """Signed margin; positive means transition-like."""
    if isinstance(features, PairFeatures):
        xc, xs = features.d_color, features.d_struct
    else:
        xc, xs = features
    return (model.w_color * ((xc - model.mean[0]) / model.std[0])
            + model.w_struct * ((xs - model.mean[1]) / model.std[1])
            + model.bias)


def decision_values(model: SvmModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return ((X - np.array(model.mean)) / np.array(model.std)) @ model.weights + model.bias


def accuracy(model: SvmModel, pairs: Sequence[LabeledPair]) -> float:
    X, y = _as_xy(pairs)
    return float(np.mean(np.sign(decision_values(model, X)) == y))


def save_model(model: SvmModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> SvmModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ModelError(f"{path}: not valid JSON: {e}") from e
    return SvmModel.from_dict(d)


def read_pairs_csv(path) -> list[LabeledPair]:
    """Read ``d_color,d_struct,label`` rows."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"d_color", "d_struct", "label"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            frame = int(row.get("frame") or 1)
            feats = PairFeatures(float(row["d_color"]), float(row["d_struct"]), frame)
            out.append(LabeledPair(feats, int(float(row["label"]))))
    return out


def write_pairs_csv(path, pairs: Iterable[LabeledPair]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d_color", "d_struct", "label"])
        for p in pairs:
            w.writerow([repr(float(p.features.d_color)), repr(float(p.features.d_struct)), p.label])


def make_training_pairs(sources: Sequence[Sequence], n_per_class: int, seed: int = 0):
    """Negatives are consecutive frames of one source; positives join frames of
    two different sources. ``sources`` are lists of frames (at least two, all
    the same size)."""
    from .features import pair_features

    if len(sources) < 2:
        raise ValueError("need at least two sources to build positive pairs")
    rng = np.random.default_rng(seed)
    pairs = []
    usable = [i for i, s in enumerate(sources) if len(s) >= 2]
    if not usable:
        raise ValueError("no source has two frames")
    for _ in range(n_per_class):
        si = usable[rng.integers(len(usable))]
        k = int(rng.integers(1, len(sources[si])))
        pairs.append(LabeledPair(pair_features(sources[si][k - 1], sources[si][k]), -1))
    for _ in range(n_per_class):
        a, b = rng.choice(len(sources), size=2, replace=False)
        fa = sources[a][rng.integers(len(sources[a]))]
        fb = sources[b][rng.integers(len(sources[b]))]
        pairs.append(LabeledPair(pair_features(fa, fb), 1))
    return pairs


class GaussianTracker:
    """Mean and population variance over the last ``window`` pushed values.

    Statistics are recomputed from the window contents on every push, so they
    never drift from the values actually held.
    """

    def __init__(self, window: int = 30):
        if window < 1:
            raise ValueError("window must be positive")
        self.window = window
        self.values: deque[float] = deque(maxlen=window)
        self.count = 0
        self.mean = 0.0
        self.variance = 0.0

    def update(self, value: float) -> "GaussianTracker":
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {value}")
        self.values.append(float(value))
        self.count += 1
        n = len(self.values)
        m = math.fsum(self.values) / n
        self.mean = m
        self.variance = max(0.0, math.fsum((v - m) ** 2 for v in self.values) / n)
        return self

    push = update

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def snapshot(self) -> tuple[float, float, int]:
        return self.mean, self.std, self.count


@dataclass(frozen=True)
class TransitionEvent:
    frame_index: int
    time_sec: float
    kind: str
    score: float
    z_score: float

    def to_json(self) -> dict:
        return {
            "frame": self.frame_index,
            "time_sec": self.time_sec,
            "kind": self.kind,
            "score": self.score,
            "z_score": self.z_score,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TransitionEvent":
        return cls(int(d["frame"]), float(d["time_sec"]), str(d["kind"]),
                   float(d["score"]), float(d["z_score"]))


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 30
    warmup: int = 12
    tau0: float = 0.5
    gradual_window: int = 15
    z_cut: float = 3.0
    z_gradual: float = 3.0
    # gradual runs longer than this are sustained motion, not a transition;
    # None means 4 * gradual_window
    max_gradual_run: int | None = None
    sigma_floor: float = 1e-6
    # the gradual window mean must also rise this far above the baseline
    # mean, in decision units (the SVM margin is 1); the absolute gate that
    # s > 0 provides for cuts
    gradual_min_shift: float = 0.05

    def __post_init__(self):
        if self.window < 1 or self.gradual_window < 1 or self.warmup < 0:
            raise ValueError("window sizes must be positive")

    @property
    def max_run(self) -> int:
        return self.max_gradual_run if self.max_gradual_run is not None else 4 * self.gradual_window


class _Run:
    __slots__ = ("first", "last", "z_max", "held")

    def __init__(self, frame: int, z: float):
        self.first = frame
        self.last = frame
        self.z_max = z
        self.held: list[float] = []


class Detector:
    """Streaming detector over decision values.

    Feed one value per consecutive pair with ``step(frame, value)``; it returns
    any event that becomes final at that step. Call ``finish()`` at the end of
    the stream. ``pushed`` records every value that entered the tracker, for
    checking that event values are kept out of the baseline.
    """

    def __init__(self, config: DetectorConfig = DetectorConfig(), time_of=None):
        self.config = config
        self.tracker = GaussianTracker(config.window)
        self.time_of = time_of or (lambda i: float(i))
        G = config.gradual_window
        self._recent: deque[tuple[int, float]] = deque(maxlen=config.max_run + G)
        # non-cut values still inside the gradual window; they reach the
        # tracker only on leaving it, so the tracker always describes the
        # stream as of G frames ago
        self._pending: deque[tuple[int, float]] = deque()
        self._run: _Run | None = None
        self._quiet_until = -1
        self.pushed: list[tuple[int, float]] = []

    def _sigma(self, s: float) -> float:
        return max(s, self.config.sigma_floor)

    def _new_shot(self) -> None:
        # statistics of the previous shot say nothing about the next one
        self.tracker = GaussianTracker(self.config.window)
        self._pending.clear()

    def _push(self, frame: int, value: float) -> None:
        self.tracker.update(value)
        self.pushed.append((frame, value))

    def _close_run(self) -> TransitionEvent | None:
        run, self._run = self._run, None
        cfg = self.config
        length = run.last - run.first + 1
        if length > cfg.max_run:
            log.debug("discarding %d-frame gradual run at %d as sustained motion", length, run.first)
            for frame, v in run.held:
                self._push(frame, v)
            return None
        lo = run.first - cfg.gradual_window + 1
        frame, score = max(
            ((f, v) for f, v in self._recent if lo <= f <= run.last), key=lambda fv: (fv[1], -fv[0])
        )
        self._quiet_until = run.last + cfg.gradual_window
        self._new_shot()
        return TransitionEvent(frame, self.time_of(frame), "gradual", score, run.z_max)

    def step(self, frame: int, value: float) -> TransitionEvent | None:
        cfg = self.config
        G = cfg.gradual_window
        mu, sd, n = self.tracker.snapshot()
        self._recent.append((frame, value))
        sigma = self._sigma(sd)
        z = (value - mu) / sigma
        if n >= cfg.warmup:
            is_cut = value > mu + cfg.z_cut * sigma and value > 0
        else:
            is_cut = value > cfg.tau0
        quiet = frame <= self._quiet_until

        if is_cut:
            event = None
            if self._run is not None:
                # a cut inside an open gradual run supersedes it
                self._run = None
            if not quiet:
                event = TransitionEvent(frame, self.time_of(frame), "cut", value, z)
                self._quiet_until = frame + G
                self._new_shot()
            return event

        self._pending.append((frame, value))
        flagged = False
        zg = 0.0
        if not quiet and n >= cfg.warmup and len(self._recent) >= G:
            tail = [v for _, v in list(self._recent)[-G:]]
            m = math.fsum(tail) / G
            zg = (m - mu) / sigma
            bar = mu + cfg.z_gradual * sigma
            # the median test demands a sustained shift, so a few outliers
            # cannot carry the mean over the bar
            flagged = (m > bar and float(np.median(tail)) > bar
                       and m - mu > cfg.gradual_min_shift)

        event = None
        if flagged:
            if self._run is None:
                self._run = _Run(frame, zg)
            else:
                self._run.last = frame
                self._run.z_max = max(self._run.z_max, zg)
        elif self._run is not None:
            event = self._close_run()
        if self._run is not None and self._run.last - self._run.first + 1 > cfg.max_run:
            event = self._close_run()
        while len(self._pending) > G - 1:
            old = self._pending.popleft()
            if self._run is not None:
                self._run.held.append(old)
            else:
                self._push(*old)
        return event

    def finish(self) -> TransitionEvent | None:
        if self._run is not None:
            return self._close_run()
        return None


def detect_scores(scores: Iterable[tuple[int, float]], config: DetectorConfig = DetectorConfig(),
                  time_of=None) -> list[TransitionEvent]:
    """Events from a stream of ``(frame_index, decision_value)``."""
    det = Detector(config, time_of)
    events = []
    for frame, value in scores:
        ev = det.step(frame, value)
        if ev is not None:
            events.append(ev)
    ev = det.finish()
    if ev is not None:
        events.append(ev)
    return events


def iter_scores(frames: Iterable, model: SvmModel) -> Iterator[tuple[int, float]]:
    for i, pf in enumerate(iter_pair_features(frames), start=1):
        yield i, decision(model, pf)


def detect(frames: Iterable, model: SvmModel, config: DetectorConfig = DetectorConfig(),
           fps: Fraction | float = Fraction(30)) -> list[TransitionEvent]:
    """Transition events for a frame stream.

    Pair ``(t-1, t)`` is reported at frame ``t``.
    """
    fps = Fraction(fps)

    def time_of(i):
        return float(i / fps)

    return detect_scores(iter_scores(frames, model), config, time_of)


def write_events(path_or_stream, events: Iterable[TransitionEvent]) -> None:
    lines = "".join(json.dumps(e.to_json()) + "\n" for e in events)
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(lines)
    else:
        Path(path_or_stream).write_text(lines)


def read_events(path) -> list[TransitionEvent]:
    events = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                events.append(TransitionEvent.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: bad event record: {e}") from e
    return events
