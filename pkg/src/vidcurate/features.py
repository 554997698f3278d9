"""Inter-frame colour and structure distances.

``d_color`` is the Pearson correlation of concatenated per-channel BGR
histograms; ``d_struct`` is block SSIM between edge-enhanced luma images,
where edge enhancement is ``max(gray, canny(gray))``.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .frameio import Frame

log = logging.getLogger(__name__)

N_BINS = 256
SSIM_BLOCK = 8
C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2

CANNY_LOW = 50
CANNY_HIGH = 150

# Separable 5-tap Gaussian, sigma = 1.4 sampled and quantised to sum 64, so
# the 2-D normaliser is a shift by 12.
GAUSS_TAPS = np.array([7, 15, 20, 15, 7], dtype=np.int32)
GAUSS_SHIFT = 12


class DegenerateHistogramError(ValueError):
    """Histogram has zero variance across all bins."""


@dataclass(frozen=True)
class PairFeatures:
    d_color: float
    d_struct: float
    frame_index: int = 1

    def as_array(self) -> np.ndarray:
        return np.array([self.d_color, self.d_struct])


def _pixels(frame) -> np.ndarray:
    return frame.pixels if isinstance(frame, Frame) else np.asarray(frame, dtype=np.uint8)


def histogram(frame) -> np.ndarray:
    """768-bin B,G,R histogram, each channel block normalised to sum 1."""
    _, counts = _kernels.gray_and_hist(np.ascontiguousarray(_pixels(frame)))
    return _normalise(counts)


def _normalise(counts: np.ndarray) -> np.ndarray:
    total = counts[0].sum()
    return (counts / total).reshape(-1)


def color_distance(h1: np.ndarray, h2: np.ndarray) -> float:
    """Pearson correlation between two histogram vectors, clamped to [-1, 1]."""
    a = h1 - h1.mean()
    b = h2 - h2.mean()
    va = np.dot(a, a)
    vb = np.dot(b, b)
    if va == 0.0 or vb == 0.0:
        raise DegenerateHistogramError("histogram is constant across all bins")
    r = np.dot(a, b) / np.sqrt(va * vb)
    return float(min(1.0, max(-1.0, r)))


def grayscale(frame) -> np.ndarray:
    """Rounded BT.601 luma: round(0.114 B + 0.587 G + 0.299 R)."""
    gray, _ = _kernels.gray_and_hist(np.ascontiguousarray(_pixels(frame)))
    return gray


class _Workspace(threading.local):
    """Scratch buffers reused across frames of one shape.

    Buffers above the allocator's mmap threshold (4K frames) would otherwise
    be page-faulted in afresh on every call.
    """

    def __init__(self):
        self.shape = None

    def get(self, h: int, w: int):
        if self.shape != (h, w):
            self.blur = np.empty((h, w), dtype=np.uint8)
            self.hbuf = np.empty((5, w), dtype=np.int32)
            self.tags = np.empty(5, dtype=np.int64)
            self.rows = np.zeros((3, w), dtype=np.int32)
            self.cls = np.empty((h, w), dtype=np.uint8)
            self.stack = np.empty(h * w, dtype=np.int32)
            self.shape = (h, w)
        return self


_workspace = _Workspace()


def gaussian_blur(gray: np.ndarray) -> np.ndarray:
    """5x5 integer Gaussian blur, reflect-101 borders, rounded to uint8."""
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = gray.shape
    if h < 3 or w < 3:
        raise ValueError("blur needs at least 3x3 pixels")
    out = np.empty_like(gray)
    _kernels.gaussian_blur(
        gray, GAUSS_TAPS, GAUSS_SHIFT, out, np.empty((5, w), np.int32), np.empty(5, np.int64)
    )
    return out


def _canny_into(gray: np.ndarray, out: np.ndarray, low: float, high: float) -> np.ndarray:
    h, w = gray.shape
    if h < 3 or w < 3:
        return out
    ws = _workspace.get(h, w)
    _kernels.gaussian_blur(gray, GAUSS_TAPS, GAUSS_SHIFT, ws.blur, ws.hbuf, ws.tags)
    low2 = int(round(low * low))
    high2 = int(round(high * high))
    _kernels.canny_into(ws.blur, ws.rows, ws.cls, ws.stack, low2, high2, out, 255)
    return out


def canny(gray: np.ndarray, low: float = CANNY_LOW, high: float = CANNY_HIGH) -> np.ndarray:
    """Binary edge map (0/255).

    Gaussian blur, 3x3 Sobel, 4-direction non-maximum suppression, then
    hysteresis on the L2 gradient magnitude. Border pixels are never edges.
    """
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    return _canny_into(gray, np.zeros(gray.shape, dtype=np.uint8), low, high)


def edge_enhance(frame) -> np.ndarray:
    return _edge_enhance_gray(grayscale(frame))


def _edge_enhance_gray(gray: np.ndarray) -> np.ndarray:
    # max(gray, canny) == gray with edge pixels raised to 255
    return _canny_into(gray, gray.copy(), CANNY_LOW, CANNY_HIGH)


def _block_counts(h: int, w: int, bs: int = SSIM_BLOCK) -> np.ndarray:
    rows = np.full((h + bs - 1) // bs, bs)
    cols = np.full((w + bs - 1) // bs, bs)
    if h % bs:
        rows[-1] = h % bs
    if w % bs:
        cols[-1] = w % bs
    return np.outer(rows, cols).astype(np.float64)


def _ssim_from_moments(n, s1, q1, s2, q2, x12) -> float:
    mu1 = s1 / n
    mu2 = s2 / n
    var1 = q1 / n - mu1 * mu1
    var2 = q2 / n - mu2 * mu2
    cov = x12 / n - mu1 * mu2
    num = (2 * mu1 * mu2 + C1) * (2 * cov + C2)
    den = (mu1 * mu1 + mu2 * mu2 + C1) * (var1 + var2 + C2)
    return float(np.mean(num / den))


def struct_distance(e1: np.ndarray, e2: np.ndarray) -> float:
    """Mean SSIM over non-overlapping 8x8 blocks (partial border blocks kept)."""
    if e1.shape != e2.shape:
        raise ValueError(f"dimension mismatch: {e1.shape} vs {e2.shape}")
    e1 = np.ascontiguousarray(e1, dtype=np.uint8)
    e2 = np.ascontiguousarray(e2, dtype=np.uint8)
    s1, q1 = _kernels.block_moments(e1, SSIM_BLOCK)
    s2, q2 = _kernels.block_moments(e2, SSIM_BLOCK)
    x12 = _kernels.block_cross(e1, e2, SSIM_BLOCK)
    n = _block_counts(*e1.shape)
    return _ssim_from_moments(n, s1, q1, s2, q2, x12)


@dataclass(frozen=True, eq=False)
class PreparedFrame:
    """Per-frame quantities reused by both pairs a frame takes part in."""

    hist: np.ndarray
    edges: np.ndarray
    block_sum: np.ndarray
    block_sumsq: np.ndarray
    block_count: np.ndarray
    index: int


def prepare(frame) -> PreparedFrame:
    px = np.ascontiguousarray(_pixels(frame))
    gray, counts = _kernels.gray_and_hist(px)
    # gray is ours and blurred into scratch before any edge is written
    edges = _canny_into(gray, gray, CANNY_LOW, CANNY_HIGH)
    s, q = _kernels.block_moments(edges, SSIM_BLOCK)
    index = frame.index if isinstance(frame, Frame) else 0
    return PreparedFrame(_normalise(counts), edges, s, q, _block_counts(*edges.shape), index)


def _safe_color_distance(h1: np.ndarray, h2: np.ndarray) -> float:
    try:
        return color_distance(h1, h2)
    except DegenerateHistogramError:
        value = 1.0 if np.array_equal(h1, h2) else 0.0
        log.warning("degenerate histogram; substituting d_color=%s", value)
        return value


def pair_features_prepared(p1: PreparedFrame, p2: PreparedFrame) -> PairFeatures:
    if p1.edges.shape != p2.edges.shape:
        raise ValueError(f"dimension mismatch: {p1.edges.shape} vs {p2.edges.shape}")
    d_color = _safe_color_distance(p1.hist, p2.hist)
    x12 = _kernels.block_cross(p1.edges, p2.edges, SSIM_BLOCK)
    d_struct = _ssim_from_moments(
        p1.block_count, p1.block_sum, p1.block_sumsq, p2.block_sum, p2.block_sumsq, x12
    )
    return PairFeatures(d_color, d_struct, max(p2.index, 1))


def pair_features(f1, f2) -> PairFeatures:
    """Colour and structure distance between two frames of equal size."""
    if _pixels(f1).shape != _pixels(f2).shape:
        raise ValueError("dimension mismatch between frames")
    return pair_features_prepared(prepare(f1), prepare(f2))


def iter_pair_features(frames):
    """Yield PairFeatures for each consecutive pair in a frame stream."""
    prev = None
    for frame in frames:
        cur = prepare(frame)
        if prev is not None:
            yield pair_features_prepared(prev, cur)
        prev = cur
