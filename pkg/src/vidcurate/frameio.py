"""Frame ingestion from YUV4MPEG2 streams and P6 pixmap directories.

Every decoder yields :class:`Frame` objects holding an immutable ``(H, W, 3)``
uint8 array in B,G,R order. Compressed video is expected to arrive as y4m
piped from an external decoder, e.g.::

    ffmpeg -i clip.mp4 -f yuv4mpegpipe -pix_fmt yuv444p - | vidcurate detect --input - ...
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO, Iterator

import cv2
import numpy as np

log = logging.getLogger(__name__)

Y4M_MAGIC = b"YUV4MPEG2"
_MAX_HEADER = 4096

COLORSPACES = ("444", "420", "420jpeg", "420mpeg2")


class FrameIOError(Exception):
    """Base class for ingestion failures."""


class ParseError(FrameIOError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class TruncatedStreamError(FrameIOError):
    def __init__(self, last_complete_index: int, offset: int):
        self.last_complete_index = last_complete_index
        self.offset = offset
        super().__init__(
            f"truncated frame payload at byte offset {offset}; "
            f"last complete frame index is {last_complete_index}"
        )


class UnsupportedFormatError(FrameIOError):
    pass


class DimensionMismatchError(FrameIOError):
    def __init__(self, path: str | os.PathLike, expected: tuple[int, int], got: tuple[int, int]):
        self.path = str(path)
        super().__init__(
            f"{path}: frame is {got[0]}x{got[1]}, expected {expected[0]}x{expected[1]}"
        )


@dataclass(frozen=True, eq=False)
class Frame:
    """One decoded frame.

    ``pixels`` is a read-only ``(height, width, 3)`` uint8 array in BGR order.
    """

    pixels: np.ndarray
    index: int = 0
    timestamp_sec: float = 0.0

    def __post_init__(self):
        px = self.pixels
        if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) uint8 pixels, got {px.dtype} {px.shape}")
        if px.shape[0] <= 0 or px.shape[1] <= 0:
            raise ValueError("frame must be nonempty")
        if self.index < 0 or self.timestamp_sec < 0:
            raise ValueError("index and timestamp must be non-negative")
        if px.flags.writeable:
            px = px.copy()
            px.flags.writeable = False
            object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.index == other.index
            and self.timestamp_sec == other.timestamp_sec
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None


@dataclass(frozen=True)
class StreamInfo:
    width: int
    height: int
    fps_num: int = 30
    fps_den: int = 1
    colorspace: str = "444"
    source_id: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.fps_den <= 0 or self.fps_num <= 0:
            raise ValueError(f"invalid frame rate {self.fps_num}/{self.fps_den}")

    @property
    def fps(self) -> Fraction:
        return Fraction(self.fps_num, self.fps_den)

    def timestamp(self, index: int) -> float:
        return float(Fraction(index * self.fps_den, self.fps_num))


def parse_fps(text: str) -> tuple[int, int]:
    """Parse ``"N"`` or ``"N:D"`` (also ``N/D``) into a positive rational."""
    text = text.strip().replace("/", ":")
    try:
        if ":" in text:
            num, den = (int(p) for p in text.split(":", 1))
        else:
            frac = Fraction(text)
            num, den = frac.numerator, frac.denominator
    except ValueError:
        raise ValueError(f"invalid frame rate {text!r}") from None
    if num <= 0 or den <= 0:
        raise ValueError(f"invalid frame rate {text!r}")
    return num, den


# -- colour conversion ------------------------------------------------------
# BT.601 limited range ("studio swing"): Y in [16, 235], Cb/Cr in [16, 240].

def yuv_to_bgr(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    c = y.astype(np.float64) - 16.0
    d = u.astype(np.float64) - 128.0
    e = v.astype(np.float64) - 128.0
    r = 1.164383561643836 * c + 1.596026785714286 * e
    g = 1.164383561643836 * c - 0.391762290094914 * d - 0.812967647237771 * e
    b = 1.164383561643836 * c + 2.017232142857143 * d
    out = np.empty(y.shape + (3,), dtype=np.uint8)
    for ch, plane in enumerate((b, g, r)):
        out[..., ch] = np.clip(np.rint(plane), 0, 255)
    return out


def bgr_to_yuv(bgr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    b = bgr[..., 0].astype(np.float64)
    g = bgr[..., 1].astype(np.float64)
    r = bgr[..., 2].astype(np.float64)
    y = 16.0 + 0.256788235294118 * r + 0.504129411764706 * g + 0.097905882352941 * b
    u = 128.0 - 0.148223529411765 * r - 0.290992156862745 * g + 0.439215686274510 * b
    v = 128.0 + 0.439215686274510 * r - 0.367788235294118 * g - 0.071427450980392 * b
    return tuple(np.clip(np.rint(p), 0, 255).astype(np.uint8) for p in (y, u, v))


# -- YUV4MPEG2 --------------------------------------------------------------

def _parse_y4m_header(line: bytes, offset: int = 0) -> StreamInfo:
    tokens = line.split(b" ")
    if tokens[0] != Y4M_MAGIC:
        raise ParseError("missing YUV4MPEG2 magic", offset)
    width = height = None
    fps = None
    colorspace = "420jpeg"
    extra = {}
    pos = offset + len(Y4M_MAGIC) + 1
    for tok in tokens[1:]:
        if not tok:
            pos += 1
            continue
        key, val = chr(tok[0]), tok[1:].decode("ascii", "replace")
        try:
            if key == "W":
                width = int(val)
            elif key == "H":
                height = int(val)
            elif key == "F":
                fps = parse_fps(val)
            elif key == "C":
                colorspace = val
            elif key in "IAX":
                extra[key] = val
            else:
                raise ParseError(f"unknown header token {tok!r}", pos)
        except ValueError:
            raise ParseError(f"bad header token {tok!r}", pos) from None
        pos += len(tok) + 1
    if width is None or height is None:
        raise ParseError("header lacks W or H token", offset)
    if width <= 0 or height <= 0:
        raise ParseError(f"invalid dimensions {width}x{height}", offset)
    if fps is None:
        raise ParseError("header lacks F token", offset)
    if colorspace not in COLORSPACES:
        raise UnsupportedFormatError(f"unsupported y4m colorspace C{colorspace}")
    return StreamInfo(width, height, fps[0], fps[1], colorspace, extra=extra)


def _chroma_shape(info: StreamInfo) -> tuple[int, int]:
    if info.colorspace == "444":
        return info.height, info.width
    return (info.height + 1) // 2, (info.width + 1) // 2


def _read_line(stream: BinaryIO, offset: int) -> bytes | None:
    """Read up to and excluding the next newline; None at clean EOF."""
    buf = bytearray()
    while True:
        ch = stream.read(1)
        if not ch:
            if not buf:
                return None
            raise ParseError("unterminated header line", offset)
        if ch == b"\n":
            return bytes(buf)
        buf += ch
        if len(buf) > _MAX_HEADER:
            raise ParseError("header line too long", offset)


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class Y4MReader:
    """Sequential y4m decoder. Iterate to obtain frames."""

    def __init__(self, stream: BinaryIO, source_id: str = ""):
        self._stream = stream
        line = _read_line(stream, 0)
        if line is None:
            raise ParseError("empty stream", 0)
        info = _parse_y4m_header(line, 0)
        self.info = StreamInfo(
            info.width, info.height, info.fps_num, info.fps_den,
            info.colorspace, source_id, info.extra,
        )
        self._offset = len(line) + 1

    def __iter__(self) -> Iterator[Frame]:
        info = self.info
        ch, cw = _chroma_shape(info)
        luma = info.width * info.height
        chroma = ch * cw
        payload = luma + 2 * chroma
        index = 0
        while True:
            line = _read_line(self._stream, self._offset)
            if line is None:
                return
            if not line.startswith(b"FRAME"):
                raise ParseError("expected FRAME marker", self._offset)
            self._offset += len(line) + 1
            raw = _read_exact(self._stream, payload)
            if len(raw) < payload:
                raise TruncatedStreamError(index - 1, self._offset + len(raw))
            self._offset += payload
            planes = np.frombuffer(raw, dtype=np.uint8)
            y = planes[:luma].reshape(info.height, info.width)
            u = planes[luma:luma + chroma].reshape(ch, cw)
            v = planes[luma + chroma:].reshape(ch, cw)
            if info.colorspace != "444":
                # nearest-neighbour chroma upsampling
                u = u.repeat(2, 0).repeat(2, 1)[: info.height, : info.width]
                v = v.repeat(2, 0).repeat(2, 1)[: info.height, : info.width]
            yield Frame(yuv_to_bgr(y, u, v), index, info.timestamp(index))
            index += 1


def open_y4m(stream: BinaryIO | bytes | str | os.PathLike, source_id: str | None = None):
    """Open a y4m source; returns ``(StreamInfo, frame iterator)``.

    ``stream`` may be a binary file object, raw bytes, or a path.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
        source_id = source_id or ""
    elif isinstance(stream, (str, os.PathLike)):
        path = Path(stream)
        source_id = source_id or path.stem
        stream = open(path, "rb")
    reader = Y4MReader(stream, source_id or "")
    return reader.info, iter(reader)


def write_y4m(stream: BinaryIO, frames, fps: tuple[int, int] = (30, 1)) -> int:
    """Write frames as a C444 y4m stream. Returns the number of frames written."""
    frames = iter(frames)
    first = next(frames, None)
    if first is None:
        raise ValueError("cannot infer dimensions from an empty frame sequence")
    h, w = first.pixels.shape[:2]
    stream.write(b"YUV4MPEG2 W%d H%d F%d:%d Ip A1:1 C444\n" % (w, h, fps[0], fps[1]))
    n = 0
    for frame in _chain(first, frames):
        if frame.pixels.shape[:2] != (h, w):
            raise ValueError("all frames must share dimensions")
        y, u, v = bgr_to_yuv(frame.pixels)
        stream.write(b"FRAME\n")
        stream.write(y.tobytes())
        stream.write(u.tobytes())
        stream.write(v.tobytes())
        n += 1
    return n


def _chain(first, rest):
    yield first
    yield from rest


# -- P6 pixmaps ------------------------------------------------------------

def _ppm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError("truncated pixmap header", pos)
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read a P6 pixmap and return its raster in BGR order."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise ParseError(f"{path}: not a P6 pixmap", 0)
    tokens, start = _ppm_tokens(data[2:], 3)
    start += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ParseError(f"{path}: malformed pixmap header", 2) from None
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} unsupported (only 255)")
    if width <= 0 or height <= 0:
        raise ParseError(f"{path}: invalid dimensions {width}x{height}", 2)
    n = width * height * 3
    raster = np.frombuffer(data[start:start + n], dtype=np.uint8)
    if raster.size < n:
        raise ParseError(f"{path}: pixmap raster truncated", len(data))
    return raster.reshape(height, width, 3)[..., ::-1].copy()


def write_ppm(path: str | os.PathLike, frame: Frame | np.ndarray) -> None:
    px = frame.pixels if isinstance(frame, Frame) else frame
    h, w = px.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(px[..., ::-1]).tobytes())


def open_frame_dir(path: str | os.PathLike, fps: tuple[int, int] = (30, 1)):
    """Open a directory of ``.ppm`` files, consumed in lexicographic order."""
    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".ppm", ".pnm"))
    if not files:
        raise FrameIOError(f"{path}: no .ppm files")
    first = read_ppm(files[0])
    h, w = first.shape[:2]
    info = StreamInfo(w, h, fps[0], fps[1], "444", path.name)

    def frames():
        for i, f in enumerate(files):
            px = first if i == 0 else read_ppm(f)
            if px.shape[:2] != (h, w):
                raise DimensionMismatchError(f, (w, h), (px.shape[1], px.shape[0]))
            yield Frame(px, i, info.timestamp(i))

    return info, frames()


def open_source(src: str, fmt: str = "auto", fps: tuple[int, int] = (30, 1)):
    """Open ``src`` as y4m (path or ``-`` for stdin) or as a pixmap directory."""
    if fmt == "auto":
        fmt = "frames" if src != "-" and Path(src).is_dir() else "y4m"
    if fmt == "frames":
        return open_frame_dir(src, fps)
    if fmt != "y4m":
        raise ValueError(f"unknown input format {fmt!r}")
    if src == "-":
        import sys
        return open_y4m(sys.stdin.buffer, "stdin")
    return open_y4m(src)


def downscale(frame: Frame, max_dim: int) -> Frame:
    """Box-filter ``frame`` so its longer side is at most ``max_dim``."""
    if max_dim < 16:
        raise ValueError(f"max_dim must be >= 16, got {max_dim}")
    h, w = frame.pixels.shape[:2]
    if max(w, h) <= max_dim:
        return frame
    scale = Fraction(max_dim, max(w, h))
    nw = max(1, round(w * scale))
    nh = max(1, round(h * scale))
    px = cv2.resize(np.ascontiguousarray(frame.pixels), (nw, nh), interpolation=cv2.INTER_AREA)
    return Frame(px, frame.index, frame.timestamp_sec)
