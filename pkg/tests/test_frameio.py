import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vidcurate import frameio
from vidcurate.frameio import (
    DimensionMismatchError, Frame, ParseError, TruncatedStreamError, UnsupportedFormatError,
)


def y4m_bytes(header: bytes, frames=()):
    return header + b"\n" + b"".join(b"FRAME\n" + f for f in frames)


def test_full_luma_444_frame_is_white():
    data = y4m_bytes(b"YUV4MPEG2 W2 H2 F25:1 C444", [bytes([235] * 4 + [128] * 8)])
    info, frames = frameio.open_y4m(data)
    frames = list(frames)
    assert (info.width, info.height, info.fps_num, info.fps_den) == (2, 2, 25, 1)
    assert len(frames) == 1
    assert frames[0].pixels.shape == (2, 2, 3)
    assert np.all(np.abs(frames[0].pixels.astype(int) - 255) <= 1)


def test_header_only_stream_is_empty():
    info, frames = frameio.open_y4m(b"YUV4MPEG2 W4 H4 F30:1\n")
    assert (info.width, info.height) == (4, 4)
    assert list(frames) == []


def test_missing_width_is_parse_error():
    with pytest.raises(ParseError) as exc:
        frameio.open_y4m(b"YUV4MPEG2 H4 F30:1\n")
    assert exc.value.offset is not None


def test_bad_magic_reports_offset_zero():
    with pytest.raises(ParseError) as exc:
        frameio.open_y4m(b"YUV4MPEG W4 H4 F30:1\n")
    assert exc.value.offset == 0


def test_unsupported_colorspace():
    with pytest.raises(UnsupportedFormatError):
        frameio.open_y4m(b"YUV4MPEG2 W4 H4 F30:1 C422\n")


def test_truncated_payload_reports_last_complete_frame():
    full = bytes(4 * 4 * 3)
    data = y4m_bytes(b"YUV4MPEG2 W4 H4 F30:1 C444", [full, full, full[:10]])
    _, frames = frameio.open_y4m(data)
    got = []
    with pytest.raises(TruncatedStreamError) as exc:
        for f in frames:
            got.append(f)
    assert len(got) == 2
    assert exc.value.last_complete_index == 1


def test_420_chroma_is_upsampled_nearest():
    # 4x2 luma, 2x1 chroma planes; left/right halves get different chroma
    y = bytes([128] * 8)
    u = bytes([90, 200])
    v = bytes([128, 128])
    _, frames = frameio.open_y4m(y4m_bytes(b"YUV4MPEG2 W4 H2 F30:1 C420jpeg", [y + u + v]))
    px = next(frames).pixels
    assert np.array_equal(px[:, 0], px[:, 1])
    assert np.array_equal(px[:, 2], px[:, 3])
    assert not np.array_equal(px[:, 0], px[:, 2])
    assert np.array_equal(px[0], px[1])


def test_timestamps_follow_frame_rate():
    f = bytes(2 * 2 * 3)
    _, frames = frameio.open_y4m(y4m_bytes(b"YUV4MPEG2 W2 H2 F30000:1001 C444", [f] * 3))
    frames = list(frames)
    assert [x.index for x in frames] == [0, 1, 2]
    assert frames[2].timestamp_sec == pytest.approx(2 * 1001 / 30000, abs=1e-12)


def in_gamut_yuv(rng, n):
    """Random Y'CbCr samples whose unclamped RGB lies in [0, 255]."""
    out = []
    while sum(len(o) for o in out) < n:
        yuv = rng.integers(16, 241, size=(4 * n, 3))
        c, d, e = yuv[:, 0] - 16.0, yuv[:, 1] - 128.0, yuv[:, 2] - 128.0
        rgb = np.stack([1.164383561643836 * c + 1.596026785714286 * e,
                        1.164383561643836 * c - 0.391762290094914 * d - 0.812967647237771 * e,
                        1.164383561643836 * c + 2.017232142857143 * d], axis=1)
        ok = np.all((rgb >= 0) & (rgb <= 255), axis=1)
        out.append(yuv[ok])
    return np.concatenate(out)[:n].astype(np.uint8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), h=st.integers(1, 9), w=st.integers(1, 9),
       n=st.integers(1, 3))
def test_y4m_read_write_roundtrip_is_bit_exact(seed, h, w, n):
    rng = np.random.default_rng(seed)
    samples = in_gamut_yuv(rng, h * w * n).reshape(n, h, w, 3)
    payloads = [np.concatenate([s[..., k].ravel() for k in range(3)]).tobytes() for s in samples]
    header = b"YUV4MPEG2 W%d H%d F30:1 Ip A1:1 C444" % (w, h)
    original = y4m_bytes(header, payloads)
    _, frames = frameio.open_y4m(original)
    buf = io.BytesIO()
    frameio.write_y4m(buf, frames, (30, 1))
    assert buf.getvalue() == original


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_decoding_is_pure(seed):
    rng = np.random.default_rng(seed)
    payload = rng.integers(0, 256, size=6 * 5 * 3, dtype=np.uint8).tobytes()
    data = y4m_bytes(b"YUV4MPEG2 W6 H5 F30:1 C444", [payload])
    a = list(frameio.open_y4m(data)[1])
    b = list(frameio.open_y4m(data)[1])
    assert a == b


def write_dir(tmp_path, shapes, rng):
    arrays = []
    for i, (h, w) in enumerate(shapes):
        px = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        frameio.write_ppm(tmp_path / f"{i:03d}.ppm", px)
        arrays.append(px)
    return arrays


def test_frame_dir_happy_path(tmp_path, rng):
    arrays = write_dir(tmp_path, [(8, 8), (8, 8)], rng)
    info, frames = frameio.open_frame_dir(tmp_path)
    frames = list(frames)
    assert [f.index for f in frames] == [0, 1]
    assert (info.fps_num, info.fps_den) == (30, 1)
    for f, a in zip(frames, arrays):
        assert np.array_equal(f.pixels, a)


def test_ppm_rgb_is_reordered_to_bgr(tmp_path):
    (tmp_path / "a.ppm").write_bytes(b"P6\n1 1\n255\n" + bytes([10, 20, 30]))
    px = frameio.read_ppm(tmp_path / "a.ppm")
    assert px[0, 0].tolist() == [30, 20, 10]


def test_frame_dir_dimension_mismatch_names_file(tmp_path, rng):
    write_dir(tmp_path, [(8, 8), (16, 16)], rng)
    _, frames = frameio.open_frame_dir(tmp_path)
    with pytest.raises(DimensionMismatchError, match="001.ppm"):
        list(frames)


def test_ppm_maxval_65535_is_unsupported(tmp_path):
    (tmp_path / "000.ppm").write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(UnsupportedFormatError):
        list(frameio.open_frame_dir(tmp_path)[1])


def test_non_p6_magic_is_parse_error(tmp_path):
    (tmp_path / "000.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ParseError):
        list(frameio.open_frame_dir(tmp_path)[1])


def test_frame_dir_uses_lexicographic_order(tmp_path, rng):
    arrays = write_dir(tmp_path, [(4, 4), (4, 4)], rng)
    (tmp_path / "000.ppm").rename(tmp_path / "b.ppm")
    (tmp_path / "001.ppm").rename(tmp_path / "a.ppm")
    frames = list(frameio.open_frame_dir(tmp_path, (25, 1))[1])
    assert np.array_equal(frames[0].pixels, arrays[1])
    assert frames[1].timestamp_sec == pytest.approx(0.04)


def test_downscale_noop_when_small(rng):
    f = Frame(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8))
    assert frameio.downscale(f, 128) is f


def test_downscale_preserves_aspect(rng):
    f = Frame(rng.integers(0, 256, (64, 128, 3), dtype=np.uint8), index=3)
    g = frameio.downscale(f, 64)
    assert (g.width, g.height) == (64, 32)
    assert g.index == 3


def test_downscale_box_filter_of_constant_is_constant():
    f = Frame(np.full((40, 100, 3), 77, np.uint8))
    assert np.all(frameio.downscale(f, 20).pixels == 77)


def test_downscale_rejects_small_max_dim():
    with pytest.raises(ValueError):
        frameio.downscale(Frame(np.zeros((4, 4, 3), np.uint8)), 8)


def test_frame_invariants():
    with pytest.raises(ValueError):
        Frame(np.zeros((2, 2), np.uint8))
    with pytest.raises(ValueError):
        Frame(np.zeros((2, 2, 3), np.uint8), index=-1)
    f = Frame(np.zeros((2, 3, 3), np.uint8))
    assert len(f.data) == 2 * 3 * 3
    assert not f.pixels.flags.writeable


@pytest.mark.parametrize("text,expected", [("30", (30, 1)), ("30000:1001", (30000, 1001)),
                                           ("25/1", (25, 1)), ("29.97", (2997, 100))])
def test_parse_fps(text, expected):
    assert frameio.parse_fps(text) == expected


@pytest.mark.parametrize("text", ["0", "-1:1", "a", "30:0"])
def test_parse_fps_rejects(text):
    with pytest.raises(ValueError):
        frameio.parse_fps(text)
