"""Compiled per-pixel loops for the feature path.

All arithmetic is integer so results are bit-reproducible and comparable
against plain-Python reference code without tolerances.
"""

import numpy as np
from numba import njit

# tan(22.5 deg) in Q15
TG22 = 13573
SHIFT = 15


@njit(cache=True, nogil=True)
def gray_and_hist(bgr):
    h, w, _ = bgr.shape
    gray = np.empty((h, w), dtype=np.uint8)
    counts = np.zeros((3, 256), dtype=np.int64)
    for y in range(h):
        for x in range(w):
            b = np.int64(bgr[y, x, 0])
            g = np.int64(bgr[y, x, 1])
            r = np.int64(bgr[y, x, 2])
            counts[0, b] += 1
            counts[1, g] += 1
            counts[2, r] += 1
            gray[y, x] = (114 * b + 587 * g + 299 * r + 500) // 1000
    return gray, counts


@njit(cache=True, nogil=True, inline="always")
def _reflect101(i, n):
    if i < 0:
        return -i
    if i >= n:
        return 2 * n - 2 - i
    return i


@njit(cache=True, nogil=True, inline="always")
def _hpass(row, taps, hrow):
    w = row.shape[0]
    t0, t1, t2, t3, t4 = taps[0], taps[1], taps[2], taps[3], taps[4]
    # shifted views instead of x-2 style indices: negative-offset indexing
    # carries a wraparound check that blocks vectorisation
    r0 = row[0:w - 4]
    r1 = row[1:w - 3]
    r2 = row[2:w - 2]
    r3 = row[3:w - 1]
    r4 = row[4:w]
    o = hrow[2:w - 2]
    for x in range(w - 4):
        o[x] = (t0 * np.int32(r0[x]) + t1 * np.int32(r1[x]) + t2 * np.int32(r2[x])
                + t3 * np.int32(r3[x]) + t4 * np.int32(r4[x]))
    for x in (0, 1, w - 2, w - 1):
        acc = np.int32(0)
        for i in range(5):
            acc += taps[i] * np.int32(row[_reflect101(x + i - 2, w)])
        hrow[x] = acc


@njit(cache=True, nogil=True)
def gaussian_blur(gray, taps, shift, out, hbuf, tags):
    """Separable 5-tap integer blur with reflect-101 borders, rounded to uint8.

    ``sum(taps)**2`` must equal ``2**shift``; the output is
    ``(sum_ij taps[i]*taps[j]*px + 2**(shift-1)) >> shift``. ``hbuf``
    (5 x w int32) caches horizontally filtered rows and ``tags`` (5 int64)
    records which source row each slot holds. Requires h >= 3 and w >= 3.
    """
    h, w = gray.shape
    rnd = np.int32(1 << (shift - 1))
    tags[:] = -1
    t0, t1, t2, t3, t4 = taps[0], taps[1], taps[2], taps[3], taps[4]
    for y in range(h):
        for j in range(5):
            src = _reflect101(y + j - 2, h)
            slot = src % 5
            if tags[slot] != src:
                _hpass(gray[src], taps, hbuf[slot])
                tags[slot] = src
        s0 = hbuf[_reflect101(y - 2, h) % 5]
        s1 = hbuf[_reflect101(y - 1, h) % 5]
        s2 = hbuf[y % 5]
        s3 = hbuf[_reflect101(y + 1, h) % 5]
        s4 = hbuf[_reflect101(y + 2, h) % 5]
        orow = out[y]
        for x in range(w):
            acc = t0 * s0[x] + t1 * s1[x] + t2 * s2[x] + t3 * s3[x] + t4 * s4[x]
            orow[x] = np.uint8((acc + rnd) >> shift)


@njit(cache=True, nogil=True, inline="always")
def _mag_row(r0, r1, r2, out, dirs):
    """Squared Sobel magnitude and direction bin for interior columns of the
    middle row.

    Bins: 0 horizontal gradient, 1 vertical, 2 diagonal with dx*dy < 0,
    3 diagonal with dx*dy > 0. Quantisation uses tan(22.5) in Q15.
    """
    w = r1.shape[0]
    a0, a1, a2 = r0[0:w - 2], r1[0:w - 2], r2[0:w - 2]
    b0, b2 = r0[1:w - 1], r2[1:w - 1]
    c0, c1, c2 = r0[2:w], r1[2:w], r2[2:w]
    o = out[1:w - 1]
    d = dirs[1:w - 1]
    for x in range(w - 2):
        dx = (np.int32(c0[x]) + 2 * np.int32(c1[x]) + np.int32(c2[x])
              - np.int32(a0[x]) - 2 * np.int32(a1[x]) - np.int32(a2[x]))
        dy = (np.int32(a2[x]) + 2 * np.int32(b2[x]) + np.int32(c2[x])
              - np.int32(a0[x]) - 2 * np.int32(b0[x]) - np.int32(c0[x]))
        o[x] = dx * dx + dy * dy
        ax = abs(dx)
        yy = abs(dy) << SHIFT
        t = ax * TG22
        horiz = yy < t
        vert = yy > t + (ax << (SHIFT + 1))
        diag = np.uint8(2) + np.uint8((dx ^ dy) >= 0)
        d[x] = np.uint8(0) if horiz else (np.uint8(1) if vert else diag)


@njit(cache=True, nogil=True)
def _classify_row(up, mid, dn, drow, low2, high2, above, crow):
    """Suppress one row and label it in ``crow``: 0 dropped, 1 weak, 2 edge.

    ``up``/``mid``/``dn`` are magnitudes of the rows above, at and below;
    ``drow`` holds direction bins; ``above`` is the label row above. Edge
    means strong, or weak touching an edge in ``above``. Neighbour choice is
    done with selects over shifted views so the loop vectorises: on textured
    input most pixels clear the low threshold and the direction is
    unpredictable.
    """
    w = mid.shape[0]
    ul, uc, ur = up[0:w - 2], up[1:w - 1], up[2:w]
    ml, mc, mr = mid[0:w - 2], mid[1:w - 1], mid[2:w]
    dl, dc, dr = dn[0:w - 2], dn[1:w - 1], dn[2:w]
    d = drow[1:w - 1]
    c = crow[1:w - 1]
    al, ac, ar = above[0:w - 2], above[1:w - 1], above[2:w]
    for x in range(w - 2):
        b = np.int32(d[x])
        m = mc[x]
        # load every neighbour, then select: conditional loads do not vectorise
        vul, vuc, vur = ul[x], uc[x], ur[x]
        vml, vmr = ml[x], mr[x]
        vdl, vdc, vdr = dl[x], dc[x], dr[x]
        # bins: 0 left/right, 1 up/down, 2 up-right/down-left, 3 up-left/down-right
        ma = vml if b == 0 else (vuc if b == 1 else (vur if b == 2 else vul))
        mb = vmr if b == 0 else (vdc if b == 1 else (vdl if b == 2 else vdr))
        beat_b = (m > mb) | ((b < 2) & (m == mb))
        keep = (m > low2) & (m > ma) & beat_b
        near = (al[x] | ac[x] | ar[x]) & np.uint8(2)
        edge = (m > high2) | (near != 0)
        c[x] = np.uint8(keep) * (np.uint8(1) + np.uint8(edge))
    crow[0] = 0
    crow[w - 1] = 0


@njit(cache=True, nogil=True)
def _flood(cls, stack, top, out, value):
    """Hysteresis: promote weak pixels 8-connected to an edge."""
    w = cls.shape[1]
    while top > 0:
        top -= 1
        p = stack[top]
        y = p // w
        x = p - y * w
        for ny in range(y - 1, y + 2):
            crow = cls[ny]
            for nx in range(x - 1, x + 2):
                if crow[nx] == 1:
                    crow[nx] = 2
                    out[ny, nx] = value
                    stack[top] = ny * w + nx
                    top += 1


@njit(cache=True, nogil=True)
def canny_into(src, rows, cls, stack, low2, high2, out, value):
    """NMS + hysteresis on a blurred uint8 raster.

    Writes ``value`` into ``out`` at every edge pixel. ``rows`` (3 x w int32),
    ``cls`` (h x w uint8) and ``stack`` (h*w int32) are caller-owned scratch
    buffers. ``low2``/``high2`` are squared magnitude thresholds. Border
    pixels have zero magnitude and are never edges.

    Streams over the rows with a rolling 3-row magnitude buffer. Each row is
    suppressed and labelled, weak pixels touching an edge in the row above
    are promoted, and the flood runs at once over the rows seen so far (the
    next row is cleared first so it reads as unlabelled). Anything the next
    row connects to is caught by its own promotion step, so the result equals
    a full-frame flood while touching only cache-hot rows in the common case.
    """
    h, w = src.shape
    if h < 3 or w < 3:
        return
    cls[0, :] = 0
    rows[:, :] = 0
    dirs = np.zeros((3, w), dtype=np.uint8)
    low2 = np.int32(low2)
    high2 = np.int32(high2)
    for y in range(1, h):
        # fill magnitude row y (zero on the bottom border), then label row y-1
        cur = rows[y % 3]
        if y < h - 1:
            _mag_row(src[y - 1], src[y], src[y + 1], cur, dirs[y % 3])
        else:
            cur[:] = 0
        ty = y - 1
        if ty < 1:
            continue
        crow = cls[ty]
        _classify_row(rows[(ty - 1) % 3], rows[ty % 3], cur, dirs[ty % 3], low2, high2,
                      cls[ty - 1], crow)
        cls[ty + 1, :] = 0
        orow = out[ty]
        top = 0
        base = ty * w
        # two branch-free passes (labels are unpredictable on textured input);
        # the first vectorises once the stack store is out of it
        for x in range(1, w - 1):
            orow[x] = value if crow[x] == 2 else orow[x]
        for x in range(1, w - 1):
            stack[top] = base + x
            top += np.int64(crow[x] == 2)
        if top:
            _flood(cls, stack, top, out, value)


@njit(cache=True, nogil=True)
def block_moments(img, bs):
    """Per-block sum and sum of squares over a ``bs`` x ``bs`` tiling.

    Column partials are int32 (bs * 255**2 fits for bs <= 33) so the two
    accumulator rows stay in L1 at 4K widths.
    """
    h, w = img.shape
    by = (h + bs - 1) // bs
    bx = (w + bs - 1) // bs
    s = np.zeros((by, bx), dtype=np.int64)
    q = np.zeros((by, bx), dtype=np.int64)
    col_s = np.zeros(w, dtype=np.int32)
    col_q = np.zeros(w, dtype=np.int32)
    for r in range(by):
        col_s[:] = 0
        col_q[:] = 0
        for y in range(r * bs, min(h, (r + 1) * bs)):
            row = img[y]
            for x in range(w):
                v = np.int32(row[x])
                col_s[x] += v
                col_q[x] += v * v
        for c in range(bx):
            a = np.int64(0)
            b = np.int64(0)
            for x in range(c * bs, min(w, (c + 1) * bs)):
                a += col_s[x]
                b += col_q[x]
            s[r, c] = a
            q[r, c] = b
    return s, q


@njit(cache=True, nogil=True)
def block_cross(a, b, bs):
    h, w = a.shape
    by = (h + bs - 1) // bs
    bx = (w + bs - 1) // bs
    s = np.zeros((by, bx), dtype=np.int64)
    col = np.zeros(w, dtype=np.int32)
    for r in range(by):
        col[:] = 0
        for y in range(r * bs, min(h, (r + 1) * bs)):
            ra = a[y]
            rb = b[y]
            for x in range(w):
                col[x] += np.int32(ra[x]) * np.int32(rb[x])
        for c in range(bx):
            acc = np.int64(0)
            for x in range(c * bs, min(w, (c + 1) * bs)):
                acc += col[x]
            s[r, c] = acc
    return s


@njit(cache=True, nogil=True)
def changed_fraction(g1, g2, thresh):
    h, w = g1.shape
    n = 0
    total = 0
    for y in range(h):
        for x in range(w):
            d = np.int64(g1[y, x]) - np.int64(g2[y, x])
            if d < 0:
                d = -d
            total += d
            if d > thresh:
                n += 1
    return n, total
