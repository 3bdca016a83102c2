"""Pure-numpy implementations of the hot kernels.

This is the fallback backend (``MHENET_BACKEND=numpy``) and the reference the
numba backend is cross-checked against.  Convolutions are computed by the
shift-and-accumulate method (one matmul per kernel tap), which stays exact
cross-correlation while avoiding im2col copies.
"""

import numpy as np

# Sentinel for "no foreground site in this column" during the distance
# transform column pass.  Must dominate any real squared distance while
# keeping the packed (cost, row, col) key inside int64.
_EDT_INF = np.int64(1) << 32


def _pad_zero(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _tap(xp, ki, kj, stride, ho, wo):
    return xp[:, :, ki:ki + stride * (ho - 1) + 1:stride,
              kj:kj + stride * (wo - 1) + 1:stride]


def conv2d_forward(x, w, stride, padding, groups):
    """Cross-correlation of (N,Cin,H,W) with (Cout,Cin/groups,kh,kw)."""
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    xp = _pad_zero(x, padding)
    y = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    if groups == 1:
        for ki in range(kh):
            for kj in range(kw):
                xs = _tap(xp, ki, kj, stride, ho, wo)
                # (cout,cin) x (n,cin,ho,wo) -> (cout,n,ho,wo)
                y += np.tensordot(w[:, :, ki, kj], xs,
                                  axes=([1], [1])).transpose(1, 0, 2, 3)
    elif groups == cin and cpg == 1:
        for ki in range(kh):
            for kj in range(kw):
                xs = _tap(xp, ki, kj, stride, ho, wo)
                y += w[:, 0, ki, kj][None, :, None, None] * xs
    else:
        cog = cout // groups
        for g in range(groups):
            xg = xp[:, g * cpg:(g + 1) * cpg]
            wg = w[g * cog:(g + 1) * cog]
            for ki in range(kh):
                for kj in range(kw):
                    xs = _tap(xg, ki, kj, stride, ho, wo)
                    y[:, g * cog:(g + 1) * cog] += np.tensordot(
                        wg[:, :, ki, kj], xs,
                        axes=([1], [1])).transpose(1, 0, 2, 3)
    return y


def conv2d_backward_input(gy, w, x_shape, stride, padding, groups):
    n, cin, h, wd = x_shape
    cout, cpg, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding), dtype=gy.dtype)
    if groups == 1:
        for ki in range(kh):
            for kj in range(kw):
                # (n,cout,ho,wo) x (cout,cin) -> (n,ho,wo,cin)
                g = np.tensordot(gy, w[:, :, ki, kj], axes=([1], [0]))
                _tap(gxp, ki, kj, stride, ho, wo)[...] += g.transpose(0, 3, 1, 2)
    elif groups == cin and cpg == 1:
        for ki in range(kh):
            for kj in range(kw):
                _tap(gxp, ki, kj, stride, ho, wo)[...] += (
                    w[:, 0, ki, kj][None, :, None, None] * gy)
    else:
        cog = cout // groups
        for g in range(groups):
            wg = w[g * cog:(g + 1) * cog]
            gg = gy[:, g * cog:(g + 1) * cog]
            for ki in range(kh):
                for kj in range(kw):
                    gv = np.tensordot(gg, wg[:, :, ki, kj], axes=([1], [0]))
                    _tap(gxp[:, g * cpg:(g + 1) * cpg], ki, kj, stride,
                         ho, wo)[...] += gv.transpose(0, 3, 1, 2)
    if padding == 0:
        return gxp
    return gxp[:, :, padding:padding + h, padding:padding + wd]


def conv2d_backward_kernel(gy, x, w_shape, stride, padding, groups):
    cout, cpg, kh, kw = w_shape
    cin = x.shape[1]
    ho, wo = gy.shape[2], gy.shape[3]
    xp = _pad_zero(x, padding)
    gw = np.zeros(w_shape, dtype=gy.dtype)
    if groups == 1:
        for ki in range(kh):
            for kj in range(kw):
                xs = _tap(xp, ki, kj, stride, ho, wo)
                gw[:, :, ki, kj] = np.tensordot(gy, xs,
                                                axes=([0, 2, 3], [0, 2, 3]))
    elif groups == cin and cpg == 1:
        for ki in range(kh):
            for kj in range(kw):
                xs = _tap(xp, ki, kj, stride, ho, wo)
                gw[:, 0, ki, kj] = np.sum(gy * xs, axis=(0, 2, 3))
    else:
        cog = cout // groups
        for g in range(groups):
            xg = xp[:, g * cpg:(g + 1) * cpg]
            gg = gy[:, g * cog:(g + 1) * cog]
            for ki in range(kh):
                for kj in range(kw):
                    xs = _tap(xg, ki, kj, stride, ho, wo)
                    gw[g * cog:(g + 1) * cog, :, ki, kj] = np.tensordot(
                        gg, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gw


def _pool_counts(h, wd, k, stride, padding, dtype):
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    ones = np.ones((1, 1, h, wd), dtype=dtype)
    op = _pad_zero(ones, padding)
    counts = np.zeros((1, 1, ho, wo), dtype=dtype)
    for ki in range(k):
        for kj in range(k):
            counts += _tap(op, ki, kj, stride, ho, wo)
    return counts


def avg_pool_forward(x, k, stride, padding):
    """Windowed mean; padded positions do not count toward the denominator."""
    n, c, h, wd = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    xp = _pad_zero(x, padding)
    acc = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            acc += _tap(xp, ki, kj, stride, ho, wo)
    return acc / _pool_counts(h, wd, k, stride, padding, x.dtype)


def avg_pool_backward(gy, x_shape, k, stride, padding):
    n, c, h, wd = x_shape
    ho, wo = gy.shape[2], gy.shape[3]
    gs = gy / _pool_counts(h, wd, k, stride, padding, gy.dtype)
    gxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=gy.dtype)
    for ki in range(k):
        for kj in range(k):
            _tap(gxp, ki, kj, stride, ho, wo)[...] += gs
    if padding == 0:
        return gxp
    return gxp[:, :, padding:padding + h, padding:padding + wd]


def resize_coeffs(in_size, out_size, dtype=np.float64):
    """align_corners=False sample positions.

    The floor index is clamped to [0, in_size-2] and the fractional weight is
    left unclamped, so border samples linearly extrapolate from the outermost
    pixel pair.  This keeps affine ramps exact under up-then-down round trips.
    """
    if in_size == 1:
        z = np.zeros(out_size, dtype=np.int64)
        return z, z, np.zeros(out_size, dtype=dtype)
    coord = (np.arange(out_size, dtype=dtype) + 0.5) * (in_size / out_size) - 0.5
    i0 = np.clip(np.floor(coord).astype(np.int64), 0, in_size - 2)
    return i0, i0 + 1, coord - i0


def bilinear_forward(x, out_h, out_w):
    n, c, h, wd = x.shape
    r0, r1, wr = resize_coeffs(h, out_h, x.dtype)
    c0, c1, wc = resize_coeffs(wd, out_w, x.dtype)
    wr = wr[None, None, :, None]
    t = x[:, :, r0, :] * (1.0 - wr) + x[:, :, r1, :] * wr
    wc = wc[None, None, None, :]
    return t[:, :, :, c0] * (1.0 - wc) + t[:, :, :, c1] * wc


def bilinear_backward(gy, in_h, in_w):
    n, c, oh, ow = gy.shape
    r0, r1, wr = resize_coeffs(in_h, oh, gy.dtype)
    c0, c1, wc = resize_coeffs(in_w, ow, gy.dtype)
    wcb = wc[None, None, None, :]
    t = np.zeros((n, c, oh, in_w), dtype=gy.dtype)
    np.add.at(t, (slice(None), slice(None), slice(None), c0), gy * (1.0 - wcb))
    np.add.at(t, (slice(None), slice(None), slice(None), c1), gy * wcb)
    wrb = wr[None, None, :, None]
    gx = np.zeros((n, c, in_h, in_w), dtype=gy.dtype)
    np.add.at(gx, (slice(None), slice(None), r0), t * (1.0 - wrb))
    np.add.at(gx, (slice(None), slice(None), r1), t * wrb)
    return gx


def edt_copy_nearest(fg, values):
    """Exact Euclidean distance transform with nearest-site value copying.

    For every pixel, finds the squared distance to the nearest True pixel of
    ``fg`` and the value of ``values`` at that site; when several sites tie on
    distance, the smallest value among them is taken (value-based, so the
    result is invariant under transposition or flips of both inputs).  Two
    passes over squared distances: a per-column nearest-row sweep, then a
    per-row minimization across columns.  Distances are integers, so they are
    exact and backend independent.

    Requires at least one foreground pixel.
    """
    h, wd = fg.shape
    if not fg.any():
        raise ValueError("distance transform needs at least one foreground pixel")
    rows = np.arange(h, dtype=np.int64)

    # Column pass: per (row, column), the distance to the nearest fg row in
    # that column and the smallest value among equidistant candidates.
    up = np.full(wd, -_EDT_INF, dtype=np.int64)      # last fg row at/above
    nr_up = np.empty((h, wd), dtype=np.int64)
    for r in range(h):
        up[fg[r]] = r
        nr_up[r] = up
    down = np.full(wd, _EDT_INF, dtype=np.int64)     # first fg row at/below
    nr_down = np.empty((h, wd), dtype=np.int64)
    for r in range(h - 1, -1, -1):
        down[fg[r]] = r
        nr_down[r] = down
    du = rows[:, None] - nr_up
    dd = nr_down - rows[:, None]
    has_up = nr_up > -_EDT_INF // 2
    has_down = nr_down < _EDT_INF // 2
    val_up = np.where(has_up, values[np.clip(nr_up, 0, h - 1), np.arange(wd)], np.inf)
    val_down = np.where(has_down, values[np.clip(nr_down, 0, h - 1), np.arange(wd)], np.inf)
    du = np.where(has_up, du, _EDT_INF)
    dd = np.where(has_down, dd, _EDT_INF)
    take_up = (du < dd) | ((du == dd) & (val_up <= val_down))
    dcol = np.where(take_up, du, dd)
    no_site = dcol >= _EDT_INF // 2
    d1 = np.where(no_site, _EDT_INF, np.where(no_site, 0, dcol) ** 2)
    v1 = np.where(take_up, val_up, val_down)

    # Row pass: minimize (c-c')^2 + d1[r,c'] over source columns c'; among
    # minimal-cost columns take the smallest carried value.
    cols = np.arange(wd, dtype=np.int64)
    off2 = (cols[None, :] - cols[:, None]) ** 2      # [c', c]
    dist2 = np.empty((h, wd), dtype=np.int64)
    copied = np.empty((h, wd), dtype=np.float64)
    for r in range(h):
        cost = off2 + d1[r][:, None]
        best = cost.min(axis=0)
        candidates = np.where(cost == best, v1[r][:, None], np.inf)
        dist2[r] = best
        copied[r] = candidates.min(axis=0)
    return dist2, copied
