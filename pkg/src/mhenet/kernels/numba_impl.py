"""Numba-jitted hot kernels.

Same contracts as :mod:`mhenet.kernels.numpy_impl`.  Every output element is
written by exactly one thread, so results are bit-stable for a fixed input
regardless of the thread count.  ``fastmath`` stays off to keep accumulation
order fixed.
"""

import numpy as np
from numba import njit, prange

_EDT_INF = np.int64(1) << 32

_JIT = dict(parallel=True, fastmath=False, cache=True)


def _pad_zero(x, p):
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


@njit(**_JIT)
def _conv_fwd(xp, w, stride, ho, wo, groups):
    n, cin, hp, wp = xp.shape
    cout, cpg, kh, kw = w.shape
    cog = cout // groups
    y = np.zeros((n, cout, ho, wo), dtype=xp.dtype)
    for nco in prange(n * cout):
        b = nco // cout
        co = nco % cout
        g = co // cog
        c0 = g * cpg
        for oh in range(ho):
            ih = oh * stride
            for ow in range(wo):
                iw = ow * stride
                acc = 0.0
                for ci in range(cpg):
                    for ki in range(kh):
                        for kj in range(kw):
                            acc += w[co, ci, ki, kj] * xp[b, c0 + ci, ih + ki, iw + kj]
                y[b, co, oh, ow] = acc
    return y


@njit(**_JIT)
def _conv_bwd_x(gy, w, n, cin, hp, wp, stride, groups):
    cout, cpg, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    cog = cout // groups
    gxp = np.zeros((n, cin, hp, wp), dtype=gy.dtype)
    for nci in prange(n * cin):
        b = nci // cin
        ci = nci % cin
        g = ci // cpg
        cl = ci % cpg
        for oh in range(ho):
            ih = oh * stride
            for ow in range(wo):
                iw = ow * stride
                for co in range(g * cog, (g + 1) * cog):
                    gv = gy[b, co, oh, ow]
                    for ki in range(kh):
                        for kj in range(kw):
                            gxp[b, ci, ih + ki, iw + kj] += gv * w[co, cl, ki, kj]
    return gxp


@njit(**_JIT)
def _conv_bwd_w(gy, xp, cpg, kh, kw, stride, groups):
    n, cout, ho, wo = gy.shape
    cog = cout // groups
    gw = np.zeros((cout, cpg, kh, kw), dtype=gy.dtype)
    for co in prange(cout):
        g = co // cog
        c0 = g * cpg
        for ci in range(cpg):
            for ki in range(kh):
                for kj in range(kw):
                    acc = 0.0
                    for b in range(n):
                        for oh in range(ho):
                            ih = oh * stride + ki
                            for ow in range(wo):
                                acc += gy[b, co, oh, ow] * xp[b, c0 + ci, ih, ow * stride + kj]
                    gw[co, ci, ki, kj] = acc
    return gw


def conv2d_forward(x, w, stride, padding, groups):
    xp = _pad_zero(x, padding)
    kh = w.shape[2]
    ho = (x.shape[2] + 2 * padding - kh) // stride + 1
    wo = (x.shape[3] + 2 * padding - w.shape[3]) // stride + 1
    return _conv_fwd(xp, np.ascontiguousarray(w), stride, ho, wo, groups)


def conv2d_backward_input(gy, w, x_shape, stride, padding, groups):
    n, cin, h, wd = x_shape
    gxp = _conv_bwd_x(np.ascontiguousarray(gy), np.ascontiguousarray(w),
                      n, cin, h + 2 * padding, wd + 2 * padding, stride, groups)
    if padding == 0:
        return gxp
    return gxp[:, :, padding:padding + h, padding:padding + wd]


def conv2d_backward_kernel(gy, x, w_shape, stride, padding, groups):
    xp = _pad_zero(x, padding)
    cout, cpg, kh, kw = w_shape
    return _conv_bwd_w(np.ascontiguousarray(gy), xp, cpg, kh, kw, stride, groups)


@njit(**_JIT)
def _avg_pool_fwd(x, k, stride, padding, ho, wo):
    n, c, h, wd = x.shape
    y = np.empty((n, c, ho, wo), dtype=x.dtype)
    for nc in prange(n * c):
        b = nc // c
        ci = nc % c
        for oh in range(ho):
            h0 = max(oh * stride - padding, 0)
            h1 = min(oh * stride - padding + k, h)
            for ow in range(wo):
                w0 = max(ow * stride - padding, 0)
                w1 = min(ow * stride - padding + k, wd)
                acc = 0.0
                for ih in range(h0, h1):
                    for iw in range(w0, w1):
                        acc += x[b, ci, ih, iw]
                y[b, ci, oh, ow] = acc / ((h1 - h0) * (w1 - w0))
    return y


@njit(**_JIT)
def _avg_pool_bwd(gy, h, wd, k, stride, padding):
    n, c, ho, wo = gy.shape
    gx = np.zeros((n, c, h, wd), dtype=gy.dtype)
    for nc in prange(n * c):
        b = nc // c
        ci = nc % c
        for oh in range(ho):
            h0 = max(oh * stride - padding, 0)
            h1 = min(oh * stride - padding + k, h)
            for ow in range(wo):
                w0 = max(ow * stride - padding, 0)
                w1 = min(ow * stride - padding + k, wd)
                gv = gy[b, ci, oh, ow] / ((h1 - h0) * (w1 - w0))
                for ih in range(h0, h1):
                    for iw in range(w0, w1):
                        gx[b, ci, ih, iw] += gv
    return gx


def avg_pool_forward(x, k, stride, padding):
    ho = (x.shape[2] + 2 * padding - k) // stride + 1
    wo = (x.shape[3] + 2 * padding - k) // stride + 1
    return _avg_pool_fwd(np.ascontiguousarray(x), k, stride, padding, ho, wo)


def avg_pool_backward(gy, x_shape, k, stride, padding):
    return _avg_pool_bwd(np.ascontiguousarray(gy), x_shape[2], x_shape[3],
                         k, stride, padding)


def resize_coeffs(in_size, out_size, dtype=np.float64):
    if in_size == 1:
        z = np.zeros(out_size, dtype=np.int64)
        return z, z, np.zeros(out_size, dtype=dtype)
    coord = (np.arange(out_size, dtype=dtype) + 0.5) * (in_size / out_size) - 0.5
    i0 = np.clip(np.floor(coord).astype(np.int64), 0, in_size - 2)
    return i0, i0 + 1, coord - i0


@njit(**_JIT)
def _bilinear_fwd(x, r0, r1, wr, c0, c1, wc):
    n, c, h, wd = x.shape
    oh, ow = r0.shape[0], c0.shape[0]
    y = np.empty((n, c, oh, ow), dtype=x.dtype)
    for nc in prange(n * c):
        b = nc // c
        ci = nc % c
        for orow in range(oh):
            a0, a1, fr = r0[orow], r1[orow], wr[orow]
            for ocol in range(ow):
                b0, b1, fc = c0[ocol], c1[ocol], wc[ocol]
                top = x[b, ci, a0, b0] * (1.0 - fc) + x[b, ci, a0, b1] * fc
                bot = x[b, ci, a1, b0] * (1.0 - fc) + x[b, ci, a1, b1] * fc
                y[b, ci, orow, ocol] = top * (1.0 - fr) + bot * fr
    return y


@njit(**_JIT)
def _bilinear_bwd(gy, in_h, in_w, r0, r1, wr, c0, c1, wc):
    n, c, oh, ow = gy.shape
    gx = np.zeros((n, c, in_h, in_w), dtype=gy.dtype)
    for nc in prange(n * c):
        b = nc // c
        ci = nc % c
        for orow in range(oh):
            a0, a1, fr = r0[orow], r1[orow], wr[orow]
            for ocol in range(ow):
                b0, b1, fc = c0[ocol], c1[ocol], wc[ocol]
                g = gy[b, ci, orow, ocol]
                gx[b, ci, a0, b0] += g * (1.0 - fr) * (1.0 - fc)
                gx[b, ci, a0, b1] += g * (1.0 - fr) * fc
                gx[b, ci, a1, b0] += g * fr * (1.0 - fc)
                gx[b, ci, a1, b1] += g * fr * fc
    return gx


def bilinear_forward(x, out_h, out_w):
    r0, r1, wr = resize_coeffs(x.shape[2], out_h, x.dtype)
    c0, c1, wc = resize_coeffs(x.shape[3], out_w, x.dtype)
    return _bilinear_fwd(np.ascontiguousarray(x), r0, r1, wr, c0, c1, wc)


def bilinear_backward(gy, in_h, in_w):
    r0, r1, wr = resize_coeffs(in_h, gy.shape[2], gy.dtype)
    c0, c1, wc = resize_coeffs(in_w, gy.shape[3], gy.dtype)
    return _bilinear_bwd(np.ascontiguousarray(gy), in_h, in_w, r0, r1, wr, c0, c1, wc)


@njit(**_JIT)
def _edt_copy(fg, values):
    h, wd = fg.shape
    inf = _EDT_INF
    d1 = np.empty((h, wd), dtype=np.int64)
    v1 = np.empty((h, wd), dtype=np.float64)
    up_rows = np.empty((h, wd), dtype=np.int64)
    for c in range(wd):
        up = -inf
        for r in range(h):
            if fg[r, c]:
                up = r
            up_rows[r, c] = up
        down = inf
        for r in range(h - 1, -1, -1):
            if fg[r, c]:
                down = r
            up_row = up_rows[r, c]
            du = r - up_row if up_row > -inf // 2 else inf
            dd = down - r if down < inf // 2 else inf
            vu = values[up_row, c] if du < inf // 2 else np.inf
            vd = values[down, c] if dd < inf // 2 else np.inf
            if du < dd or (du == dd and vu <= vd):
                dist, val = du, vu
            else:
                dist, val = dd, vd
            if dist >= inf // 2:
                d1[r, c] = inf
                v1[r, c] = np.inf
            else:
                d1[r, c] = dist * dist
                v1[r, c] = val
    dist2 = np.empty((h, wd), dtype=np.int64)
    copied = np.empty((h, wd), dtype=np.float64)
    for r in prange(h):
        for c in range(wd):
            best_cost = np.int64(0x7FFFFFFFFFFFFFFF)
            best_val = np.inf
            for cs in range(wd):
                cost = (c - cs) * (c - cs) + d1[r, cs]
                if cost < best_cost:
                    best_cost = cost
                    best_val = v1[r, cs]
                elif cost == best_cost and v1[r, cs] < best_val:
                    best_val = v1[r, cs]
            dist2[r, c] = best_cost
            copied[r, c] = best_val
    return dist2, copied


def edt_copy_nearest(fg, values):
    if not fg.any():
        raise ValueError("distance transform needs at least one foreground pixel")
    return _edt_copy(np.ascontiguousarray(fg),
                     np.ascontiguousarray(values, dtype=np.float64))
