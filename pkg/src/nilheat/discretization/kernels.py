"""Compiled stencil kernel for first-order left-invariant operators.

Every operator applied to grid data in this package is a composition of

    L f = alpha * d_{x_a} f + sum_s c_s(q) * d_{tau_s} f,
    c_s(q) = c0_s + sum_b C_{s,b} x_b,

with central differences along each coordinate axis.  The horizontal
difference reads through the sheared lattice wrap; vertical differences are
plainly periodic.  The field is viewed as ``(rows, L)`` where ``L`` is the
last vertical axis, so a row is decoded once and the inner loop is
contiguous.
"""

import numba
import numpy as np

_CHUNK_ROWS = 64


@numba.njit(parallel=True, cache=True)
def apply_first_order(f, out, sizes, m, k, ax, alpha, weights, inv_h,
                      coef0, coefL, origin, spacing, shifts, accumulate):
    d = sizes.shape[0]
    r = weights.shape[0]
    L = sizes[d - 1]
    nrows = f.shape[0]
    nchunks = (nrows + _CHUNK_ROWS - 1) // _CHUNK_ROWS

    rowstride = np.ones(d - 1, dtype=np.int64)
    for i in range(d - 3, -1, -1):
        rowstride[i] = rowstride[i + 1] * sizes[i + 1]

    for chunk in numba.prange(nchunks):
        idx = np.zeros(d - 1, dtype=np.int64)
        tsh = np.zeros(k, dtype=np.int64)
        coef = np.zeros(k)
        rows_f = np.zeros(r, dtype=np.int64)
        rows_b = np.zeros(r, dtype=np.int64)
        cols_f = np.zeros(r, dtype=np.int64)
        cols_b = np.zeros(r, dtype=np.int64)
        vrows_p = np.zeros((k, r), dtype=np.int64)
        vrows_m = np.zeros((k, r), dtype=np.int64)
        row_end = min(nrows, (chunk + 1) * _CHUNK_ROWS)
        for row in range(chunk * _CHUNK_ROWS, row_end):
            rem = row
            for i in range(d - 1):
                idx[i] = rem // rowstride[i]
                rem -= idx[i] * rowstride[i]

            # vertical coefficients, affine in the horizontal coordinates
            for s in range(k):
                c = coef0[s]
                for b in range(m):
                    if coefL[s, b] != 0.0:
                        c += coefL[s, b] * (origin[b] + idx[b] * spacing[b])
                coef[s] = c

            if ax >= 0:
                for s in range(k):
                    acc = 0
                    for b in range(m):
                        acc += shifts[s, b, idx[b]]
                    tsh[s] = acc
                n_ax = sizes[ax]
                for l in range(1, r + 1):
                    for sgn in range(2):
                        step = l if sgn == 0 else -l
                        ia = idx[ax] + step
                        wrap = 0
                        if ia >= n_ax:
                            ia -= n_ax
                            wrap = 1
                        elif ia < 0:
                            ia += n_ax
                            wrap = -1
                        target = row + (ia - idx[ax]) * rowstride[ax]
                        col = 0
                        if wrap != 0:
                            for s in range(k):
                                nt = sizes[m + s]
                                delta = (-wrap * tsh[s]) % nt
                                if s < k - 1:
                                    it = (idx[m + s] + delta) % nt
                                    target += (it - idx[m + s]) * rowstride[m + s]
                                else:
                                    col = delta
                        if sgn == 0:
                            rows_f[l - 1] = target
                            cols_f[l - 1] = col
                        else:
                            rows_b[l - 1] = target
                            cols_b[l - 1] = col

            for s in range(k - 1):
                nt = sizes[m + s]
                for l in range(1, r + 1):
                    ip = (idx[m + s] + l) % nt
                    im = (idx[m + s] - l) % nt
                    vrows_p[s, l - 1] = row + (ip - idx[m + s]) * rowstride[m + s]
                    vrows_m[s, l - 1] = row + (im - idx[m + s]) * rowstride[m + s]

            if not accumulate:
                for j in range(L):
                    out[row, j] = 0.0
            if ax >= 0:
                scale_h = alpha * inv_h[ax]
                for l in range(r):
                    wl = scale_h * weights[l]
                    _add_shifted(out, row, f, rows_f[l], cols_f[l], wl, L)
                    _add_shifted(out, row, f, rows_b[l], cols_b[l], -wl, L)
            for s in range(k):
                if coef[s] == 0.0:
                    continue
                cs = coef[s] * inv_h[m + s]
                for l in range(r):
                    wl = cs * weights[l]
                    if s < k - 1:
                        _add_shifted(out, row, f, vrows_p[s, l], 0, wl, L)
                        _add_shifted(out, row, f, vrows_m[s, l], 0, -wl, L)
                    else:
                        _add_shifted(out, row, f, row, l + 1, wl, L)
                        _add_shifted(out, row, f, row, L - l - 1, -wl, L)


@numba.njit(inline="always")
def _add_shifted(out, row, f, src, col, w, L):
    """``out[row, j] += w * f[src, (j + col) % L]`` in two contiguous runs."""
    n1 = L - col
    for j in range(n1):
        out[row, j] += w * f[src, j + col]
    for j in range(n1, L):
        out[row, j] += w * f[src, j - n1]


@numba.njit(parallel=True, cache=True)
def add_product(acc, c, x, y):
    """``acc += c * x * y`` elementwise on flat arrays, without temporaries."""
    for i in numba.prange(acc.shape[0]):
        acc[i] += c * x[i] * y[i]


@numba.njit(parallel=True, cache=True)
def add_scaled(acc, c, x):
    for i in numba.prange(acc.shape[0]):
        acc[i] += c * x[i]


@numba.njit(parallel=True, cache=True)
def apply_invariant(fh, out, qsizes, ax, coef_h, weights, beta, kvals, kshape,
                    kmask, accumulate):
    """Left-invariant difference along ``e_ax`` on vertically Fourier
    transformed data.

    ``fh`` and ``out`` are ``(R, K)`` complex views: ``R`` horizontal grid
    points, ``K`` vertical wave vectors.  The stencil samples the right
    translates ``p . exp(+-l h e_ax)``; in the vertical Fourier variable these
    are horizontal index shifts times the phase
    ``exp(-2 pi i sum_s k_s beta_s (l h + w))`` where ``beta_s = B_s(e_ax, q)``
    and ``w = +-1`` counts lattice wraps through the upper/lower face.
    """
    R = fh.shape[0]
    K = fh.shape[1]
    m = qsizes.shape[0]
    k = kshape.shape[0]
    r = weights.shape[0]
    n_ax = qsizes[ax]
    stride = 1
    for i in range(m - 1, ax, -1):
        stride *= qsizes[i]
    h = 1.0 / n_ax
    nchunks = (R + _CHUNK_ROWS - 1) // _CHUNK_ROWS
    for chunk in numba.prange(nchunks):
        phase = np.empty(K, dtype=np.complex128)
        pw = np.empty((k, kvals.shape[1]), dtype=np.complex128)
        row_end = min(R, (chunk + 1) * _CHUNK_ROWS)
        for row in range(chunk * _CHUNK_ROWS, row_end):
            if not accumulate:
                for j in range(K):
                    out[row, j] = 0.0
            ia = (row // stride) % n_ax
            for l in range(1, r + 1):
                for sgn in range(2):
                    step = l if sgn == 0 else -l
                    i2 = ia + step
                    wrap = 0
                    if i2 >= n_ax:
                        i2 -= n_ax
                        wrap = 1
                    elif i2 < 0:
                        i2 += n_ax
                        wrap = -1
                    src = row + (i2 - ia) * stride
                    t = step * h + wrap
                    c = coef_h * weights[l - 1]
                    if sgn == 1:
                        c = -c
                    for s in range(k):
                        theta = -2.0 * np.pi * beta[row, s] * t
                        cs = c if s == k - 1 else 1.0
                        for j in range(kshape[s]):
                            ang = theta * kvals[s, j]
                            pw[s, j] = (cs * kmask[s, j]) * complex(np.cos(ang), np.sin(ang))
                    # outer product of the per-axis phases, last axis fastest;
                    # descending jj keeps phase[:size] intact until jj = 0
                    size = kshape[k - 1]
                    for j in range(size):
                        phase[j] = pw[k - 1, j]
                    for s in range(k - 2, -1, -1):
                        for jj in range(kshape[s] - 1, -1, -1):
                            ps = pw[s, jj]
                            base = jj * size
                            for j in range(size):
                                phase[base + j] = ps * phase[j]
                        size *= kshape[s]
                    for j in range(K):
                        out[row, j] += phase[j] * fh[src, j]
