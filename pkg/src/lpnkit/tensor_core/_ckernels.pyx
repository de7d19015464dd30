# cython: language_level=3
"""Compiled direct-loop kernels for grouped convolutions with few channels per group.

Depthwise (1 in / 1 out per group) and the small-group transposed convolutions
of the upsampling head are memory-bound; numpy evaluates them as a chain of
broadcast temporaries. These loops touch each input element once per kernel
tap and allocate nothing besides the output.

Reduction order per output element: input channel in group, then kernel row,
then kernel column. No threads, so results are deterministic.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t off, Py_ssize_t s) nogil:
    # smallest o >= 0 with o*s + off >= 0
    if off >= 0:
        return 0
    return (-off + s - 1) // s


cdef inline Py_ssize_t _hi(Py_ssize_t off, Py_ssize_t s, Py_ssize_t n, Py_ssize_t lim) nogil:
    # one past the largest o < lim with o*s + off < n
    cdef Py_ssize_t h
    if n - off <= 0:
        return 0
    h = (n - off - 1) // s + 1
    return h if h < lim else lim


def conv2d_direct(real[:, :, :, ::1] x, real[:, :, :, ::1] w, bias,
                  int sh, int sw, int ph, int pw, int groups):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], cin_g = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = (H + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t ow = (W + 2 * pw - kw) // sw + 1
    cdef Py_ssize_t cout_g = cout // groups
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, cout, oh, ow), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef real[::1] b
    cdef bint has_bias = bias is not None
    if has_bias:
        b = np.ascontiguousarray(bias, dtype=dtype)
    cdef Py_ssize_t bn, g, co, oc, ci, ic, i, j, oy, ox, y0, y1, x0, x1, iy, offy, offx
    cdef real wv
    with nogil:
        for bn in range(n):
            for g in range(groups):
                for co in range(cout_g):
                    oc = g * cout_g + co
                    if has_bias:
                        for oy in range(oh):
                            for ox in range(ow):
                                out[bn, oc, oy, ox] = b[oc]
                    for ci in range(cin_g):
                        ic = g * cin_g + ci
                        for i in range(kh):
                            offy = i - ph
                            y0 = _lo(offy, sh)
                            y1 = _hi(offy, sh, H, oh)
                            for j in range(kw):
                                offx = j - pw
                                x0 = _lo(offx, sw)
                                x1 = _hi(offx, sw, W, ow)
                                wv = w[oc, ci, i, j]
                                for oy in range(y0, y1):
                                    iy = oy * sh + offy
                                    for ox in range(x0, x1):
                                        out[bn, oc, oy, ox] += wv * x[bn, ic, iy, ox * sw + offx]
    return out_arr


def conv_transpose2d_direct(real[:, :, :, ::1] x, real[:, :, :, ::1] w, bias,
                            int sh, int sw, int ph, int pw, int oph, int opw, int groups):
    # w: (c_in, c_out // groups, kh, kw)
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t cout_g = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t cin_g = cin // groups
    cdef Py_ssize_t cout = cout_g * groups
    cdef Py_ssize_t oh = (H - 1) * sh - 2 * ph + kh + oph
    cdef Py_ssize_t ow = (W - 1) * sw - 2 * pw + kw + opw
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, cout, oh, ow), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef real[::1] b
    cdef bint has_bias = bias is not None
    if has_bias:
        b = np.ascontiguousarray(bias, dtype=dtype)
    cdef Py_ssize_t bn, g, co, oc, ci, ic, i, j, iy, ix, y0, y1, x0, x1, oy, offy, offx
    cdef real wv
    with nogil:
        for bn in range(n):
            for g in range(groups):
                for co in range(cout_g):
                    oc = g * cout_g + co
                    for ci in range(cin_g):
                        ic = g * cin_g + ci
                        for i in range(kh):
                            # output row = iy*sh + offy
                            offy = i - ph
                            y0 = _lo(offy, sh)
                            y1 = _hi(offy, sh, oh, H)
                            for j in range(kw):
                                offx = j - pw
                                x0 = _lo(offx, sw)
                                x1 = _hi(offx, sw, ow, W)
                                wv = w[ic, co, i, j]
                                for iy in range(y0, y1):
                                    oy = iy * sh + offy
                                    for ix in range(x0, x1):
                                        out[bn, oc, oy, ix * sw + offx] += wv * x[bn, ic, iy, ix]
                    if has_bias:
                        for oy in range(oh):
                            for ix in range(ow):
                                out[bn, oc, oy, ix] += b[oc]
    return out_arr
