"""Pure numpy convolution kernels.

Every convolution is expressed through three primitives over a zero-padded
input ``xp``:

* ``gather``   out[n, o, y, x]  = sum_{c, i, j} w[o, c, i, j] * xp[n, c, y*sh + i, x*sw + j]
* ``scatter``  the adjoint of ``gather`` with respect to ``xp``
* ``wgrad``    the adjoint of ``gather`` with respect to ``w``

conv2d is ``gather``; conv_transpose2d is ``scatter`` followed by a crop.
Their gradients fall out of the same three functions with roles swapped.

Dense convolutions (groups == 1) run as a single matmul over an im2col patch
matrix; grouped ones accumulate one batched matmul per kernel offset, offsets
in row-major order. The reduction order is fixed for a given shape, so results
are bit-reproducible run to run.
"""

from __future__ import annotations

import numpy as np


def _strided(xp, i, j, sh, sw, oh, ow):
    return xp[:, :, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw]


def im2col(xp, kh, kw, stride, oh, ow):
    n, c = xp.shape[:2]
    sh, sw = stride
    if kh == 1 and kw == 1:
        return _strided(xp, 0, 0, sh, sw, oh, ow).reshape(n, c, oh * ow)
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = _strided(xp, i, j, sh, sw, oh, ow)
    return cols.reshape(n, c * kh * kw, oh * ow)


def gather(xp, w, stride, oh, ow, groups):
    n = xp.shape[0]
    cout, cin_g, kh, kw = w.shape
    g = groups
    cout_g = cout // g
    sh, sw = stride
    P = oh * ow
    if g == 1:
        # one matmul over an (n, cin*kh*kw, P) patch matrix
        cols = im2col(xp, kh, kw, stride, oh, ow)
        return np.matmul(w.reshape(cout, -1), cols).reshape(n, cout, oh, ow)
    wg = w.reshape(g, cout_g, cin_g, kh, kw)
    out = np.zeros((n, g, cout_g, P), dtype=np.result_type(xp, w))
    for i in range(kh):
        for j in range(kw):
            patch = _strided(xp, i, j, sh, sw, oh, ow).reshape(n, g, cin_g, P)
            if cin_g == 1:
                out += wg[:, :, :, i, j] * patch
            else:
                out += np.matmul(wg[:, :, :, i, j], patch)
    return out.reshape(n, cout, oh, ow)


def scatter(gout, w, stride, hp, wp, groups):
    """Adjoint of :func:`gather` w.r.t. its input; returns an (n, cin, hp, wp) array."""
    n, cout, oh, ow = gout.shape
    _, cin_g, kh, kw = w.shape
    g = groups
    cout_g = cout // g
    cin = cin_g * g
    sh, sw = stride
    P = oh * ow
    dt = np.result_type(gout, w)
    res = np.zeros((n, cin, hp, wp), dtype=dt)
    if kh == 1 and kw == 1 and g == 1:
        contrib = np.matmul(w[:, :, 0, 0].T, gout.reshape(n, cout, P))
        res[:, :, 0:sh * (oh - 1) + 1:sh, 0:sw * (ow - 1) + 1:sw] += contrib.reshape(n, cin, oh, ow)
        return res
    wg = w.reshape(g, cout_g, cin_g, kh, kw)
    go = gout.reshape(n, g, cout_g, P)
    for i in range(kh):
        for j in range(kw):
            if cout_g == 1:
                contrib = wg[:, 0, :, i, j][:, :, None] * go
            else:
                contrib = np.matmul(wg[:, :, :, i, j].transpose(0, 2, 1), go)
            res[:, :, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw] += contrib.reshape(n, cin, oh, ow)
    return res


def wgrad(xp, gout, kshape, stride, groups):
    """Adjoint of :func:`gather` w.r.t. its weight."""
    n, cout, oh, ow = gout.shape
    cin_g, kh, kw = kshape
    g = groups
    cout_g = cout // g
    sh, sw = stride
    P = oh * ow
    go = gout.reshape(n, g, cout_g, P)
    gw = np.zeros((g, cout_g, cin_g, kh, kw), dtype=np.result_type(xp, gout))
    for i in range(kh):
        for j in range(kw):
            patch = _strided(xp, i, j, sh, sw, oh, ow).reshape(n, g, cin_g, P)
            gw[:, :, :, i, j] = np.matmul(go, patch.transpose(0, 1, 3, 2)).sum(axis=0)
    return gw.reshape(cout, cin_g, kh, kw)


def _pad(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d(x, w, bias, stride, padding, groups):
    kh, kw = w.shape[2:]
    ph, pw = padding
    oh = (x.shape[2] + 2 * ph - kh) // stride[0] + 1
    ow = (x.shape[3] + 2 * pw - kw) // stride[1] + 1
    out = gather(_pad(x, ph, pw), w, stride, oh, ow, groups)
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def conv2d_backward(x, w, gout, stride, padding, groups, has_bias):
    ph, pw = padding
    xp = _pad(x, ph, pw)
    gxp = scatter(gout, w, stride, xp.shape[2], xp.shape[3], groups)
    gx = gxp[:, :, ph:ph + x.shape[2], pw:pw + x.shape[3]]
    gw = wgrad(xp, gout, w.shape[1:], stride, groups)
    gb = gout.sum(axis=(0, 2, 3)) if has_bias else None
    return np.ascontiguousarray(gx), gw, gb


def conv_transpose2d(x, w, bias, stride, padding, output_padding, groups):
    # w: (c_in, c_out // groups, kh, kw) is a conv2d weight mapping c_out -> c_in
    n, cin, ih, iw = x.shape
    kh, kw = w.shape[2:]
    sh, sw = stride
    ph, pw = padding
    oph, opw = output_padding
    full_h = (ih - 1) * sh + kh + oph
    full_w = (iw - 1) * sw + kw + opw
    full = scatter(x, w, stride, full_h, full_w, groups)
    oh = full_h - 2 * ph
    ow = full_w - 2 * pw
    out = full[:, :, ph:ph + oh, pw:pw + ow]
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def conv_transpose2d_backward(x, w, gout, stride, padding, output_padding, groups, has_bias):
    n, cin, ih, iw = x.shape
    kh, kw = w.shape[2:]
    sh, sw = stride
    ph, pw = padding
    oph, opw = output_padding
    full_h = (ih - 1) * sh + kh + oph
    full_w = (iw - 1) * sw + kw + opw
    gfull = np.zeros((n, gout.shape[1], full_h, full_w), dtype=gout.dtype)
    gfull[:, :, ph:ph + gout.shape[2], pw:pw + gout.shape[3]] = gout
    gx = gather(gfull, w, stride, ih, iw, groups)
    gw = wgrad(gfull, x, w.shape[1:], stride, groups)
    gb = gout.sum(axis=(0, 2, 3)) if has_bias else None
    return gx, gw, gb
