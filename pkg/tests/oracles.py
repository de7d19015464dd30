"""Slow, obviously-correct reference implementations used only by the tests."""

import numpy as np


def conv2d_naive(x, w, bias=None, stride=(1, 1), padding=(0, 0), groups=1):
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    cout_g = cout // groups
    out = np.zeros((n, cout, oh, ow), dtype=np.float64)
    for b in range(n):
        for o in range(cout):
            g = o // cout_g
            for y in range(oh):
                for xo in range(ow):
                    acc = 0.0 if bias is None else float(bias[o])
                    for c in range(cin_g):
                        for i in range(kh):
                            for j in range(kw):
                                iy = y * sh - ph + i
                                ix = xo * sw - pw + j
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += float(w[o, c, i, j]) * float(x[b, g * cin_g + c, iy, ix])
                    out[b, o, y, xo] = acc
    return out


def conv_transpose2d_naive(x, w, bias=None, stride=(1, 1), padding=(0, 0), output_padding=(0, 0), groups=1):
    """Scatter-add: every input pixel spreads weight * value onto the output."""
    n, cin, h, wd = x.shape
    _, cout_g, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh = (h - 1) * sh - 2 * ph + kh + output_padding[0]
    ow = (wd - 1) * sw - 2 * pw + kw + output_padding[1]
    cin_g = cin // groups
    out = np.zeros((n, cout_g * groups, oh, ow), dtype=np.float64)
    for b in range(n):
        for c in range(cin):
            g = c // cin_g
            for y in range(h):
                for xi in range(wd):
                    v = float(x[b, c, y, xi])
                    for o in range(cout_g):
                        for i in range(kh):
                            for j in range(kw):
                                oy = y * sh - ph + i
                                ox = xi * sw - pw + j
                                if 0 <= oy < oh and 0 <= ox < ow:
                                    out[b, g * cout_g + o, oy, ox] += v * float(w[c, o, i, j])
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64).reshape(1, -1, 1, 1)
    return out


def max_pool_naive(x, k=3, s=2, p=1):
    n, c, h, w = x.shape
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    out = np.full((n, c, oh, ow), -np.inf)
    for b in range(n):
        for ch in range(c):
            for y in range(oh):
                for xo in range(ow):
                    for i in range(k):
                        for j in range(k):
                            iy, ix = y * s - p + i, xo * s - p + j
                            if 0 <= iy < h and 0 <= ix < w:
                                out[b, ch, y, xo] = max(out[b, ch, y, xo], x[b, ch, iy, ix])
    return out


def softmax_naive(v, scale):
    v = [scale * float(t) for t in v]
    m = max(v)
    e = [np.exp(t - m) for t in v]
    s = sum(e)
    return [t / s for t in e]


def rel_err(a, ref):
    """Largest absolute deviation, relative to the largest reference magnitude."""
    a = np.asarray(a, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    return float(np.max(np.abs(a - ref)) / max(np.max(np.abs(ref)), 1e-30))


def central_diff(f, x, eps):
    """Numerical gradient of scalar f at array x (x is perturbed in place and restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g
