"""Independent slow reference implementations used as test oracles.

Everything here is written with explicit loops and no code shared with the
package, so agreement is evidence rather than tautology.
"""

import math

import numpy as np


def conv2d(x, w, b=None, stride=1, pad=0):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for a in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for u in range(k):
                            for v in range(k):
                                acc += xp[a, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[a, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def depthwise_xcorr(search, template, pad):
    n, c, g, _ = search.shape
    k = template.shape[-1]
    sp = np.zeros((n, c, g + 2 * pad, g + 2 * pad))
    sp[:, :, pad : pad + g, pad : pad + g] = search
    go = g + 2 * pad - k + 1
    out = np.zeros((n, c, go, go))
    for a in range(n):
        for ch in range(c):
            for i in range(go):
                for j in range(go):
                    acc = 0.0
                    for u in range(k):
                        for v in range(k):
                            acc += sp[a, ch, i + u, j + v] * template[a, ch, u, v]
                    out[a, ch, i, j] = acc
    return out


def softmax_rows(x):
    """Softmax of every row of a 2-D array, one row at a time."""
    out = np.empty_like(x)
    for r in range(x.shape[0]):
        m = max(x[r])
        e = [math.exp(v - m) for v in x[r]]
        s = math.fsum(e)
        out[r] = [v / s for v in e]
    return out


def matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            out[i, j] = sum(a[i, t] * b[t, j] for t in range(k))
    return out


def mha(q, k, v, wq, wk, wv, wo, n_heads):
    """Per-head attention with explicit head slicing and concatenation."""
    d = q.shape[1]
    dk = wq.shape[1] // n_heads
    dv = wv.shape[1] // n_heads
    heads = []
    for i in range(n_heads):
        qi = matmul(q, wq[:, i * dk : (i + 1) * dk])
        ki = matmul(k, wk[:, i * dk : (i + 1) * dk])
        vi = matmul(v, wv[:, i * dv : (i + 1) * dv])
        scores = matmul(qi, ki.T) / math.sqrt(dk)
        heads.append(matmul(softmax_rows(scores), vi))
    return matmul(np.concatenate(heads, axis=1), wo)


def aggregate(ts, xs, ys, ps, width, height, t0=None, t1=None):
    """Per-event accumulation into a list-of-lists grid."""
    grid = [[0] * width for _ in range(height)]
    for t, x, y, p in zip(ts, xs, ys, ps):
        if t0 is not None and not (t0 <= t < t1):
            continue
        grid[y][x] += p
    return np.array(grid, dtype=np.int64)


def raster_overlap(a, b, n=1000):
    """(iou, giou) of two ``cx, cy, w, h`` boxes by pixel counting.

    The n x n raster spans the pair's enclosing box, so the enclosure is
    exactly n*n pixels and both boxes get the full resolution.
    """

    def edges(bx):
        cx, cy, w, h = bx
        return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2

    ea, eb = edges(a), edges(b)
    x0, y0 = min(ea[0], eb[0]), min(ea[1], eb[1])
    x1, y1 = max(ea[2], eb[2]), max(ea[3], eb[3])
    px = x0 + (np.arange(n) + 0.5) / n * (x1 - x0)
    py = y0 + (np.arange(n) + 0.5) / n * (y1 - y0)

    def mask(e):
        mx = (px >= e[0]) & (px < e[2])
        my = (py >= e[1]) & (py < e[3])
        return my[:, None] & mx[None, :]

    ma, mb = mask(ea), mask(eb)
    inter = np.count_nonzero(ma & mb)
    union = np.count_nonzero(ma | mb)
    enclose = n * n
    i = inter / union
    return i, i - (enclose - union) / enclose


def auc_by_integration(ious):
    """Average over frames of the fraction of thresholds 0, .01, .., 1 the frame clears."""
    total = 0.0
    for s in ious:
        cleared = 0
        t = 0
        while t <= 100 and s >= t / 100:
            cleared += 1
            t += 1
        total += cleared / 101
    return total / len(ious)
