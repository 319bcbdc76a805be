"""Neural kernels on :class:`~evtrack.tensor.Tensor` with hand-written gradients.

Spatial kernels take batched ``N x C x H x W`` inputs; a 3-D ``C x H x W``
input is treated as a batch of one and returned without the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, matmul

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected a 3-D or 4-D input, got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation, as in every deep-learning library)."""
    x, squeeze = _batched(as_tensor(x))
    weight = as_tensor(weight)
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin or k != k2:
        raise ValueError(f"conv2d: kernel {weight.shape} does not fit input {x.shape}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d: stride must be >= 1 and pad >= 0")
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ValueError(f"conv2d: kernel {k} larger than padded input {h}x{w}+{pad}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * k * k)
    wmat = weight.data.reshape(cout, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (gm.T @ cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(n, ho, wo, cin, k, k)
            gxp = np.zeros(xp.shape)
            hi = stride * (ho - 1) + 1
            wi = stride * (wo - 1) + 1
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + hi : stride, j : j + wi : stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    y = Tensor.make(out, parents, backward, "conv2d")
    return y.reshape(y.shape[1:]) if squeeze else y


def depthwise_xcorr(search: Tensor, template: Tensor, pad: int = 0) -> Tensor:
    """Per-channel cross-correlation of ``search`` with ``template``.

    Channel ``c`` of the output is the 2-D cross-correlation of search
    channel ``c`` with template channel ``c``.  With ``pad = (K - 1) // 2`` and
    odd ``K`` the output grid equals the search grid.
    """
    search, squeeze = _batched(as_tensor(search))
    template, _ = _batched(as_tensor(template))
    n, c, gh, gw = search.shape
    tn, tc, kh, kw = template.shape
    if (tn, tc) != (n, c):
        raise ValueError(f"depthwise_xcorr: template {template.shape} vs search {search.shape}")
    if gh + 2 * pad < kh or gw + 2 * pad < kw:
        raise ValueError("depthwise_xcorr: template larger than padded search")
    sp = np.pad(search.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else search.data
    t = template.data
    oh = gh + 2 * pad - kh + 1
    ow = gw + 2 * pad - kw + 1
    out = np.zeros((n, c, oh, ow))
    for u in range(kh):
        for v in range(kw):
            out += sp[:, :, u : u + oh, v : v + ow] * t[:, :, u, v, None, None]

    def backward(g):
        gt = np.empty_like(t)
        gsp = np.zeros(sp.shape) if search.requires_grad else None
        for u in range(kh):
            for v in range(kw):
                gt[:, :, u, v] = (g * sp[:, :, u : u + oh, v : v + ow]).sum(axis=(2, 3))
                if gsp is not None:
                    gsp[:, :, u : u + oh, v : v + ow] += g * t[:, :, u, v, None, None]
        gs = None
        if gsp is not None:
            gs = gsp[:, :, pad : pad + gh, pad : pad + gw] if pad else gsp
        return gs, gt

    y = Tensor.make(out, (search, template), backward, "depthwise_xcorr")
    return y.reshape(y.shape[1:]) if squeeze else y


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor.make(s, (x,), backward, "softmax")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or when ``rate == 0``."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return x * Tensor(mask)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalisation over every axis except axis 1.

    In training mode the batch statistics are used and the running buffers
    are updated in place; in eval mode the running buffers are used.
    """
    x = as_tensor(x)
    c = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    m = x.data.size // c
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * (var * m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    g_ = gamma.data.reshape(bshape)
    out = xhat * g_ + beta.data.reshape(bshape)

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_
        if training:
            dx = (inv.reshape(bshape) / m) * (
                m * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * inv.reshape(bshape)
        return dx, dgamma, dbeta

    return Tensor.make(out, (x, gamma, beta), backward, "batch_norm")


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int
    d_k: int
    d_v: int

    def __post_init__(self):
        if self.d_k <= 0 or self.d_v <= 0 or self.n_heads <= 0:
            raise ValueError("attention widths and head count must be positive")

    @classmethod
    def split(cls, d_model: int, n_heads: int) -> "AttentionConfig":
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        return cls(d_model, n_heads, d_model // n_heads, d_model // n_heads)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, cfg: AttentionConfig, w_q, w_k, w_v, w_o) -> Tensor:
    """Scaled dot-product attention over ``cfg.n_heads`` heads.

    ``q`` is ``[..., n, d_model]``, ``k`` and ``v`` are ``[..., m, d_model]``.
    Head ``i`` uses columns ``i*d_k:(i+1)*d_k`` of ``w_q``/``w_k`` (and the
    matching ``d_v`` block of ``w_v``); the concatenated heads go through
    ``w_o`` of shape ``(n_heads*d_v, d_model)``.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    squeeze = q.ndim == 2
    if squeeze:
        q, k, v = (t.reshape((1,) + t.shape) for t in (q, k, v))
    h, dk, dv = cfg.n_heads, cfg.d_k, cfg.d_v
    if q.shape[-1] != cfg.d_model or k.shape[-1] != cfg.d_model or v.shape[-1] != cfg.d_model:
        raise ValueError("multi_head_attention: token width does not match d_model")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("multi_head_attention: key and value lengths differ")
    if w_q.shape != (cfg.d_model, h * dk) or w_k.shape != (cfg.d_model, h * dk):
        raise ValueError("multi_head_attention: query/key projection shape mismatch")
    if w_v.shape != (cfg.d_model, h * dv) or w_o.shape != (h * dv, cfg.d_model):
        raise ValueError("multi_head_attention: value/output projection shape mismatch")
    b, n = q.shape[0], q.shape[1]
    m = k.shape[1]

    qh = matmul(q, w_q).reshape(b, n, h, dk).transpose(0, 2, 1, 3)
    kh = matmul(k, w_k).reshape(b, m, h, dk).transpose(0, 2, 3, 1)
    vh = matmul(v, w_v).reshape(b, m, h, dv).transpose(0, 2, 1, 3)
    att = softmax(matmul(qh, kh) * (1.0 / np.sqrt(dk)), axis=-1)
    heads = matmul(att, vh).transpose(0, 2, 1, 3).reshape(b, n, h * dv)
    out = matmul(heads, w_o)
    return out.reshape(out.shape[1:]) if squeeze else out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else y + b.expand(y.shape)


def ffn(
    x: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Position-wise feed-forward block ``max(0, x W1 + b1) W2 + b2``."""
    hidden = linear(x, w1, b1).relu()
    hidden = dropout(hidden, dropout_rate, rng, training)
    return linear(hidden, w2, b2)
