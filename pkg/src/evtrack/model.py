"""Distractor-aware Siamese tracker network.

Data flow for one template/search pair::

    template --backbone--> f_z --phi--> centre-crop KxK --+
                                                          xcorr --> bottleneck --> TAN encoders --> R'
    search   --backbone--> f_x --varphi-------------------+                                   |
                             |                                               TAN decoders(TQ, R') --> T
                             +--compress--> MAN encoders --> M'                                    |
                                                                       fuse(T, M', R') --> head --> box

All spatial maps are batched ``N x C x H x W``; token sequences are
``N x G*G x d``.  Boxes come out as ``N x 4`` rows of ``(cx, cy, w, h)``
normalized to the search crop.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .functional import (
    AttentionConfig,
    batch_norm,
    conv2d,
    depthwise_xcorr,
    ffn,
    multi_head_attention,
    softmax,
)
from .tensor import Tensor, concat, matmul, no_grad


@dataclass(frozen=True)
class ModelConfig:
    template_size: int = 48
    search_size: int = 96
    in_channels: int = 1
    backbone_channels: tuple[int, ...] = (8, 16, 32)
    backbone_strides: tuple[int, ...] = (2, 2, 2)
    d_model: int = 32
    n_heads: int = 2
    tan_encoders: int = 3
    tan_decoders: int = 3
    man_encoders: int = 2
    ffn_hidden: int = 128
    dropout: float = 0.1
    pos_encoding: bool = True
    man_stride: int = 1
    template_kernel: int = 5
    head_channels: tuple[int, ...] = (16, 8)
    # ablation switches
    use_tan: bool = True
    use_decoder: bool = True
    use_man: bool = True
    tan_self_attention: bool = True
    man_self_attention: bool = True
    shortcut: bool = True

    def __post_init__(self):
        object.__setattr__(self, "backbone_channels", tuple(self.backbone_channels))
        object.__setattr__(self, "backbone_strides", tuple(self.backbone_strides))
        object.__setattr__(self, "head_channels", tuple(self.head_channels))
        if len(self.backbone_channels) != len(self.backbone_strides):
            raise ValueError("backbone channel and stride schedules differ in length")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        s = self.stride
        if self.template_size % s or self.search_size % s:
            raise ValueError(f"template/search sizes must be divisible by the stride {s}")
        k = self.template_kernel
        if k % 2 == 0 or k > self.template_grid:
            raise ValueError(f"template kernel {k} must be odd and <= template grid {self.template_grid}")
        if not (self.use_tan or self.use_man):
            raise ValueError("at least one of TAN and MAN must be enabled")
        if self.use_man and self.man_grid != self.grid:
            raise ValueError(
                f"MAN grid {self.man_grid} differs from TAN grid {self.grid}; "
                "adjust man_stride so the fusion maps align"
            )

    @property
    def stride(self) -> int:
        return int(np.prod(self.backbone_strides))

    @property
    def feat_channels(self) -> int:
        return self.backbone_channels[-1]

    @property
    def grid(self) -> int:
        return self.search_size // self.stride

    @property
    def template_grid(self) -> int:
        return self.template_size // self.stride

    @property
    def man_grid(self) -> int:
        return (self.grid + 2 - 3) // self.man_stride + 1

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig.split(self.d_model, self.n_heads)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


DESK = ModelConfig()
# Sizes chosen so the stride divides them and the search grid is 17x17.
PAPER = ModelConfig(
    template_size=128,
    search_size=272,
    backbone_channels=(32, 64, 128, 128),
    backbone_strides=(2, 2, 2, 2),
    d_model=128,
    n_heads=4,
    ffn_hidden=2048,
    template_kernel=7,
    head_channels=(128, 64, 32, 16),
)
PRESETS = {"desk": DESK, "paper": PAPER}


def ablation(config: ModelConfig, name: str) -> ModelConfig:
    """Named variants matching the ablation table rows that fit this architecture."""
    variants = {
        "full": {},
        "no_decoder": dict(use_decoder=False, use_man=False),  # row A
        "man_only": dict(use_tan=False),  # row B
        "tan_no_sa": dict(tan_self_attention=False),  # row C
        "man_no_sa": dict(man_self_attention=False),  # row D
        "no_sa": dict(tan_self_attention=False, man_self_attention=False),  # row E
        "tan_only": dict(use_man=False),  # row F
        "add_fusion": dict(use_decoder=False),  # row G
        "no_shortcut": dict(shortcut=False),  # row I
    }
    if name not in variants:
        raise ValueError(f"unknown ablation {name!r}; choose from {sorted(variants)}")
    return replace(config, **variants[name])


def sinusoid_2d(grid: int, d: int) -> np.ndarray:
    """Fixed 2-D sine/cosine position code, ``grid*grid x d``; half the channels per axis."""
    half = d // 2
    nf = max(half // 2, 1)
    freqs = 1.0 / (10000.0 ** (np.arange(nf) / nf))
    pos = np.arange(grid, dtype=np.float64)

    def axis_code(n):
        a = np.outer(pos, freqs)
        return np.concatenate([np.sin(a), np.cos(a)], axis=1)[:, :n]

    ys, xs = axis_code(half), axis_code(d - half)
    rows = np.repeat(np.arange(grid), grid)
    cols = np.tile(np.arange(grid), grid)
    return np.concatenate([ys[rows], xs[cols]], axis=1)


class DANet:
    """Parameters, buffers and the forward computation of the tracker network."""

    def __init__(self, config: ModelConfig = DESK, seed: int = 0):
        self.config = config
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._rng = np.random.default_rng(seed)
        self._build()
        self._rng = None
        g, d = config.grid, config.d_model
        self._pos = Tensor(sinusoid_2d(g, d)) if config.pos_encoding else None

    # -- parameter construction --------------------------------------------------

    def _add(self, name, shape, std=0.0, value=None):
        if value is not None:
            data = np.full(shape, float(value))
        elif std == 0.0:
            data = np.zeros(shape)
        else:
            data = self._rng.normal(0.0, std, size=shape)
        self.params[name] = Tensor(data, requires_grad=True)

    def _conv(self, name, cin, cout, k, bias=True, gain=2.0):
        self._add(f"{name}.w", (cout, cin, k, k), np.sqrt(gain / (cin * k * k)))
        if bias:
            self._add(f"{name}.b", (cout,))

    def _bn(self, name, c):
        self._add(f"{name}.gamma", (c,), value=1.0)
        self._add(f"{name}.beta", (c,))
        self.buffers[f"{name}.mean"] = np.zeros(c)
        self.buffers[f"{name}.var"] = np.ones(c)

    def _attn(self, name):
        d = self.config.d_model
        for w in ("wq", "wk", "wv"):
            self._add(f"{name}.{w}", (d, d), 1.0 / np.sqrt(d))
        self._add(f"{name}.wo", (d, d), 0.5 / np.sqrt(d))

    def _ffn(self, name):
        d, hdim = self.config.d_model, self.config.ffn_hidden
        self._add(f"{name}.w1", (d, hdim), np.sqrt(2.0 / d))
        self._add(f"{name}.b1", (hdim,))
        self._add(f"{name}.w2", (hdim, d), 0.5 / np.sqrt(hdim))
        self._add(f"{name}.b2", (d,))

    def _build(self):
        c = self.config
        cin = c.in_channels
        for i, cout in enumerate(c.backbone_channels):
            self._conv(f"backbone.{i}.conv", cin, cout, 3, bias=False)
            self._bn(f"backbone.{i}.bn", cout)
            cin = cout
        C, d = c.feat_channels, c.d_model
        if c.use_tan:
            self._conv("tan.phi", C, C, 3, gain=1.0)
            self._conv("tan.varphi", C, C, 3, gain=1.0)
            self._conv("tan.bottleneck", C, d, 1, bias=False)
            self._bn("tan.bottleneck.bn", d)
            for i in range(c.tan_encoders):
                if c.tan_self_attention:
                    self._attn(f"tan.enc.{i}.attn")
                self._ffn(f"tan.enc.{i}.ffn")
            if c.use_decoder:
                self._add("tan.query", (1, d), 1.0)
                for i in range(c.tan_decoders):
                    self._attn(f"tan.dec.{i}.self")
                    self._attn(f"tan.dec.{i}.cross")
                    self._ffn(f"tan.dec.{i}.ffn")
        if c.use_man:
            self._conv("man.compress", C, d, 3, bias=False)
            self._bn("man.compress.bn", d)
            for i in range(c.man_encoders):
                if c.man_self_attention:
                    self._attn(f"man.enc.{i}.attn")
                self._ffn(f"man.enc.{i}.ffn")
        for branch, nout in (("center", 1), ("size", 2)):
            cin = d
            for i, cout in enumerate(c.head_channels):
                self._conv(f"head.{branch}.{i}.conv", cin, cout, 3, bias=False)
                self._bn(f"head.{branch}.{i}.bn", cout)
                cin = cout
            self._conv(f"head.{branch}.out", cin, nout, 3, gain=0.1)
        # start the size branch near a quarter of the crop (the target at search context 4)
        self.params["head.size.out.b"].data[:] = np.log(0.25 / 0.75)

    # -- bookkeeping -------------------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"params/{k}": v.data for k, v in self.params.items()}
        out.update({f"buffers/{k}": v for k, v in self.buffers.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = set(self.state_arrays())
        if set(arrays) != expected:
            missing = sorted(expected - set(arrays))[:3]
            extra = sorted(set(arrays) - expected)[:3]
            raise ValueError(f"checkpoint does not match model config (missing {missing}, unexpected {extra})")
        for k, v in arrays.items():
            kind, name = k.split("/", 1)
            target = self.params[name].data if kind == "params" else self.buffers[name]
            if target.shape != v.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}: {v.shape} vs {target.shape}")
            target[...] = v

    # -- building blocks -------------------------------------------------------------

    def _p(self, name) -> Tensor:
        return self.params[name]

    def _bn_apply(self, x, name, training):
        return batch_norm(
            x, self._p(f"{name}.gamma"), self._p(f"{name}.beta"),
            self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"], training,
        )

    def _mha(self, name, q, k, v):
        p = self.params
        return multi_head_attention(
            q, k, v, self.config.attention,
            p[f"{name}.wq"], p[f"{name}.wk"], p[f"{name}.wv"], p[f"{name}.wo"],
        )

    def _ffn_apply(self, name, x, training, rng):
        p = self.params
        return ffn(
            x, p[f"{name}.w1"], p[f"{name}.b1"], p[f"{name}.w2"], p[f"{name}.b2"],
            self.config.dropout, training, rng,
        )

    def _encoder(self, prefix, n_blocks, self_attention, x, training, rng):
        for i in range(n_blocks):
            if self_attention:
                x = x + self._mha(f"{prefix}.{i}.attn", x, x, x)
            x = x + self._ffn_apply(f"{prefix}.{i}.ffn", x, training, rng)
        return x

    def _tokens(self, fmap: Tensor) -> Tensor:
        n, d, g, _ = fmap.shape
        tok = fmap.reshape(n, d, g * g).transpose(0, 2, 1)
        if self._pos is not None:
            tok = tok + self._pos.expand(tok.shape)
        return tok

    @staticmethod
    def _as_batch(x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 2:
            return x.reshape((1, 1) + x.shape)
        if x.ndim == 3:
            return x.reshape((1,) + x.shape)
        return x

    # -- network stages ------------------------------------------------------------

    def extract_features(self, frames, training: bool = False) -> Tensor:
        """Shared backbone; ``N x C_in x H x W`` -> ``N x C x H/s x W/s``."""
        x = self._as_batch(frames)
        s = self.config.stride
        if x.shape[-1] % s or x.shape[-2] % s:
            raise ValueError(f"input size {x.shape[-2:]} not divisible by stride {s}")
        for i, st in enumerate(self.config.backbone_strides):
            x = conv2d(x, self._p(f"backbone.{i}.conv.w"), stride=st, pad=1)
            x = self._bn_apply(x, f"backbone.{i}.bn", training).relu()
        return x

    def _template_kernel(self, f_z: Tensor) -> Tensor:
        k = self.config.template_kernel
        z = conv2d(f_z, self._p("tan.phi.w"), self._p("tan.phi.b"), pad=1)
        o = (z.shape[-1] - k) // 2
        return z[:, :, o : o + k, o : o + k]

    def correlation_response(self, f_z: Tensor, f_x: Tensor) -> Tensor:
        """Depth-wise correlation of the projected template and search maps (pre-bottleneck)."""
        k = self.config.template_kernel
        z = self._template_kernel(f_z)
        x = conv2d(f_x, self._p("tan.varphi.w"), self._p("tan.varphi.b"), pad=1)
        if z.shape[0] != x.shape[0]:
            z = z.expand((x.shape[0],) + z.shape[1:])
        return depthwise_xcorr(x, z, pad=(k - 1) // 2)

    def tan_correlate(self, f_z: Tensor, f_x: Tensor, training: bool = False) -> Tensor:
        r = self.correlation_response(f_z, f_x)
        r = conv2d(r, self._p("tan.bottleneck.w"))
        return self._bn_apply(r, "tan.bottleneck.bn", training)

    def tan_encode(self, R: Tensor, training: bool = False, rng=None) -> Tensor:
        c = self.config
        return self._encoder("tan.enc", c.tan_encoders, c.tan_self_attention, self._tokens(R), training, rng)

    def tan_decode(self, R_enc: Tensor, training: bool = False, rng=None) -> Tensor:
        n = R_enc.shape[0]
        tq = self._p("tan.query")
        tq = tq.reshape(1, 1, -1).expand(n, 1, tq.shape[-1])
        x = tq
        for i in range(self.config.tan_decoders):
            qk = x + tq
            a = x + self._mha(f"tan.dec.{i}.self", qk, qk, x)
            f = a + self._mha(f"tan.dec.{i}.cross", a + tq, R_enc, R_enc)
            x = f + self._ffn_apply(f"tan.dec.{i}.ffn", f, training, rng)
        return x

    def man_encode(self, f_x: Tensor, training: bool = False, rng=None) -> Tensor:
        c = self.config
        m = conv2d(f_x, self._p("man.compress.w"), stride=c.man_stride, pad=1)
        m = self._bn_apply(m, "man.compress.bn", training)
        if m.shape[-1] != c.grid:
            raise ValueError(f"MAN grid {m.shape[-1]} differs from TAN grid {c.grid}")
        return self._encoder("man.enc", c.man_encoders, c.man_self_attention, self._tokens(m), training, rng)

    def fuse(self, T: Tensor | None, M_enc: Tensor | None, R_enc: Tensor | None, return_gate: bool = False):
        """Gate motion tokens by their similarity to the target embedding.

        ``gate_j = sigmoid(<M'_j, T> / sqrt(d))`` and
        ``fused_j = gate_j * M'_j (+ R'_j with the shortcut)``.  Missing
        branches follow the ablation rules in :class:`ModelConfig`.
        """
        c = self.config
        gate = None
        if T is not None:
            motion = M_enc if M_enc is not None else R_enc
            n, L, d = motion.shape
            gate = (matmul(motion, T.swapaxes(1, 2)) * (1.0 / np.sqrt(d))).sigmoid()
            fused = motion * gate.expand(motion.shape)
            if c.shortcut and R_enc is not None:
                fused = fused + R_enc
        elif R_enc is not None and M_enc is not None:
            fused = R_enc + M_enc
        else:
            fused = R_enc if R_enc is not None else M_enc
        n, L, d = fused.shape
        g = int(round(np.sqrt(L)))
        out = fused.transpose(0, 2, 1).reshape(n, d, g, g)
        return (out, gate) if return_gate else out

    def _head_branch(self, branch, x, training):
        for i in range(len(self.config.head_channels)):
            x = conv2d(x, self._p(f"head.{branch}.{i}.conv.w"), pad=1)
            x = self._bn_apply(x, f"head.{branch}.{i}.bn", training).relu()
        return conv2d(x, self._p(f"head.{branch}.out.w"), self._p(f"head.{branch}.out.b"), pad=1)

    def head_maps(self, fused: Tensor, training: bool = False) -> tuple[Tensor, Tensor]:
        """Center logits ``N x 1 x G x G`` and size logits ``N x 2 x G x G``."""
        return self._head_branch("center", fused, training), self._head_branch("size", fused, training)

    def regress(self, fused: Tensor, training: bool = False) -> Tensor:
        center, size = self.head_maps(fused, training)
        return soft_argmax_box(center, size)

    # -- full model --------------------------------------------------------------------

    def forward_features(self, f_z: Tensor | None, search, training: bool = False, rng=None, trace: dict | None = None) -> Tensor:
        """Forward pass from cached template features and a raw search grid."""
        c = self.config
        f_x = self.extract_features(search, training)
        R_enc = T = M_enc = None
        if c.use_tan:
            R = self.tan_correlate(f_z, f_x, training)
            R_enc = self.tan_encode(R, training, rng)
            if c.use_decoder:
                T = self.tan_decode(R_enc, training, rng)
        if c.use_man:
            M_enc = self.man_encode(f_x, training, rng)
        fused, gate = self.fuse(T, M_enc, R_enc, return_gate=True)
        center, size = self.head_maps(fused, training)
        if trace is not None:
            trace.update(fused=fused, gate=gate, center=center, size=size)
        return soft_argmax_box(center, size)

    def forward(self, template, search, training: bool = False, rng=None) -> Tensor:
        f_z = self.extract_features(template, training) if self.config.use_tan else None
        return self.forward_features(f_z, search, training, rng)

    __call__ = forward

    def template_features(self, template) -> Tensor:
        with no_grad():
            return self.extract_features(template, training=False)


def soft_argmax_box(center: Tensor, size: Tensor) -> Tensor:
    """Boxes ``N x 4`` from center logits ``N x 1 x G x G`` and size logits ``N x 2 x G x G``.

    The center is the softmax expectation of the cell coordinates ``i / G``
    with ``i`` counted from 1 (column for x, row for y).  Width and height are
    the same distribution's expectation of ``sigmoid(size)``.
    """
    n, _, gh, gw = center.shape
    p = softmax(center.reshape(n, gh * gw), axis=-1)
    cols = np.tile(np.arange(1, gw + 1) / gw, gh)
    rows = np.repeat(np.arange(1, gh + 1) / gh, gw)
    coords = Tensor(np.stack([cols, rows], axis=1))
    cxy = matmul(p, coords)
    s = size.reshape(n, 2, gh * gw).sigmoid()
    wh = (s * p.reshape(n, 1, gh * gw).expand(n, 2, gh * gw)).sum(axis=-1)
    return concat([cxy, wh], axis=1)
