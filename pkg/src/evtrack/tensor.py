"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records its inputs and a closure mapping the
output gradient to one gradient per input.  :meth:`Tensor.backward` walks the
recorded graph in reverse topological order.  Leaf tensors (created by the
user with ``requires_grad=True``) accumulate into ``.grad`` with ``+=``
semantics, so callers zero gradients explicitly between steps.

Broadcasting in elementwise operations is deliberately narrow: operands must
either share a shape or one of them must be a scalar.  Use :meth:`Tensor.expand`
for anything wider.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array that can take part in gradient computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def make(data, parents: Sequence["Tensor"], backward: Callable, op: str = "") -> "Tensor":
        """Create an op output.

        ``backward(g)`` must return a tuple with one gradient (or ``None``)
        per parent, each already shaped like that parent.
        """
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- autodiff --------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not depend on any parameter")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- elementwise arithmetic ------------------------------------------------

    def _binary(self, other, fwd, bwd, op):
        b = other if isinstance(other, Tensor) else Tensor(other)
        a = self
        if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
            raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
        out = fwd(a.data, b.data)

        def backward(g):
            ga, gb = bwd(g, a.data, b.data, out)
            return (
                None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape),
            )

        return Tensor.make(out, (a, b), backward, op)

    def __add__(self, other):
        return self._binary(other, np.add, lambda g, a, b, o: (g, g), "add")

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract, lambda g, a, b, o: (g, -g), "sub")

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        return self._binary(other, np.multiply, lambda g, a, b, o: (g * b, g * a), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(
            other, np.divide, lambda g, a, b, o: (g / b, -g * a / (b * b)), "div"
        )

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __neg__(self):
        return Tensor.make(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        x = self.data
        return Tensor.make(
            x**exponent, (self,), lambda g: (g * exponent * x ** (exponent - 1),), "pow"
        )

    def __matmul__(self, other):
        return matmul(self, other)

    def maximum(self, other):
        return self._binary(
            other,
            np.maximum,
            lambda g, a, b, o: (g * (a >= b), g * (a < b)),
            "maximum",
        )

    def minimum(self, other):
        return self._binary(
            other,
            np.minimum,
            lambda g, a, b, o: (g * (a <= b), g * (a > b)),
            "minimum",
        )

    def clamp_min(self, lo: float):
        x = self.data
        return Tensor.make(np.maximum(x, lo), (self,), lambda g: (g * (x >= lo),), "clamp_min")

    # -- unary -----------------------------------------------------------------

    def relu(self):
        x = self.data
        return Tensor.make(np.maximum(x, 0.0), (self,), lambda g: (g * (x > 0),), "relu")

    def sigmoid(self):
        s = _sigmoid(self.data)
        return Tensor.make(s, (self,), lambda g: (g * s * (1.0 - s),), "sigmoid")

    def exp(self):
        e = np.exp(self.data)
        return Tensor.make(e, (self,), lambda g: (g * e,), "exp")

    def log(self):
        x = self.data
        return Tensor.make(np.log(x), (self,), lambda g: (g / x,), "log")

    def abs(self):
        x = self.data
        return Tensor.make(np.abs(x), (self,), lambda g: (g * np.sign(x),), "abs")

    def sqrt(self):
        r = np.sqrt(self.data)
        return Tensor.make(r, (self,), lambda g: (g * 0.5 / r,), "sqrt")

    # -- reductions --------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.make(out, (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- shape -----------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor.make(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(src),), "reshape"
        )

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor.make(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose"
        )

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    @property
    def T(self):
        return self.transpose()

    def expand(self, *shape):
        """Broadcast to ``shape`` explicitly; the gradient sums back."""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor.make(
            np.broadcast_to(self.data, shape), (self,), lambda g: (_unbroadcast(g, src),), "expand"
        )

    def __getitem__(self, idx):
        src = self.shape
        out = self.data[idx]

        def backward(g):
            full = np.zeros(src)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor.make(out, (self,), backward, "getitem")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's batching rules for leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return Tensor.make(out, (a, b), backward, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return Tensor.make(out, tensors, backward, "concat")


def pad2d(x: Tensor, pad: int) -> Tensor:
    """Zero-pad the last two axes by ``pad`` on every side."""
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(x.data, widths)

    def backward(g):
        return (g[..., pad:-pad, pad:-pad],)

    return Tensor.make(out, (x,), backward, "pad2d")


def elementwise(op: str, *operands, factor: float | None = None) -> Tensor:
    """Dispatch for the pointwise kernels by name.

    ``op`` is one of ``add``, ``mul``, ``relu``, ``sigmoid``, ``scale``.
    """
    if op == "add":
        a, b = operands
        return as_tensor(a) + b
    if op == "mul":
        a, b = operands
        return as_tensor(a) * b
    if op == "relu":
        return as_tensor(operands[0]).relu()
    if op == "sigmoid":
        return as_tensor(operands[0]).sigmoid()
    if op == "scale":
        if factor is None:
            raise ValueError("scale needs a factor")
        return as_tensor(operands[0]) * float(factor)
    raise ValueError(f"unknown elementwise op {op!r}")


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    n_samples: int = 20,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients with central differences.

    Draws ``n_samples`` coordinates uniformly over all entries of ``params``
    and returns the worst relative error, where the denominator is
    ``max(|analytic|, |numeric|, 1e-8)``.  ``f`` must be deterministic.
    """
    params = list(params)
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite loss in grad_check")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    flat_idx = rng.choice(int(sizes.sum()), size=min(n_samples, int(sizes.sum())), replace=False)
    offsets = np.cumsum(np.concatenate([[0], sizes]))
    worst = 0.0
    with no_grad():
        for k in flat_idx:
            pi = int(np.searchsorted(offsets, k, side="right") - 1)
            j = int(k - offsets[pi])
            flat = params[pi].data.flat
            orig = flat[j]
            flat[j] = orig + eps
            fp = f().item()
            flat[j] = orig - eps
            fm = f().item()
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite value during finite differencing")
            num = (fp - fm) / (2.0 * eps)
            ana = analytic[pi].reshape(-1)[j]
            err = abs(num - ana) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
