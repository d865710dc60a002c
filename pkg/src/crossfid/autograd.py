"""Minimal reverse-mode differentiable tensors on float64 numpy arrays.

Every forward op records what its backward pass needs; ``backward()`` on a
scalar populates ``.grad`` on every reachable tensor that requires it. The
engine is deliberately small: exactly the operators the fidelity networks
need, double precision throughout, no implicit randomness.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._ctx: _Context | None = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flags})"

    # -- operator sugar -------------------------------------------------------

    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        return Add.apply(self, self._wrap(other))

    def __radd__(self, other):
        return Add.apply(self._wrap(other), self)

    def __sub__(self, other):
        return Sub.apply(self, self._wrap(other))

    def __rsub__(self, other):
        return Sub.apply(self._wrap(other), self)

    def __mul__(self, other):
        return Mul.apply(self, self._wrap(other))

    def __rmul__(self, other):
        return Mul.apply(self._wrap(other), self)

    def __truediv__(self, other):
        return Div.apply(self, self._wrap(other))

    def __rtruediv__(self, other):
        return Div.apply(self._wrap(other), self)

    def __neg__(self):
        return Mul.apply(self, Tensor(-1.0))

    def __matmul__(self, other):
        return MatMul.apply(self, self._wrap(other))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self) -> "Tensor":
        return Transpose.apply(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    # -- autodiff -------------------------------------------------------------

    def backward(self) -> None:
        """Populate gradients of every tensor this scalar depends on."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.inputs:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            ctx = node._ctx
            if ctx is None:
                continue
            parent_grads = ctx.op.backward(ctx, g)
            for parent, pg in zip(ctx.inputs, parent_grads):
                if pg is None or (parent._ctx is None and not parent.requires_grad):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


class _Context:
    __slots__ = ("op", "inputs", "saved", "kwargs")

    def __init__(self, op, inputs, kwargs):
        self.op = op
        self.inputs = inputs
        self.kwargs = kwargs
        self.saved: tuple = ()


class _NoGrad:
    _depth = 0

    def __enter__(self):
        _NoGrad._depth += 1
        return self

    def __exit__(self, *exc):
        _NoGrad._depth -= 1
        return False


def no_grad() -> _NoGrad:
    """Context manager suppressing graph construction (inference mode)."""
    return _NoGrad()


class Op:
    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        ctx = _Context(cls, inputs, kwargs)
        out = cls.forward(ctx, *inputs, **kwargs)
        if _NoGrad._depth == 0 and any(
            t.requires_grad or t._ctx is not None for t in inputs
        ):
            out._ctx = ctx
        return out

    @staticmethod
    def forward(ctx, *inputs, **kwargs) -> Tensor:
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad: np.ndarray) -> tuple:
        raise NotImplementedError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the source shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Add(Op):
    @staticmethod
    def forward(ctx, a, b):
        return Tensor(a.data + b.data)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.inputs
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


class Sub(Op):
    @staticmethod
    def forward(ctx, a, b):
        return Tensor(a.data - b.data)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.inputs
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)


class Mul(Op):
    """Elementwise (Hadamard) product with numpy broadcasting."""

    @staticmethod
    def forward(ctx, a, b):
        return Tensor(a.data * b.data)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.inputs
        return (
            _unbroadcast(grad * b.data, a.shape),
            _unbroadcast(grad * a.data, b.shape),
        )


class Div(Op):
    @staticmethod
    def forward(ctx, a, b):
        return Tensor(a.data / b.data)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.inputs
        ga = grad / b.data
        gb = -grad * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class MatMul(Op):
    @staticmethod
    def forward(ctx, a, b):
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ValueError(
                f"matmul expects 2-D operands, got {a.shape} @ {b.shape}"
            )
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        return Tensor(a.data @ b.data)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.inputs
        return grad @ b.data.T, a.data.T @ grad


class Transpose(Op):
    @staticmethod
    def forward(ctx, a):
        if a.data.ndim != 2:
            raise ValueError(f"transpose expects a 2-D tensor, got {a.shape}")
        return Tensor(a.data.T.copy())

    @staticmethod
    def backward(ctx, grad):
        return (grad.T.copy(),)


class Reshape(Op):
    @staticmethod
    def forward(ctx, a, shape):
        return Tensor(a.data.reshape(shape))

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.inputs
        return (grad.reshape(a.shape),)


class Relu(Op):
    @staticmethod
    def forward(ctx, a):
        ctx.saved = (a.data > 0.0,)
        return Tensor(np.where(ctx.saved[0], a.data, 0.0))

    @staticmethod
    def backward(ctx, grad):
        (mask,) = ctx.saved
        return (np.where(mask, grad, 0.0),)


class Tanh(Op):
    @staticmethod
    def forward(ctx, a):
        out = np.tanh(a.data)
        ctx.saved = (out,)
        return Tensor(out)

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved
        return (grad * (1.0 - out * out),)


class Sqrt(Op):
    @staticmethod
    def forward(ctx, a):
        out = np.sqrt(a.data)
        ctx.saved = (out,)
        return Tensor(out)

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved
        return (grad / (2.0 * out),)


class Sum(Op):
    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        return Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.inputs
        axis, keepdims = ctx.kwargs["axis"], ctx.kwargs["keepdims"]
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape).copy(),)


class Mean(Op):
    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        return Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.inputs
        axis, keepdims = ctx.kwargs["axis"], ctx.kwargs["keepdims"]
        if axis is None:
            count = a.data.size
        else:
            count = a.shape[axis]
            if not keepdims:
                grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape).copy() / count,)


class MeanPool(Op):
    """Mean over one axis using an order-canonical summation.

    Values along the pooled axis are sorted before summing, so any
    permutation of that axis yields a bit-identical result; the gradient is
    the usual uniform 1/M broadcast (sorting does not change it).
    """

    @staticmethod
    def forward(ctx, a, axis):
        ordered = np.sort(a.data, axis=axis)
        return Tensor(ordered.sum(axis=axis) / a.shape[axis])

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.inputs
        axis = ctx.kwargs["axis"]
        grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape).copy() / a.shape[axis],)


class Softmax(Op):
    @staticmethod
    def forward(ctx, a, axis):
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)
        ctx.saved = (out,)
        return Tensor(out)

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved
        axis = ctx.kwargs["axis"]
        inner = (grad * out).sum(axis=axis, keepdims=True)
        return (out * (grad - inner),)


class Concat(Op):
    @staticmethod
    def forward(ctx, *tensors, axis):
        return Tensor(np.concatenate([t.data for t in tensors], axis=axis))

    @staticmethod
    def backward(ctx, grad):
        axis = ctx.kwargs["axis"]
        sizes = [t.shape[axis] for t in ctx.inputs]
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.ascontiguousarray(g) for g in np.split(grad, splits, axis=axis))


class RowSlice(Op):
    @staticmethod
    def forward(ctx, a, start, stop):
        return Tensor(a.data[start:stop].copy())

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.inputs
        start, stop = ctx.kwargs["start"], ctx.kwargs["stop"]
        out = np.zeros_like(a.data)
        out[start:stop] = grad
        return (out,)


def row_slice(x: Tensor, start: int, stop: int) -> Tensor:
    return RowSlice.apply(x, start=start, stop=stop)


# -- functional aliases -------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def sqrt(x: Tensor) -> Tensor:
    return Sqrt.apply(x)


def softmax(x: Tensor, axis: int) -> Tensor:
    return Softmax.apply(x, axis=axis)


def mean_pool(x: Tensor, axis: int) -> Tensor:
    return MeanPool.apply(x, axis=axis)


def concat(tensors, axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


COSINE_EPS = 1e-12


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine of two (B, D) tensors (or two vectors), epsilon-guarded
    in the denominator so near-zero norms stay finite. Exactly symmetric in
    its arguments."""
    axis = a.data.ndim - 1
    num = (a * b).sum(axis=axis)
    na = sqrt((a * a).sum(axis=axis))
    nb = sqrt((b * b).sum(axis=axis))
    return num / (na * nb + COSINE_EPS)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    diff = pred - target
    return (diff * diff).mean()


# -- finite-difference checking ----------------------------------------------


def gradient_check(fn, tensors, eps: float = 1e-5, rtol: float = 1e-4):
    """Compare reverse-mode gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the graph from the given leaf tensors on every call
    and return a scalar Tensor. Returns (max relative error, report string);
    the relative error uses |ad - fd| / max(|ad| + |fd|, 1e-6).
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    worst = 0.0
    worst_desc = "ok"
    for t_idx, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn().item()
            flat[i] = orig - eps
            lo = fn().item()
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * eps)
        ad = analytic[t_idx].reshape(-1)
        denom = np.maximum(np.abs(ad) + np.abs(fd), 1e-6)
        rel = np.abs(ad - fd) / denom
        i_max = int(np.argmax(rel))
        if rel[i_max] > worst:
            worst = float(rel[i_max])
            worst_desc = (
                f"tensor {t_idx} element {i_max}: ad={ad[i_max]:.6e} "
                f"fd={fd[i_max]:.6e} rel={rel[i_max]:.3e}"
            )
    return worst, worst_desc if worst > rtol else "ok"
