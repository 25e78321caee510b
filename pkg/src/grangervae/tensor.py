"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous float64 ndarray. Every operation on tensors
appends a node to the implicit tape (the ``_parents``/``_vjp`` links), which
is rebuilt from scratch on every forward pass. ``backward`` on a scalar loss
walks the tape in reverse topological order and accumulates gradients into
every reachable tensor with ``requires_grad``.

Also here: a central finite-difference gradient checker, an Adam optimizer,
gradient clipping, and a binary checkpoint format for named parameter blocks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import special as _sp

from .errors import ConfigurationError, ContractViolation, TrainingError

__all__ = [
    "Tensor", "astensor", "custom_op",
    "matmul", "concat", "relu", "tanh", "sigmoid", "softplus", "softmax",
    "log", "exp", "sqrt", "square", "clamp", "clamp_min", "gammaln",
    "digamma", "dropout",
    "backward", "collect_grads", "zero_grads",
    "finite_diff_check", "FiniteDiffReport", "BlockCheck",
    "Adam", "clip_grad_norm",
    "save_checkpoint", "load_checkpoint", "CHECKPOINT_VERSION",
]


def _asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """Float64 array plus the tape links needed for reverse-mode AD."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp",
                 "_grad_owned")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None  # upstream ndarray -> tuple of parent gradients
        self._grad_owned = False

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def broadcast_to(self, shape):
        return broadcast_to(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_reduce(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_reduce(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, vjp, name=None) -> Tensor:
    out = Tensor(data, name=name)
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def custom_op(data, parents, vjp, name=None) -> Tensor:
    """Build a tape node with a caller-supplied vector-Jacobian product.

    ``vjp(upstream)`` must return one gradient array (or None) per parent.
    """
    return _node(data, [astensor(p) for p in parents], vjp, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic primitives ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), vjp, "multiply")


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out, (a, b), vjp, "divide")


def neg(a) -> Tensor:
    a = astensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "negate")


def power(a, exponent: float) -> Tensor:
    a = astensor(a)
    e = float(exponent)
    out = a.data ** e

    def vjp(g):
        return (g * e * a.data ** (e - 1.0),)

    return _node(out, (a,), vjp, "power")


def square(a) -> Tensor:
    a = astensor(a)
    return _node(a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,), "square")


def sqrt(a) -> Tensor:
    a = astensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return _node(out, (a,), vjp, "sqrt")


def matmul(a, b) -> Tensor:
    """``a @ b`` with ``a`` of shape [..., k] and ``b`` a weight of rank 1 or 2."""
    a, b = astensor(a), astensor(b)
    bd = b.data
    vector_rhs = bd.ndim == 1
    if vector_rhs:
        bd = bd[:, None]
    if bd.ndim != 2:
        raise ConfigurationError(
            f"matmul: right operand must be rank 1 or 2, got shape {b.data.shape}")
    if a.data.ndim < 1 or a.data.shape[-1] != bd.shape[0]:
        raise ConfigurationError(
            f"matmul: inner dimensions disagree, {a.data.shape} @ {b.data.shape}")
    out = a.data @ bd
    if vector_rhs:
        out = out[..., 0]

    def vjp(g):
        g2 = g[..., None] if vector_rhs else g
        ga = g2 @ bd.T
        flat_a = a.data.reshape(-1, a.data.shape[-1])
        flat_g = g2.reshape(-1, bd.shape[1])
        gb = flat_a.T @ flat_g
        if vector_rhs:
            gb = gb[:, 0]
        return ga, gb

    return _node(out, (a, b), vjp, "matmul")


# -- shape manipulation ------------------------------------------------------

def reshape(a, *shape) -> Tensor:
    a = astensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = a.data.reshape(shape)
    old = a.data.shape
    return _node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes) -> Tensor:
    a = astensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,),
                 lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = astensor(a)
    shape = tuple(shape)
    out = np.broadcast_to(a.data, shape)
    old = a.data.shape
    return _node(np.ascontiguousarray(out), (a,),
                 lambda g: (_unbroadcast(g, old),), "broadcast")


def concat(parts, axis: int = -1) -> Tensor:
    parts = [astensor(p) for p in parts]
    shapes = [p.data.shape for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ConfigurationError(f"concat: incompatible shapes {shapes}") from exc
    sizes = [s[axis if axis >= 0 else len(s) + axis] for s in shapes]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(parts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _node(out, parts, vjp, "concat")


def take(a, idx) -> Tensor:
    """Basic slicing/indexing; the gradient scatter-adds into the source."""
    a = astensor(a)
    out = a.data[idx]
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _node(np.array(out, copy=True), (a,), vjp, "slice")


def sum_reduce(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def vjp(g):
        # read-only broadcast views are fine: accumulation never mutates an
        # adopted gradient in place
        if axis is None:
            return (np.broadcast_to(g, shape),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _node(out, (a,), vjp, "sum")


def mean_reduce(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return sum_reduce(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


# -- nonlinearities ----------------------------------------------------------

def relu(a) -> Tensor:
    a = astensor(a)
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _node(out, (a,), vjp, "relu")


def tanh(a) -> Tensor:
    a = astensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = astensor(a)
    out = _sp.expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = astensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = _sp.expit(x)
    return _node(out, (a,), lambda g: (g * sig,), "softplus")


def softmax(a, axis: int = -1) -> Tensor:
    a = astensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (a,), vjp, "softmax")


def log(a) -> Tensor:
    a = astensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a) -> Tensor:
    a = astensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = astensor(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def vjp(g):
        return (g * inside,)

    return _node(out, (a,), vjp, "clamp")


def clamp_min(a, lo: float) -> Tensor:
    a = astensor(a)
    out = np.maximum(a.data, lo)
    inside = a.data > lo

    def vjp(g):
        return (g * inside,)

    return _node(out, (a,), vjp, "clamp_min")


def gammaln(a) -> Tensor:
    a = astensor(a)
    return _node(_sp.gammaln(a.data), (a,),
                 lambda g: (g * _sp.digamma(a.data),), "gammaln")


def digamma(a) -> Tensor:
    a = astensor(a)
    return _node(_sp.digamma(a.data), (a,),
                 lambda g: (g * _sp.polygamma(1, a.data),), "digamma")


def dropout(a, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    a = astensor(a)
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape, dtype=np.float32) >= rate) / (1.0 - rate)
    return mul(a, Tensor(keep))


def relu_dropout(a, rate: float, rng: np.random.Generator,
                 training: bool) -> Tensor:
    """Fused relu followed by inverted dropout (one tape node)."""
    a = astensor(a)
    if not training or rate <= 0.0:
        return relu(a)
    keep = (rng.random(a.data.shape, dtype=np.float32) >= rate) / (1.0 - rate)
    factor = keep * (a.data > 0)
    out = np.maximum(a.data, 0.0) * keep

    def vjp(g):
        return (g * factor,)

    return _node(out, (a,), vjp, "relu_dropout")


# -- backward pass -----------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` for every reachable node."""
    if loss.data.size != 1:
        raise ContractViolation(
            f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    loss._grad_owned = True
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            # First contribution is adopted as-is (it may be a view of an
            # upstream buffer); accumulation copies before mutating in place.
            if parent.grad is None:
                parent.grad = g
                parent._grad_owned = False
            elif parent._grad_owned:
                parent.grad += g
            else:
                parent.grad = parent.grad + g
                parent._grad_owned = True


def zero_grads(params: dict[str, Tensor]) -> None:
    for t in params.values():
        t.grad = None
        t._grad_owned = False


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients keyed like params; parameters the loss never reached get zeros."""
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in params.items()}


# -- finite-difference checking ----------------------------------------------

@dataclass
class BlockCheck:
    name: str
    max_rel_err: float
    max_abs_err: float
    checked: int
    passed: bool


@dataclass
class FiniteDiffReport:
    blocks: list[BlockCheck] = field(default_factory=list)
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    @property
    def max_rel_err(self) -> float:
        return max((b.max_rel_err for b in self.blocks), default=0.0)


def finite_diff_check(fn, params: dict[str, Tensor], step: float = 1e-5,
                      tolerance: float = 1e-5, max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> FiniteDiffReport:
    """Compare reverse-mode gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the forward pass from the current parameter values and
    return a scalar Tensor; any randomness inside must be frozen. When a block
    has more than ``max_coords`` entries, a random subset is probed.
    """
    if step <= 0:
        raise ConfigurationError("finite_diff_check: step must be positive")
    rng = rng or np.random.default_rng(0)
    zero_grads(params)
    loss = fn()
    backward(loss)
    analytic = collect_grads(params)

    report = FiniteDiffReport(tolerance=tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n)
        if max_coords is not None and n > max_coords:
            idx = rng.choice(n, size=max_coords, replace=False)
        max_rel = 0.0
        max_abs = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            ad = analytic[name].reshape(-1)[i]
            abs_err = abs(ad - fd)
            rel = abs_err / max(abs(ad), abs(fd), 1e-10)
            max_rel = max(max_rel, rel)
            max_abs = max(max_abs, abs_err)
        report.blocks.append(BlockCheck(name, max_rel, max_abs, len(idx),
                                        max_rel < tolerance))
    return report


# -- optimizer ----------------------------------------------------------------

class Adam:
    """First-order optimizer with bias-corrected moment estimates."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so the global L2 norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        scaled: set[int] = set()  # a buffer may back more than one entry
        for g in grads.values():
            if id(g) not in scaled:
                g *= scale
                scaled.add(id(g))
    return norm


# -- checkpoint I/O ------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    """Write named parameter blocks; format round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(bytes([CHECKPOINT_VERSION]))
        for name, t in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.data.ndim))
            for extent in t.data.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob:
        raise ConfigurationError(f"checkpoint {path} is empty")
    if blob[0] != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"checkpoint version {blob[0]} unsupported (expected {CHECKPOINT_VERSION})")
    out: dict[str, np.ndarray] = {}
    pos = 1
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from("<" + "Q" * rank, blob, pos)
        pos += 8 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).copy()
        pos += 8 * count
        out[name] = arr.reshape(shape)
    return out
