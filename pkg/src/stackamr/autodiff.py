"""A small reverse-mode autodiff kernel over float64 numpy arrays.

Only the operations the parser needs are provided. Each op records its
parents and a closure mapping the output gradient to parent gradients;
``Tensor.backward`` walks the recorded graph in reverse creation order and
accumulates into leaf tensors that require gradients.
"""
from __future__ import annotations

import itertools
import json
import os
import tempfile
from collections import OrderedDict
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

DTYPE = np.float64
_ids = itertools.count()
_recording = True


class ShapeMismatch(ValueError):
    def __init__(self, op, a, b):
        super().__init__(f"{op}: shape {tuple(a)} incompatible with shape {tuple(b)}")


class EmptyStack(IndexError):
    pass


@contextmanager
def no_grad():
    """Evaluate without recording the graph (decoding, evaluation)."""
    global _recording
    saved, _recording = _recording, False
    try:
        yield
    finally:
        _recording = saved


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name", "id")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name
        self.id = next(_ids)
        if requires_grad:
            self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape}>"

    def zero_grad(self):
        if self.requires_grad:
            self.grad[...] = 0.0

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf's ``grad``."""
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.value)
        order = _topological(self)
        grads: Dict[int, np.ndarray] = {self.id: np.asarray(grad, dtype=DTYPE)}
        for node in order:
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad += g
            if node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg


def _topological(root: Tensor) -> List[Tensor]:
    seen = set()
    nodes = []
    todo = [root]
    while todo:
        t = todo.pop()
        if t.id in seen:
            continue
        seen.add(t.id)
        nodes.append(t)
        todo.extend(p for p in t.parents if p.id not in seen)
    nodes.sort(key=lambda t: -t.id)
    return nodes


def constant(value) -> Tensor:
    return Tensor(value)


def _make(value, parents, fn) -> Tensor:
    if _recording and any(p.requires_grad or p.backward_fn is not None for p in parents):
        return Tensor(value, parents, fn)
    return Tensor(value)


# --------------------------------------------------------------------------
# operations


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch("add", a.shape, b.shape)
    return _make(a.value + b.value, (a, b), lambda g: (g, g))


def add_many(xs: Sequence[Tensor]) -> Tensor:
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise ShapeMismatch("add_many", shape, x.shape)
    return _make(np.sum([x.value for x in xs], axis=0), tuple(xs), lambda g: (g,) * len(xs))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch("sub", a.shape, b.shape)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch("mul", a.shape, b.shape)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, k: float) -> Tensor:
    return _make(a.value * k, (a,), lambda g: (g * k,))


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.sum(a.value), (a,), lambda g: (np.full(shape, g, dtype=DTYPE),))


def mean(xs: Sequence[Tensor]) -> Tensor:
    if len(xs) == 1:
        return xs[0]
    return scale(add_many(xs), 1.0 / len(xs))


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch("dot", a.shape, b.shape)
    av, bv = a.value, b.value
    return _make(np.dot(av, bv), (a, b), lambda g: (g * bv, g * av))


def matvec(W: Tensor, x: Tensor) -> Tensor:
    if W.value.ndim != 2 or W.shape[1] != x.shape[0]:
        raise ShapeMismatch("matvec", W.shape, x.shape)
    Wv, xv = W.value, x.value
    return _make(Wv @ xv, (W, x), lambda g: (np.outer(g, xv), Wv.T @ g))


def vecmat(x: Tensor, W: Tensor) -> Tensor:
    """``x^T W`` for a vector ``x`` and matrix ``W``."""
    if W.value.ndim != 2 or W.shape[0] != x.shape[0]:
        raise ShapeMismatch("vecmat", x.shape, W.shape)
    Wv, xv = W.value, x.value
    return _make(xv @ Wv, (x, W), lambda g: (Wv @ g, np.outer(xv, g)))


def affine(W: Tensor, x: Tensor, b: Tensor) -> Tensor:
    if W.value.ndim != 2 or W.shape[1] != x.shape[0]:
        raise ShapeMismatch("affine", W.shape, x.shape)
    if b.shape != (W.shape[0],):
        raise ShapeMismatch("affine", W.shape, b.shape)
    Wv, xv = W.value, x.value
    return _make(Wv @ xv + b.value, (W, x, b), lambda g: (np.outer(g, xv), Wv.T @ g, g))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.value))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    on = x.value > 0
    return _make(np.where(on, x.value, 0.0), (x,), lambda g: (g * on,))


def concat(xs: Sequence[Tensor]) -> Tensor:
    xs = list(xs)
    sizes = [x.shape[0] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.value for x in xs]), tuple(xs),
                 lambda g: tuple(np.split(g, cuts)))


def take(x: Tensor, start: int, stop: int) -> Tensor:
    n = x.shape[0]

    def back(g):
        full = np.zeros(n, dtype=DTYPE)
        full[start:stop] = g
        return (full,)

    return _make(x.value[start:stop], (x,), back)


def rows(xs: Sequence[Tensor]) -> Tensor:
    """Stack equal-width vectors into a matrix."""
    xs = list(xs)
    for x in xs[1:]:
        if x.shape != xs[0].shape:
            raise ShapeMismatch("rows", xs[0].shape, x.shape)
    return _make(np.stack([x.value for x in xs]), tuple(xs), lambda g: tuple(g))


def lookup(E: Tensor, index: int) -> Tensor:
    """Row ``index`` of an embedding matrix."""
    shape = E.shape

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _make(E.value[index], (E,), back)


def softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax, optionally restricted to entries where ``mask`` is true."""
    v = x.value
    if mask is not None:
        v = np.where(mask, v, -np.inf)
    z = v - np.max(v)
    e = np.exp(z)
    y = e / np.sum(e)

    def back(g):
        return (y * (g - np.dot(g, y)),)

    return _make(y, (x,), back)


def log_softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Log-probabilities; masked-out entries are ``-inf`` and get no gradient."""
    v = x.value
    if mask is not None:
        v = np.where(mask, v, -np.inf)
    z = v - np.max(v)
    lse = np.log(np.sum(np.exp(z)))
    y = z - lse
    p = np.exp(y)

    def back(g):
        g = np.where(np.isfinite(y), g, 0.0)
        return (g - p * np.sum(g),)

    return _make(y, (x,), back)


def pick(x: Tensor, index: int) -> Tensor:
    n = x.shape[0]

    def back(g):
        full = np.zeros(n, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _make(x.value[index], (x,), back)


def lstm_cell(W: Tensor, b: Tensor, x: Tensor, state: Tensor) -> Tensor:
    """One LSTM step on the packed state ``[h; c]``; returns the new ``[h; c]``.

    Gates are ordered input, forget, output, candidate; ``W`` has shape
    ``(4H, input + H)``.
    """
    H = state.shape[0] // 2
    if W.shape != (4 * H, x.shape[0] + H):
        raise ShapeMismatch("lstm_cell", W.shape, (4 * H, x.shape[0] + H))
    xv, h, c = x.value, state.value[:H], state.value[H:]
    inp = np.concatenate([xv, h])
    z = W.value @ inp + b.value
    i = 1.0 / (1.0 + np.exp(-z[:H]))
    f = 1.0 / (1.0 + np.exp(-z[H:2 * H]))
    o = 1.0 / (1.0 + np.exp(-z[2 * H:3 * H]))
    u = np.tanh(z[3 * H:])
    c2 = f * c + i * u
    tc = np.tanh(c2)
    h2 = o * tc
    Wv = W.value
    nx = xv.shape[0]

    def back(g):
        gh, gc = g[:H], g[H:]
        go = gh * tc
        gc2 = gc + gh * o * (1.0 - tc * tc)
        gi = gc2 * u
        gf = gc2 * c
        gu = gc2 * i
        gz = np.concatenate([gi * i * (1 - i), gf * f * (1 - f), go * o * (1 - o), gu * (1 - u * u)])
        ginp = Wv.T @ gz
        gstate = np.concatenate([ginp[nx:], gc2 * f])
        return np.outer(gz, inp), gz, ginp[:nx], gstate

    return _make(np.concatenate([h2, c2]), (W, b, x, state), back)


# --------------------------------------------------------------------------
# parameters


class ParamStore:
    """Named trainable tensors plus their optimizer state."""

    def __init__(self, seed: int = 0):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.rng = np.random.default_rng(seed)

    def add(self, name: str, shape: Tuple[int, ...], init: str = "glorot") -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} registered twice")
        if init == "zeros":
            value = np.zeros(shape)
        elif init == "embedding":
            value = self.rng.uniform(-0.1, 0.1, size=shape)
        elif init == "glorot":
            fan_out, fan_in = shape[0], shape[-1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            value = self.rng.uniform(-limit, limit, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(t.grad ** 2) for t in self.params.values())))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.params.items()}

    def load_state_dict(self, values: Dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in values:
                raise KeyError(f"checkpoint lacks parameter {name!r}")
            v = np.asarray(values[name], dtype=DTYPE)
            if v.shape != t.value.shape:
                raise ShapeMismatch(f"load {name}", t.value.shape, v.shape)
            t.value[...] = v


class Sgd:
    """Plain SGD with ``lr / (1 + decay * epoch)`` and global-norm clipping."""

    def __init__(self, store: ParamStore, lr: float = 0.1, decay: float = 0.05,
                 clip: Optional[float] = 5.0):
        self.store, self.lr, self.decay, self.clip = store, lr, decay, clip
        self.epoch = 0

    def rate(self) -> float:
        return self.lr / (1.0 + self.decay * self.epoch)

    def _clip_factor(self) -> float:
        if not self.clip:
            return 1.0
        norm = self.store.grad_norm()
        return self.clip / norm if norm > self.clip else 1.0

    def step(self) -> None:
        k = self.rate() * self._clip_factor()
        for t in self.store.params.values():
            t.value -= k * t.grad
        self.store.zero_grad()


class Adam(Sgd):
    def __init__(self, store: ParamStore, lr: float = 1e-3, decay: float = 0.0,
                 clip: Optional[float] = 5.0, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(store, lr, decay, clip)
        self.betas, self.eps, self.t = betas, eps, 0
        self.m = {k: np.zeros_like(p.value) for k, p in store.params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in store.params.items()}

    def step(self) -> None:
        b1, b2 = self.betas
        self.t += 1
        k = self._clip_factor()
        lr = self.rate() * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for name, p in self.store.params.items():
            g = p.grad * k
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            p.value -= lr * self.m[name] / (np.sqrt(self.v[name]) + self.eps)
        self.store.zero_grad()


def make_optimizer(name: str, store: ParamStore, lr: float, decay: float, clip: Optional[float]):
    if name == "sgd":
        return Sgd(store, lr, decay, clip)
    if name == "adam":
        return Adam(store, lr, decay, clip)
    raise ValueError(f"unknown optimizer {name!r}")


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str, store: ParamStore, config: dict) -> None:
    """Write ``(name, shape, values)`` records plus a JSON config, atomically."""
    arrays = {f"param:{k}": v for k, v in store.state_dict().items()}
    arrays["config"] = np.frombuffer(json.dumps(config, sort_keys=True).encode("utf-8"),
                                     dtype=np.uint8)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as data:
        config = json.loads(bytes(data["config"]).decode("utf-8"))
        values = {k[len("param:"):]: data[k] for k in data.files if k.startswith("param:")}
    return values, config


# --------------------------------------------------------------------------
# stack LSTM


class StackNode:
    """Immutable stack cell; ``parent`` is the stack below."""

    __slots__ = ("state", "parent", "depth")

    def __init__(self, state: Tensor, parent: Optional["StackNode"]):
        self.state = state
        self.parent = parent
        self.depth = 0 if parent is None else parent.depth + 1


class StackLstm:
    """LSTM over a stack: push runs one cell step on the current top, pop
    returns to the cell below, so the summary always reflects the contents."""

    def __init__(self, store: ParamStore, name: str, input_dim: int, hidden_dim: int):
        self.hidden = hidden_dim
        self.W = store.add(f"{name}.W", (4 * hidden_dim, input_dim + hidden_dim))
        self.b = store.add(f"{name}.b", (4 * hidden_dim,), "zeros")
        self.init = store.add(f"{name}.init", (2 * hidden_dim,), "zeros")

    def empty(self) -> StackNode:
        return StackNode(self.init, None)

    def push(self, node: StackNode, x: Tensor) -> StackNode:
        return StackNode(lstm_cell(self.W, self.b, x, node.state), node)

    @staticmethod
    def pop(node: StackNode) -> StackNode:
        if node.parent is None:
            raise EmptyStack("pop on an empty stack")
        return node.parent

    def summary(self, node: StackNode) -> Tensor:
        return take(node.state, 0, self.hidden)


class Lstm(StackLstm):
    """Plain left-to-right LSTM (an append-only stack)."""

    def run(self, xs: Iterable[Tensor]) -> List[Tensor]:
        node = self.empty()
        out = []
        for x in xs:
            node = self.push(node, x)
            out.append(self.summary(node))
        return out


# --------------------------------------------------------------------------
# finite-difference checks


def numeric_gradient(f: Callable[[], Tensor], t: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``t.value``."""
    grad = np.zeros_like(t.value)
    flat = t.value.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = float(f().value)
            flat[k] = old - h
            down = float(f().value)
            flat[k] = old
            gflat[k] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over entries."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradient_check(f: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-4) -> float:
    """Max relative error between backprop and central differences."""
    for t in tensors:
        if t.grad is None:
            t.grad = np.zeros_like(t.value)
        t.grad[...] = 0.0
        t.requires_grad = True
    f().backward()
    worst = 0.0
    for t in tensors:
        worst = max(worst, relative_error(t.grad.copy(), numeric_gradient(f, t, h)))
    return worst
