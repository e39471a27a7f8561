"""Dense float64 tensors, a reverse-mode tape, and plain SGD steps.

Operations record themselves on the active :class:`Tape` (entered with a
``with`` block). :func:`backward` replays the tape in reverse and returns
gradients keyed like the :class:`ModelParams` that were differentiated.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "_tape")

    def __init__(self, data, *, _check: bool = True):
        arr = np.array(data, dtype=np.float64, order="C", copy=True) if _check else data
        if _check and arr.ndim == 0:
            arr = arr.reshape(())
        if _check and not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains NaN or Inf")
        self.data = arr
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


class _Node:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


_ACTIVE: list["Tape"] = []


class Tape:
    """Append-only record of taped operations."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


def _emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, vjp: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    t = Tensor(out, _check=False)
    if _ACTIVE:
        tape = _ACTIVE[-1]
        tape.nodes.append(_Node(op, inputs, t, vjp))
        t._tape = tape
    return t


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, *ts: Tensor) -> None:
    s = ts[0].shape
    for t in ts[1:]:
        if t.shape != s:
            raise DimensionError(f"{op}: shape mismatch {s} vs {t.shape}")


# -- operations -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _emit("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _emit("mul", (a, b), A * B, lambda g: (g * B, g * A))


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _emit("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _emit("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *args: Tensor) -> Tensor:
    if op in _UNARY and len(args) == 1:
        return _UNARY[op](*args)
    if op in _BINARY and len(args) == 2:
        return _BINARY[op](*args)
    raise ContractError(f"elementwise: unknown op {op!r} for {len(args)} operand(s)")


def scale(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)
    return _emit("scale", (x,), x.data * c, lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a bias vector to every row of a 2-D tensor."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: {x.shape} with bias {b.shape}")
    return _emit("add_bias", (x, b), x.data + b.data, lambda g: (g, g.sum(axis=0)))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _emit("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n, shape = x.size, x.shape
    return _emit("mean", (x,), np.array(x.data.sum() / n), lambda g: (np.full(shape, g / n),))


def total(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return _emit("sum", (x,), np.array(x.data.sum()), lambda g: (np.full(shape, g * 1.0),))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    _same_shape("mse_loss", pred, target)
    d = pred.data - target.data
    n = d.size
    return _emit(
        "mse_loss",
        (pred, target),
        np.array(np.sum(d * d) / n),
        lambda g: (g * 2.0 * d / n, -g * 2.0 * d / n),
    )


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (n x K) against integer labels."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = labels.size
    rows = np.arange(n)

    def vjp(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (g * d / n,)

    return _emit("cross_entropy", (logits,), np.array(-logp[rows, labels].sum() / n), vjp)


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- parameters -------------------------------------------------------------


class ModelParams(Mapping[str, Tensor]):
    """Ordered name -> Tensor collection.

    The group of an entry is the prefix before the first dot (``enc`` for the
    encoder, ``dec`` for the decoder).
    """

    def __init__(self, entries: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._entries: dict[str, Tensor] = {k: _as_tensor(v) for k, v in items}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        return cls({k: Tensor(v) for k, v in arrays.items()})

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}:{tuple(v.shape)}" for k, v in self._entries.items())
        return f"ModelParams({inner})"

    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def names_in(self, group: str) -> list[str]:
        return [k for k in self._entries if self.group_of(k) == group]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._entries.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._entries.items()}

    def zeros_like(self) -> "ModelParams":
        return ModelParams({k: Tensor(np.zeros(v.shape)) for k, v in self._entries.items()})

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ModelParams":
        return ModelParams({k: Tensor(fn(v.data)) for k, v in self._entries.items()})

    def flat(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([v.data.reshape(-1) for v in self._entries.values()])

    def equal(self, other: "ModelParams") -> bool:
        """Bitwise equality of names, shapes and values."""
        if list(self) != list(other):
            return False
        return all(
            self[k].shape == other[k].shape and self[k].data.tobytes() == other[k].data.tobytes()
            for k in self
        )


Gradients = ModelParams


def check_compatible(a: ModelParams, b: ModelParams, what: str = "params") -> None:
    if list(a) != list(b):
        raise ContractError(f"{what}: key mismatch {list(a)} vs {list(b)}")
    for k in a:
        if a[k].shape != b[k].shape:
            raise ContractError(f"{what}: shape mismatch for {k!r}: {a[k].shape} vs {b[k].shape}")


def backward(loss: Tensor, params: ModelParams, tape: Tape | None = None) -> Gradients:
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = tape or loss._tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    if tape is not None:
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
    out = {}
    for name, p in params.items():
        g = grads.get(id(p))
        out[name] = Tensor(np.zeros(p.shape) if g is None else np.reshape(g, p.shape))
    return ModelParams(out)


def value_and_grad(
    fn: Callable[[ModelParams], Tensor], params: ModelParams
) -> tuple[float, Gradients]:
    with Tape() as tape:
        loss = fn(params)
    return loss.item(), backward(loss, params, tape)


def step(
    params: ModelParams,
    grads: Gradients,
    eta: float,
    direction: str = "descent",
    frozen: Iterable[str] = (),
) -> ModelParams:
    """One plain SGD update; ``ascent`` adds ``eta * grad``, ``descent`` subtracts it."""
    check_compatible(params, grads, "step")
    if not eta > 0:
        raise ContractError(f"step: learning rate must be > 0, got {eta}")
    if direction not in ("descent", "ascent"):
        raise ContractError(f"step: unknown direction {direction!r}")
    frozen = set(frozen)
    out = {}
    for k, p in params.items():
        if k in frozen:
            out[k] = p
            continue
        delta = eta * grads[k].data
        new = p.data + delta if direction == "ascent" else p.data - delta
        if not np.all(np.isfinite(new)):
            raise NonFiniteError(f"step produced non-finite values in {k!r}")
        out[k] = Tensor(new, _check=False)
    return ModelParams(out)


def grad_global_norm(grads: Gradients) -> float:
    return float(math.sqrt(float(np.dot(grads.flat(), grads.flat()))))


def param_l2_distance(a: ModelParams, b: ModelParams) -> float:
    check_compatible(a, b, "param_l2_distance")
    d = a.flat() - b.flat()
    return float(math.sqrt(float(np.dot(d, d))))


def clip_by_global_norm(grads: Gradients, ceiling: float) -> tuple[Gradients, bool]:
    norm = grad_global_norm(grads)
    if norm <= ceiling:
        return grads, False
    c = ceiling / norm
    return grads.map(lambda g: g * c), True
