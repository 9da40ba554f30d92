"""Dense float64 matrix math with a small reverse-mode differentiation engine.

The engine is a single-use tape: every operation allocates a `Node` holding
its forward value and a closure that maps the upstream gradient onto the
operand gradients. Calling :func:`grad_scalar` on a scalar-valued expression
runs one reverse sweep and returns a gradient per named parameter.

Second-order support is deliberately narrow. The only place a derivative of
a derivative is needed is the critic's Lipschitz penalty, and there the
input gradient of an affine/leaky-rectifier/tanh stack has a closed form
that can itself be written with first-order tape operations
(:func:`affine_stack_with_input_gradient`). One ordinary reverse sweep over
that expression yields the penalty's parameter gradients, so no general
higher-order machinery exists here.

Conventions:
  * every value is a float64 ndarray (scalars are 0-d arrays);
  * the leaky rectifier uses the negative-slope branch at exactly 0, so
    tie-breaking is deterministic;
  * vector-norm gradients below 1e-12 are substituted with zero and logged
    through :mod:`genzsl.events` instead of dividing by zero.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import events
from .errors import DimensionError, NumericOverflowError, ValidationError

NORM_EPS = 1e-12


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# tape nodes


class Node:
    """One tape entry: a forward value plus the reverse-map to its parents."""

    __slots__ = ("value", "parents", "vjp", "grad", "const")

    def __init__(self, value, parents=(), vjp=None, const=False):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.const = const

    @property
    def shape(self):
        return self.value.shape

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

    def __neg__(self):
        return neg(self)


def constant(x) -> Node:
    return Node(as_tensor(x), const=True)


def leaf(x) -> Node:
    """A differentiable leaf (parameter); backward() leaves its grad set."""
    return Node(as_tensor(x))


def _lift(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(root: Node) -> None:
    """Reverse sweep seeding d(root)/d(root) = 1; accumulates `.grad` on leaves."""
    topo: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and not p.const:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        if node.vjp is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or parent.const:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# primitive operations


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    return Node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    return Node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def neg(a) -> Node:
    a = _lift(a)
    return Node(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    return Node(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    return Node(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def transpose(a) -> Node:
    a = _lift(a)
    return Node(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Node:
    a = _lift(a)
    old = a.value.shape
    return Node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat_cols(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    split = a.value.shape[1]
    return Node(
        np.hstack((a.value, b.value)),
        (a, b),
        lambda g: (g[:, :split], g[:, split:]),
    )


def vsum(a, axis=None) -> Node:
    a = _lift(a)
    shape = a.value.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Node(a.value.sum(axis=axis), (a,), vjp)


def vmean(a, axis=None) -> Node:
    a = _lift(a)
    shape = a.value.shape
    count = a.value.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), shape).copy(),)

    return Node(np.asarray(a.value.mean(axis=axis)), (a,), vjp)


def square(a) -> Node:
    a = _lift(a)
    return Node(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def exp(a) -> Node:
    a = _lift(a)
    out = np.exp(a.value)
    return Node(out, (a,), lambda g: (g * out,))


def log(a) -> Node:
    a = _lift(a)
    return Node(np.log(a.value), (a,), lambda g: (g / a.value,))


def tanh(a) -> Node:
    a = _lift(a)
    out = np.tanh(a.value)
    return Node(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a) -> Node:
    a = _lift(a)
    out = np.logaddexp(0.0, a.value)
    sig = 1.0 / (1.0 + np.exp(-a.value))
    return Node(out, (a,), lambda g: (g * sig,))


def leaky_relu(a, slope: float = 0.2) -> Node:
    a = _lift(a)
    gate = np.where(a.value > 0.0, 1.0, slope)
    return Node(a.value * gate, (a,), lambda g: (g * gate,))


def leaky_gate(a, slope: float = 0.2) -> Node:
    """The rectifier's derivative factor. Piecewise constant, so its own
    derivative is zero almost everywhere and the vjp drops the path."""
    a = _lift(a)
    return Node(np.where(a.value > 0.0, 1.0, slope), (a,), lambda g: (None,))


def softmax_rows(logits) -> Node:
    logits = _lift(logits)
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Node(s, (logits,), vjp)


def cross_entropy_rows(logits, onehot) -> Node:
    """Per-row negative log-likelihood of the one-hot targets, fused with the
    softmax for stability. Returns a length-B vector."""
    logits, onehot = _lift(logits), _lift(onehot)
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1)) + logits.value.max(axis=1)
    nll = lse - (logits.value * onehot.value).sum(axis=1)
    soft = np.exp(logits.value - lse[:, None])

    def vjp(g):
        return ((soft - onehot.value) * g[:, None], None)

    return Node(nll, (logits, onehot), vjp)


def row_norm(a) -> Node:
    """Euclidean norm of each row. Rows with norm below 1e-12 get a zero
    gradient (the norm is not differentiable at 0) and raise a degenerate
    event; their forward value passes through unchanged."""
    a = _lift(a)
    n = np.sqrt((a.value * a.value).sum(axis=1))
    degenerate = n < NORM_EPS
    if degenerate.any():
        events.record("degenerate_gradient_penalty")
    safe = np.where(degenerate, 1.0, n)

    def vjp(g):
        scale = np.where(degenerate, 0.0, g / safe)
        return (scale[:, None] * a.value,)

    return Node(n, (a,), vjp)


def row_norm_inv(a) -> Node:
    """1 / row norm, with degenerate rows mapped to 0 (and logged)."""
    a = _lift(a)
    n = np.sqrt((a.value * a.value).sum(axis=1))
    degenerate = n < NORM_EPS
    if degenerate.any():
        events.record("degenerate_zero_norm")
    inv = np.where(degenerate, 0.0, 1.0 / np.where(degenerate, 1.0, n))

    def vjp(g):
        scale = np.where(degenerate, 0.0, g * inv**3)
        return (-scale[:, None] * a.value,)

    return Node(inv, (a,), vjp)


def minmax_normalize_node(values) -> Node:
    """Batch min-max rescaling to [0, 1]; a constant batch maps to zeros.

    Subgradients at the min/max positions route through the first attaining
    index so repeated evaluation is deterministic.
    """
    v = _lift(values)
    x = v.value
    i_min = int(np.argmin(x))
    i_max = int(np.argmax(x))
    span = x[i_max] - x[i_min]
    if span < 1e-12:
        return Node(np.zeros_like(x), (v,), lambda g: (np.zeros_like(x),))
    out = (x - x[i_min]) / span

    def vjp(g):
        gx = g / span
        gx_min = gx.copy()
        gx_min[i_min] -= gx.sum()
        corr = (g * out).sum() / span
        gx_min[i_max] -= corr
        gx_min[i_min] += corr
        return (gx_min,)

    return Node(out, (v,), vjp)


# ---------------------------------------------------------------------------
# affine stacks and the Lipschitz penalty

# A stack layer is (W, b, activation) with activation in
# {"linear", "leaky", "tanh"}; W and b may be Nodes or plain arrays.

_ACTIVATIONS = ("linear", "leaky", "tanh")


def affine_stack(x, layers, slope: float = 0.2) -> Node:
    """Forward pass of a fully connected stack."""
    h = _lift(x)
    for W, b, act in layers:
        z = add(matmul(h, _lift(W)), _lift(b))
        if act == "leaky":
            h = leaky_relu(z, slope)
        elif act == "tanh":
            h = tanh(z)
        elif act == "linear":
            h = z
        else:
            raise ValidationError(f"unknown activation {act!r}")
    return h


def affine_stack_with_input_gradient(x, layers, slope: float = 0.2):
    """Forward pass plus the input gradient of a scalar-headed stack,
    both as tape expressions.

    The last layer must be linear with output width 1. The returned
    gradient node has the shape of `x`, and because it is built from
    ordinary tape operations a reverse sweep over anything derived from it
    (such as the Lipschitz penalty) yields correct parameter gradients.
    """
    x = _lift(x)
    if not layers:
        raise ValidationError("empty layer stack")
    if layers[-1][2] != "linear":
        raise ValidationError("critic head must be linear")

    h = x
    acts = []  # (pre-linearity input node, activation output node, W node, act)
    for W, b, act in layers:
        Wn, bn = _lift(W), _lift(b)
        z = add(matmul(h, Wn), bn)
        if act == "leaky":
            h = leaky_relu(z, slope)
        elif act == "tanh":
            h = tanh(z)
        elif act == "linear":
            h = z
        else:
            raise ValidationError(f"unknown activation {act!r}")
        acts.append((z, h, Wn, act))

    out = h
    if out.value.ndim != 2 or out.value.shape[1] != 1:
        raise DimensionError(
            f"critic output must have width 1, got shape {out.value.shape}"
        )

    batch = x.value.shape[0]
    g = constant(np.ones((batch, 1)))
    for z, a, Wn, act in reversed(acts):
        if act == "leaky":
            g = mul(g, leaky_gate(z, slope))
        elif act == "tanh":
            g = mul(g, sub(1.0, square(a)))
        g = matmul(g, transpose(Wn))
    return out, g


def lipschitz_penalty_node(x_tilde, layers, slope: float = 0.2) -> Node:
    """Mean squared deviation of the critic's input-gradient norm from 1."""
    _, g = affine_stack_with_input_gradient(x_tilde, layers, slope)
    return vmean(square(sub(row_norm(g), 1.0)))


# ---------------------------------------------------------------------------
# parameter stores and public gradient operations


class ParamStore:
    """Named parameter tensors with deterministic (insertion) order."""

    def __init__(self, items: Mapping[str, np.ndarray] | Iterable = ()):
        self._data: dict[str, np.ndarray] = {}
        pairs = items.items() if isinstance(items, Mapping) else items
        for name, value in pairs:
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._data:
            raise ValidationError(f"duplicate parameter name {name!r}")
        self._data[name] = as_tensor(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._data[name]

    def __contains__(self, name: str) -> bool:
        return name in self._data

    def __iter__(self):
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def names(self) -> list[str]:
        return list(self._data)

    def items(self):
        return self._data.items()

    def copy(self) -> "ParamStore":
        return ParamStore((k, v.copy()) for k, v in self._data.items())

    def size(self) -> int:
        return sum(v.size for v in self._data.values())


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, params: ParamStore):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0


def adam_step(
    params: ParamStore,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 0.001,
    beta1: float = 0.5,
    beta2: float = 0.9,
    eps: float = 1e-8,
) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update. Returns fresh params and state; the
    inputs are left untouched."""
    if lr <= 0:
        raise ValidationError("lr must be positive")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValidationError("beta1 and beta2 must lie in [0, 1)")
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise DimensionError(f"gradient missing or mis-shaped for {name!r}")

    new = AdamState(params)
    new.step = state.step + 1
    t = new.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    out = ParamStore()
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        new.m[name] = m
        new.v[name] = v
        out.add(name, p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
    return out, new


def grad_scalar(
    loss_fn: Callable[[dict[str, Node]], Node], params: ParamStore
) -> dict[str, np.ndarray]:
    """Gradients of a scalar expression with respect to every parameter.

    `loss_fn` receives one leaf Node per parameter (keyed by name) and must
    return a scalar Node. Parameters the expression never touches map to
    zero tensors. Non-finite results raise NumericOverflowError naming the
    offending parameter where one can be identified.
    """
    leaves = {name: leaf(value) for name, value in params.items()}
    out = loss_fn(leaves)
    if out.value.size != 1:
        raise ValidationError(f"loss must be scalar, got shape {out.value.shape}")
    if not np.isfinite(out.value):
        raise NumericOverflowError("loss evaluated to a non-finite value")
    backward(out)
    grads = {}
    for name, node in leaves.items():
        g = node.grad if node.grad is not None else np.zeros_like(node.value)
        if not np.all(np.isfinite(g)):
            raise NumericOverflowError(f"non-finite gradient for parameter {name!r}")
        grads[name] = g
    return grads


def input_gradient(layers: Sequence[tuple], x, slope: float = 0.2) -> np.ndarray:
    """Gradient of a scalar-headed affine stack's output with respect to its
    input batch, one row per sample."""
    x = as_tensor(x)
    w0 = layers[0][0]
    w0_shape = w0.value.shape if isinstance(w0, Node) else as_tensor(w0).shape
    if x.ndim != 2 or x.shape[1] != w0_shape[0]:
        raise DimensionError(
            f"input shape {x.shape} does not match first layer {w0_shape}"
        )
    _, g = affine_stack_with_input_gradient(constant(x), layers, slope)
    if not np.all(np.isfinite(g.value)):
        raise NumericOverflowError("non-finite input gradient")
    return g.value


def grad_penalty_param_grad(
    params: ParamStore,
    layout: Sequence[tuple[str, str, str]],
    x_tilde,
    slope: float = 0.2,
) -> dict[str, np.ndarray]:
    """Parameter gradients of the Lipschitz penalty on a batch of
    interpolates.

    `layout` names the (weight, bias, activation) triple of each stack layer
    inside `params`. Parameters outside the stack receive zero gradients.
    """
    x_tilde = as_tensor(x_tilde)

    def build(leaves):
        layers = [(leaves[w], leaves[b], act) for w, b, act in layout]
        return lipschitz_penalty_node(constant(x_tilde), layers, slope)

    return grad_scalar(build, params)
