"""A small reverse-mode autodiff engine over numpy arrays.

Only the operators the two student models use are provided. Each op
computes its forward value eagerly and, when any input requires a gradient,
records a closure mapping the output gradient to input gradients. Tensors
that do not require gradients record nothing, so inference pays no tape cost.

Storage is float32 by default; pass float64 parameters for gradient checks.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import NotScalarLoss, ShapeMismatch

LN_EPS = 1e-6
MASK_VALUE = -1e9


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _check(cond: bool, op: str, *shapes) -> None:
    if not cond:
        raise ShapeMismatch(f"{op}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes))


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        _check(False, "add", a.shape, b.shape)
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        _check(False, "mul", a.shape, b.shape)
    return _result(
        data, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )


def sum_all(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(data, tuple(xs), backward)


def select_first(x: Tensor) -> Tensor:
    """``x[:, 0]`` (the CLS position of a [B, L, D] sequence)."""

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, 0] = g
        return (gx,)

    return _result(x.data[:, 0], (x,), backward)


# ---------------------------------------------------------------------------
# model ops


def embed_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(f"embed_lookup: ids out of range for table {table.shape}")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(table.data[ids], (table,), backward)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    _check(x.shape[-1] == w.shape[0] and w.data.ndim == 2, "dense", x.shape, w.shape)
    data = x.data @ w.data
    if b is not None:
        _check(b.shape == (w.shape[1],), "dense bias", b.shape, (w.shape[1],))
        data = data + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _result(data, parents, backward)


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid, stride-1 convolution over [B, L, C] with kernel [K, C, F]."""
    _check(x.data.ndim == 3 and w.data.ndim == 3 and x.shape[2] == w.shape[1], "conv1d", x.shape, w.shape)
    bsz, length, chans = x.shape
    k, _, f = w.shape
    _check(length >= k, "conv1d", x.shape, w.shape)
    steps = length - k + 1
    # [B, T, C, K] -> [B, T, K, C] so columns line up with w.reshape(K*C, F)
    cols = sliding_window_view(x.data, k, axis=1).transpose(0, 1, 3, 2).reshape(bsz, steps, k * chans)
    w2 = w.data.reshape(k * chans, f)
    data = cols @ w2 + b.data

    def backward(g):
        g2 = g.reshape(-1, f)
        gw = (cols.reshape(-1, k * chans).T @ g2).reshape(k, chans, f)
        gcols = (g @ w2.T).reshape(bsz, steps, k, chans)
        gx = np.zeros_like(x.data)
        for j in range(k):
            gx[:, j : j + steps] += gcols[:, :, j]
        return gx, gw, g2.sum(axis=0)

    return _result(data, (x, w, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    cdf = cdf.astype(x.dtype, copy=False)

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return _result(x.data * cdf, (x,), backward)


def max_pool_over_time(x: Tensor) -> Tensor:
    """Max over axis 1 of [B, T, F]; the gradient goes to the first maximum."""
    idx = x.data.argmax(axis=1)
    data = np.take_along_axis(x.data, idx[:, None, :], axis=1)[:, 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[:, None, :], g[:, None, :], axis=1)
        return (gx,)

    return _result(data, (x,), backward)


def sum_pool(x: Tensor, axis: int = 1) -> Tensor:
    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result(x.data.sum(axis=axis), (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = LN_EPS) -> Tensor:
    """Normalize the last axis; the affine transform is optional."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    data = xhat
    if gamma is not None:
        _check(gamma.shape == (x.shape[-1],), "layer_norm", x.shape, gamma.shape)
        data = xhat * gamma.data + beta.data

    def backward(g):
        dxhat = g * gamma.data if gamma is not None else g
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        if gamma is None:
            return (gx,)
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    parents = (x,) if gamma is None else (x, gamma, beta)
    return _result(data, parents, backward)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    s = _softmax(x.data)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, (x,), backward)


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int,
    key_mask: np.ndarray | None = None,
    dropout_mask: np.ndarray | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Multi-head attention over [B, L, D] projections.

    ``key_mask`` is boolean [B, L], True for real tokens; masked keys get an
    additive -1e9 before the softmax. ``dropout_mask`` (already scaled by
    1/(1-p)) multiplies the attention probabilities. Returns the [B, L, D]
    context and the [B, H, L, L] probabilities.
    """
    _check(q.shape == k.shape == v.shape and q.data.ndim == 3, "attention", q.shape, k.shape, v.shape)
    bsz, length, dim = q.shape
    _check(dim % heads == 0, "attention heads", q.shape, (heads,))
    dh = dim // heads
    scale = 1.0 / math.sqrt(dh)

    def split(a):
        return a.reshape(bsz, length, heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    if key_mask is not None:
        scores = scores + np.where(key_mask, 0.0, MASK_VALUE).astype(scores.dtype)[:, None, None, :]
    probs = _softmax(scores)
    used = probs if dropout_mask is None else probs * dropout_mask
    ctx = (used @ vh).transpose(0, 2, 1, 3).reshape(bsz, length, dim)

    def backward(g):
        gh = g.reshape(bsz, length, heads, dh).transpose(0, 2, 1, 3)
        gv = used.transpose(0, 1, 3, 2) @ gh
        gused = gh @ vh.transpose(0, 1, 3, 2)
        gp = gused if dropout_mask is None else gused * dropout_mask
        gs = probs * (gp - (gp * probs).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ kh
        gk = gs.transpose(0, 1, 3, 2) @ qh

        def merge(a):
            return a.transpose(0, 2, 1, 3).reshape(bsz, length, dim)

        return merge(gq), merge(gk), merge(gv)

    return _result(ctx, (q, k, v), backward), probs


def dropout_mask(shape, p: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    dtype = np.dtype(dtype)
    keep = rng.random(shape, dtype=np.float32) >= p
    return keep.astype(dtype) * dtype.type(1.0 / (1.0 - p))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Inverted dropout; the exact identity outside training or when p == 0."""
    if not training or p == 0.0:
        return x
    mask = dropout_mask(x.shape, p, rng, x.dtype)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def cross_entropy_loss(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy of [B, C] logits against integer class targets."""
    targets = np.asarray(targets)
    _check(logits.data.ndim == 2 and targets.shape == (logits.shape[0],), "cross_entropy", logits.shape, targets.shape)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1))
    rows = np.arange(len(targets))
    loss = (logsum - z[rows, targets]).mean()

    def backward(g):
        s = np.exp(z - logsum[:, None])
        s[rows, targets] -= 1.0
        return (s * (g / len(targets)),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# ---------------------------------------------------------------------------
# reverse pass


def topological_order(root: Tensor) -> list[Tensor]:
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


def backward(loss: Tensor) -> list[Tensor]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Intermediate gradients are dropped as soon as they are consumed.
    Returns the leaves that received gradients.
    """
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return []
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves = []
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            leaves.append(node)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return leaves


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """Bias-corrected Adam moments for a fixed, named parameter set."""

    def __init__(self, params: Mapping[str, Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(state: AdamState, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> None:
    """Update ``params`` in place; parameters without a gradient are skipped."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    lr = state.learning_rate
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m, v = state.m[name], state.v[name]
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeMismatch(f"adam_step {name}: gradient {g.shape} vs parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if lr != 0.0:
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + state.epsilon)


# ---------------------------------------------------------------------------
# finite-difference checker


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tolerance: float | None = None,
    samples_per_param: int = 24,
    seed: int = 0,
) -> dict[str, float]:
    """Compare analytic gradients with central differences.

    ``loss_fn`` rebuilds the forward graph from the current parameter values.
    For each parameter up to ``samples_per_param`` coordinates are probed and
    the maximum relative error ``|a - n| / max(|a|, |n|, 1e-8)`` is reported.
    Raises AssertionError when ``tolerance`` is given and exceeded.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {p.dtype}")
    zero_grad(params.values())
    backward(loss_fn())
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= samples_per_param else rng.choice(n, samples_per_param, replace=False)
        worst = 0.0
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            fp = float(loss_fn().data)
            flat[i] = old - h
            fm = float(loss_fn().data)
            flat[i] = old
            num = (fp - fm) / (2.0 * h)
            a = float(analytic.reshape(-1)[i])
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
        report[name] = worst
    zero_grad(params.values())
    if tolerance is not None:
        bad = {k: v for k, v in report.items() if v > tolerance}
        assert not bad, f"gradient check failed (tolerance {tolerance}): {bad}"
    return report
