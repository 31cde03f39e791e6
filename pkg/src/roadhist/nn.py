"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for graph-convolutional encoders, MLP heads and
logistic discriminators: 2-d float64 tensors, a handful of ops, fused
loss nodes, and Adam. Every op accepts either a :class:`Tensor` or a
raw constant (ndarray / scipy sparse matrix); constants never receive
gradients, which keeps normalised adjacencies and feature matrices out
of the tape.

All randomness (dropout masks, gaussian noise, initialisers) flows
through an explicit ``numpy.random.Generator`` argument. Nothing in
this module touches global RNG state.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ConfigurationError


class Tensor:
    """A node in the computation tape.

    ``value`` is a float64 ndarray (loss nodes hold 0-d arrays).
    ``grad`` is lazily allocated during :meth:`backward`.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from this (typically scalar) node."""
        order = []
        visited = set()
        stack = [(self, False)]
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
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.value))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def _split(x):
    """Return (raw value, tensor-or-None) for an op operand."""
    if isinstance(x, Tensor):
        return x.value, (x if x.requires_grad or x._parents else None)
    return x, None


def _make(value, parents, backward):
    out = Tensor(value)
    live = tuple(p for p in parents if p is not None)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, ps) in enumerate(zip(g.shape, shape)) if ps == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def matmul(a, b) -> Tensor:
    """Matrix product. Either operand may be a constant; scipy sparse
    constants are supported on both sides."""
    av, at = _split(a)
    bv, bt = _split(b)
    value = av @ bv
    if sp.issparse(value):
        # tensor values stay dense; sparse @ sparse only happens in
        # constant precomputation outside the tape
        value = value.toarray()

    def backward(g):
        if at is not None:
            ga = g @ bv.T
            at._accumulate(np.asarray(ga))
        if bt is not None:
            gb = av.T @ g
            bt._accumulate(np.asarray(gb))

    return _make(np.asarray(value), (at, bt), backward)


def add(a, b) -> Tensor:
    """Elementwise/broadcast addition (used for bias rows)."""
    av, at = _split(a)
    bv, bt = _split(b)
    value = av + bv

    def backward(g):
        if at is not None:
            at._accumulate(_unbroadcast(g, av.shape))
        if bt is not None:
            bt._accumulate(_unbroadcast(g, bv.shape))

    return _make(value, (at, bt), backward)


def relu(a) -> Tensor:
    av, at = _split(a)
    mask = av > 0

    def backward(g):
        at._accumulate(g * mask)

    return _make(np.where(mask, av, 0.0), (at,), backward)


def sigmoid(a) -> Tensor:
    av, at = _split(a)
    s = expit(av)

    def backward(g):
        at._accumulate(g * s * (1.0 - s))

    return _make(s, (at,), backward)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax, shifted by the row max for stability."""
    av, at = _split(a)
    shifted = av - av.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        at._accumulate(s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _make(s, (at,), backward)


def dropout(a, rate: float, rng: np.random.Generator = None, training: bool = True) -> Tensor:
    """Inverted dropout: surviving entries scaled by 1/(1-rate).

    At inference (``training=False``) or rate 0 this is exactly the
    identity and consumes no random numbers.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a if isinstance(a, Tensor) else Tensor(a)
    av, at = _split(a)
    keep = rng.random(av.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    mask = keep * scale

    def backward(g):
        at._accumulate(g * mask)

    return _make(av * mask, (at,), backward)


def gaussian_noise(a, std: float = 0.1, rng: np.random.Generator = None,
                   training: bool = True) -> Tensor:
    """Additive N(0, std^2) noise during training; identity otherwise."""
    if std < 0:
        raise ConfigurationError(f"noise std must be >= 0, got {std}")
    if not training or std == 0.0:
        return a if isinstance(a, Tensor) else Tensor(a)
    av, at = _split(a)
    noise = rng.normal(0.0, std, size=av.shape)

    def backward(g):
        at._accumulate(g)

    return _make(av + noise, (at,), backward)


def _mask_rows(n, mask):
    if mask is None:
        return np.arange(n)
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return np.flatnonzero(mask)
    return mask.astype(np.intp)


def intersection_loss(pred, target, mask=None) -> Tensor:
    """Mean histogram-intersection loss over selected rows.

    Per row: 1 - sum_j min(pred_j, target_j); the loss is the mean over
    rows selected by ``mask`` (boolean vector or index array; None
    means all rows).
    """
    pv, pt = _split(pred)
    tv = target.value if isinstance(target, Tensor) else np.asarray(target)
    rows = _mask_rows(pv.shape[0], mask)
    if rows.size == 0:
        raise ConfigurationError("loss mask selects no rows")
    p = pv[rows]
    t = tv[rows]
    value = np.float64(np.mean(1.0 - np.minimum(p, t).sum(axis=1)))

    def backward(g):
        gp = np.zeros_like(pv)
        gp[rows] = np.where(p < t, -1.0, 0.0) * (float(g) / rows.size)
        pt._accumulate(gp)

    return _make(value, (pt,), backward)


def cross_entropy_loss(pred, target_onehot, mask=None, clamp: float = 1e-12) -> Tensor:
    """Mean negative log-likelihood over selected rows.

    ``pred`` holds row-stochastic probabilities (softmax output);
    probabilities are clamped from below before the log.
    """
    pv, pt = _split(pred)
    tv = np.asarray(target_onehot, dtype=np.float64)
    rows = _mask_rows(pv.shape[0], mask)
    if rows.size == 0:
        raise ConfigurationError("loss mask selects no rows")
    p = np.maximum(pv[rows], clamp)
    t = tv[rows]
    value = np.float64(-np.mean((t * np.log(p)).sum(axis=1)))

    def backward(g):
        gp = np.zeros_like(pv)
        grad_rows = -(t / p) * (pv[rows] > clamp)
        gp[rows] = grad_rows * (float(g) / rows.size)
        pt._accumulate(gp)

    return _make(value, (pt,), backward)


def bce_with_logits(logits, target: float) -> Tensor:
    """Mean binary cross-entropy against a constant 0/1 target, in the
    numerically stable logits form max(x,0) - x*z + log(1 + e^{-|x|})."""
    xv, xt = _split(logits)
    z = float(target)
    value = np.float64(
        np.mean(np.maximum(xv, 0.0) - xv * z + np.log1p(np.exp(-np.abs(xv))))
    )

    def backward(g):
        xt._accumulate((expit(xv) - z) * (float(g) / xv.size))

    return _make(value, (xt,), backward)


# ---------------------------------------------------------------------------
# Parameters and optimisation


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    """Weight matrix drawn from U(-l, l), l = sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def zeros_param(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def zero_grads(params):
    for p in params:
        p.grad = None


class Adam:
    """Adam optimiser over a fixed parameter list.

    Update rule per step t (epsilon inside the square root):

        m = b1*m + (1-b1)*g        mhat = m / (1 - b1^t)
        v = b2*v + (1-b2)*g^2      vhat = v / (1 - b2^t)
        p -= lr * mhat / sqrt(vhat + eps)

    A parameter whose grad is None is skipped; a zero gradient on a
    fresh optimiser leaves the parameter bit-identical.
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.value -= self.lr * (m / c1) / np.sqrt(v / c2 + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self._m],
                "v": [v.copy() for v in self._v]}

    def load_state(self, state: dict):
        self.t = int(state["t"])
        for m, src in zip(self._m, state["m"]):
            m[:] = src
        for v, src in zip(self._v, state["v"]):
            v[:] = src
