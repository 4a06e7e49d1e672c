"""Dense tensors with reverse-mode differentiation, plus the recurrent primitives
the rest of the package composes: LSTM cells, bidirectional sequence runs,
element-wise max-pooling and masked softmax.

Design notes:
  * A GradTape is a Wengert list: ops are appended in execution order and the
    adjoint pass replays them once, in reverse.  Recording only happens while a
    tape is active (``with GradTape() as tape: ...``), so evaluation-mode code
    pays no graph cost.
  * Leaf tensors (parameters, inputs) accumulate adjoints into a persistent
    ``.grad`` buffer; intermediate adjoints live in a scratch dict and are
    freed as the reverse sweep passes them.  Repeated ``backward`` calls keep
    adding into leaf gradients until they are explicitly zeroed.
  * Heavy primitives (LSTM cell, the scoring-head bank) are single tape nodes
    with handwritten adjoints; finite differences check all of them in tests.
  * Compute dtype is float64 by default (float32 available for speed), and
    parameter values are kept on the float32 grid so the binary checkpoint
    format round-trips bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions are inconsistent."""


class EmptySequenceError(ValueError):
    """A sequence operation received zero inputs."""


class EmptyPoolError(ValueError):
    """Max-pooling over zero rows."""


class NoValidActionError(ValueError):
    """Masked softmax with an all-false mask."""


class TapeError(RuntimeError):
    """Backward requested from a tensor the tape did not produce."""


class NonFiniteError(ArithmeticError):
    """A forward op produced NaN/Inf while debug checks are on."""


_DTYPE = np.float64
_DEBUG_CHECKS = False
_ACTIVE_TAPE = None


def set_default_dtype(dtype):
    """float64 (default, used by all tests) or float32 for speed."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("dtype must be float32 or float64")
    _DTYPE = dtype.type


def default_dtype():
    return _DTYPE


def set_debug_checks(enabled):
    """Toggle the every-op finiteness assertion (slow; meant for tests)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


class Tensor:
    """A numpy array plus the bookkeeping reverse mode needs.

    ``tape`` is the GradTape whose op produced this tensor (None for leaves);
    ``grad`` is only ever populated on leaves.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # small operator sugar; everything routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class GradTape:
    """Ordered record of executed ops; reverse replay yields all adjoints."""

    def __init__(self):
        self._ops = []
        self._prev = None

    def __len__(self):
        return len(self._ops)

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        self._prev = None
        return False


def active_tape():
    return _ACTIVE_TAPE


def _assert_finite(data):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value in forward op output")


def _from_op(data, inputs, backward_fn):
    """Wrap an op result; record it when a tape is active and grads can flow."""
    out = Tensor(data)
    if _DEBUG_CHECKS:
        _assert_finite(out.data)
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape._ops.append((out, inputs, backward_fn))
    return out


def backward(tape, loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    Visits each recorded op exactly once, in reverse execution order.
    Repeated calls keep accumulating until leaf grads are zeroed.
    """
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ShapeError("backward needs a scalar loss tensor")
    if loss.tape is not tape:
        raise TapeError("loss was not produced under this tape")
    grads = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for out, inputs, backward_fn in reversed(tape._ops):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if t.tape is None:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += gi
            else:
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi


# ---------------------------------------------------------------------------
# elementwise / reduction ops
# ---------------------------------------------------------------------------


def _unbroadcast(g, shape):
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def add_n(tensors):
    """Sum a list of same-shape tensors as a single node."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise EmptySequenceError("add_n of zero tensors")
    total = tensors[0].data.copy()
    for t in tensors[1:]:
        total += t.data
    n = len(tensors)
    return _from_op(total, tuple(tensors), lambda g: (g,) * n)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def neg(a):
    return _from_op(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    da, db = a.data, b.data
    return _from_op(
        da * db,
        (a, b),
        lambda g: (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)),
    )


def scale(a, c):
    """Multiply by a python constant (no gradient through c)."""
    c = float(c)
    return _from_op(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    da, db = a.data, b.data
    if da.ndim == 0 or db.ndim == 0 or da.shape[-1] != db.shape[0]:
        raise ShapeError(f"matmul shapes {da.shape} x {db.shape}")
    out = da @ db

    def backward_fn(g):
        if da.ndim == 1 and db.ndim == 2:  # (k,) @ (k,m) -> (m,)
            return g @ db.T, np.outer(da, g)
        if da.ndim == 2 and db.ndim == 1:  # (n,k) @ (k,) -> (n,)
            return np.outer(g, db), da.T @ g
        if da.ndim == 1 and db.ndim == 1:  # dot product -> scalar
            return g * db, g * da
        return g @ db.T, da.T @ g

    return _from_op(out, (a, b), backward_fn)


def sigmoid(x):
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _from_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x):
    t = np.tanh(x.data)
    return _from_op(t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x):
    e = np.exp(x.data)
    return _from_op(e, (x,), lambda g: (g * e,))


def log(x):
    d = x.data
    return _from_op(np.log(d), (x,), lambda g: (g / d,))


def sum_all(x):
    shape = x.data.shape
    return _from_op(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, shape),))


def pick(x, i):
    """Scalar element i of a vector."""
    if x.data.ndim != 1:
        raise ShapeError("pick expects a vector")
    i = int(i)
    n = x.data.shape[0]

    def backward_fn(g):
        gx = np.zeros(n, dtype=g.dtype)
        gx[i] = g
        return (gx,)

    return _from_op(x.data[i], (x,), backward_fn)


# ---------------------------------------------------------------------------
# indexing / assembly ops
# ---------------------------------------------------------------------------


def row(x, i):
    """Row i of a matrix, as a vector."""
    if x.data.ndim != 2:
        raise ShapeError("row expects a matrix")
    i = int(i)
    shape = x.data.shape

    def backward_fn(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[i] = g
        return (gx,)

    return _from_op(x.data[i], (x,), backward_fn)


def row_range(x, start, stop):
    """Rows [start, stop) of a matrix."""
    if x.data.ndim != 2:
        raise ShapeError("row_range expects a matrix")
    shape = x.data.shape

    def backward_fn(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[start:stop] = g
        return (gx,)

    return _from_op(x.data[start:stop], (x,), backward_fn)


def gather_rows(x, indices):
    """Rows of a matrix selected by an integer index array (embedding lookup)."""
    idx = np.asarray(indices, dtype=np.intp)
    shape = x.data.shape

    def backward_fn(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    return _from_op(x.data[idx], (x,), backward_fn)


def stack_rows(rows):
    """Stack equal-length vectors into a matrix."""
    rows = list(rows)
    if not rows:
        raise EmptySequenceError("stack_rows of zero rows")
    out = np.stack([r.data for r in rows])
    return _from_op(out, tuple(rows), lambda g: tuple(g[i] for i in range(len(rows))))


def concat(parts):
    """Concatenate vectors into one vector."""
    parts = list(parts)
    if not parts:
        raise EmptySequenceError("concat of zero parts")
    sizes = [p.data.shape[0] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([p.data for p in parts])
    return _from_op(out, tuple(parts), lambda g: tuple(np.split(g, splits)))


def vstack(blocks):
    """Row-wise concatenation of matrices with equal column counts."""
    blocks = list(blocks)
    if not blocks:
        raise EmptySequenceError("vstack of zero blocks")
    sizes = [b.data.shape[0] for b in blocks]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([b.data for b in blocks], axis=0)
    return _from_op(out, tuple(blocks), lambda g: tuple(np.split(g, splits, axis=0)))


def concat_cols(a, b):
    """Column-wise concatenation of two matrices with equal row counts."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"concat_cols shapes {a.data.shape} x {b.data.shape}")
    na = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _from_op(out, (a, b), lambda g: (g[:, :na], g[:, na:]))


# ---------------------------------------------------------------------------
# pooling and masked softmax
# ---------------------------------------------------------------------------


def elementwise_max_pool(rows):
    """Column-wise max over the rows of a matrix.

    Returns (pooled vector, argmax row index per column).  Ties break to the
    smallest row index, and the backward pass routes each output adjoint only
    to that argmax cell.
    """
    if rows.data.ndim != 2:
        raise ShapeError("elementwise_max_pool expects a matrix")
    n, d = rows.data.shape
    if n == 0:
        raise EmptyPoolError("max pool over zero rows")
    argmax = rows.data.argmax(axis=0)  # first occurrence wins ties
    pooled = rows.data[argmax, np.arange(d)]
    shape = rows.data.shape

    def backward_fn(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[argmax, np.arange(d)] = g
        return (gx,)

    return _from_op(pooled, (rows,), backward_fn), argmax


def masked_softmax(scores, mask):
    """Softmax over the unmasked entries; masked entries get probability 0."""
    if scores.data.ndim != 1:
        raise ShapeError("masked_softmax expects a vector")
    m = np.asarray(mask, dtype=bool)
    if m.shape != scores.data.shape:
        raise ShapeError(f"mask shape {m.shape} vs scores {scores.data.shape}")
    if not m.any():
        raise NoValidActionError("all actions masked")
    shifted = scores.data - scores.data[m].max()
    e = np.where(m, np.exp(shifted), 0.0)
    p = e / e.sum()

    def backward_fn(g):
        return (p * (g - float(g @ p)),)

    return _from_op(p, (scores,), backward_fn)


# ---------------------------------------------------------------------------
# LSTM primitives
# ---------------------------------------------------------------------------


@dataclass
class CellParams:
    """One LSTM cell: packed gate weights, gate order [input, forget, cand, output].

    Wx: (input_size, 4H), Wh: (H, 4H), b: (4H,).
    """

    Wx: Tensor
    Wh: Tensor
    b: Tensor

    @property
    def hidden_size(self):
        return self.Wh.data.shape[0]

    @property
    def input_size(self):
        return self.Wx.data.shape[0]


@dataclass
class BiLstmParams:
    fwd: CellParams
    bwd: CellParams

    @property
    def hidden_size(self):
        return self.fwd.hidden_size


def lstm_cell_forward(x, h, c, params):
    """One LSTM step: gates i,f,o = sigmoid, candidate g = tanh,
    c' = f*c + i*g, h' = o*tanh(c').  A single tape node with an analytic
    adjoint (checked against finite differences in the test suite).
    """
    hs = params.hidden_size
    xd, hd, cd = x.data, h.data, c.data
    if (
        xd.ndim != 1
        or hd.shape != (hs,)
        or cd.shape != (hs,)
        or params.Wx.data.shape != (xd.shape[0], 4 * hs)
        or params.Wh.data.shape != (hs, 4 * hs)
        or params.b.data.shape != (4 * hs,)
    ):
        raise ShapeError(
            f"lstm cell shapes: x {xd.shape}, h {hd.shape}, c {cd.shape}, "
            f"Wx {params.Wx.data.shape}, Wh {params.Wh.data.shape}, b {params.b.data.shape}"
        )
    Wxd, Whd, bd = params.Wx.data, params.Wh.data, params.b.data
    z = xd @ Wxd + hd @ Whd + bd
    i = 1.0 / (1.0 + np.exp(-z[:hs]))
    f = 1.0 / (1.0 + np.exp(-z[hs : 2 * hs]))
    g_ = np.tanh(z[2 * hs : 3 * hs])
    o = 1.0 / (1.0 + np.exp(-z[3 * hs :]))
    c_next = f * cd + i * g_
    tc = np.tanh(c_next)
    h_next = o * tc

    # shared state for the two output nodes; whichever output receives an
    # adjoint first caches nothing, both route through the same closure data
    def backward_h(g):
        do = g * tc
        dc_via_h = g * o * (1.0 - tc * tc)
        return _cell_backward(dc_via_h, do)

    def backward_c(g):
        return _cell_backward(g, None)

    def _cell_backward(dc, do):
        di = dc * g_
        df = dc * cd
        dg = dc * i
        dz = np.empty_like(z)
        dz[:hs] = di * i * (1.0 - i)
        dz[hs : 2 * hs] = df * f * (1.0 - f)
        dz[2 * hs : 3 * hs] = dg * (1.0 - g_ * g_)
        if do is None:
            dz[3 * hs :] = 0.0
        else:
            dz[3 * hs :] = do * o * (1.0 - o)
        dx = dz @ Wxd.T
        dh = dz @ Whd.T
        dcell = dc * f
        return (dx, dh, dcell, np.outer(xd, dz), np.outer(hd, dz), dz)

    inputs = (x, h, c, params.Wx, params.Wh, params.b)
    h_out = _from_op(h_next, inputs, backward_h)
    c_out = _from_op(c_next, inputs, backward_c)
    return h_out, c_out


def zeros(shape):
    return Tensor(np.zeros(shape, dtype=_DTYPE))


def bilstm_sequence(inputs, params):
    """Run a bidirectional LSTM over a vector sequence.

    Row t of the output concatenates the forward hidden state after
    inputs[0..t] with the backward hidden state after inputs[-1..t]; both
    directions start from zero states.
    """
    inputs = list(inputs)
    if not inputs:
        raise EmptySequenceError("bilstm over an empty sequence")
    hs = params.hidden_size
    h = c = zeros(hs)
    fwd_states = []
    for x in inputs:
        h, c = lstm_cell_forward(x, h, c, params.fwd)
        fwd_states.append(h)
    h = c = zeros(hs)
    bwd_states = [None] * len(inputs)
    for t in range(len(inputs) - 1, -1, -1):
        h, c = lstm_cell_forward(inputs[t], h, c, params.bwd)
        bwd_states[t] = h
    return concat_cols(stack_rows(fwd_states), stack_rows(bwd_states))


def nine_head_scores(h, W1, b1, W2, b2):
    """Bank of independent one-hidden-layer scoring heads, fused in one node.

    Head k reads hidden slice [k*hh, (k+1)*hh) of tanh(h @ W1 + b1) and emits
    the scalar  dot(slice, W2[k*hh:(k+1)*hh]) + b2[k].  W1: (H, n*hh),
    b1/W2: (n*hh,), b2: (n,).
    """
    n = b2.data.shape[0]
    total = W1.data.shape[1]
    if total % n != 0 or b1.data.shape != (total,) or W2.data.shape != (total,):
        raise ShapeError("head bank shapes inconsistent")
    hh = total // n
    hd = h.data
    a = hd @ W1.data + b1.data
    t = np.tanh(a)
    prod = t * W2.data
    scores = prod.reshape(n, hh).sum(axis=1) + b2.data

    def backward_fn(g):
        grep = np.repeat(g, hh)
        dt = grep * W2.data
        da = dt * (1.0 - t * t)
        return (W1.data @ da, np.outer(hd, da), da, grep * t, g)

    return _from_op(scores, (h, W1, b1, W2, b2), backward_fn)


# ---------------------------------------------------------------------------
# parameter registry
# ---------------------------------------------------------------------------


class ParamSet:
    """Named trainable tensors, iterated in lexicographic name order."""

    def __init__(self):
        self._params = {}

    def add(self, name, data):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=_DTYPE), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def zero_grads(self):
        for _, t in self.items():
            t.grad = None

    def grad_norm(self):
        total = 0.0
        for _, t in self.items():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        return math.sqrt(total)

    def sgd_step(self, lr, clip_norm=None, grad_scale=1.0):
        """In-place gradient descent with optional global-norm clipping.

        Updated values are snapped back to the float32 grid so that saving and
        reloading a checkpoint is an exact round trip.
        """
        factor = grad_scale
        if clip_norm is not None:
            norm = self.grad_norm() * grad_scale
            if norm > clip_norm and norm > 0.0:
                factor *= clip_norm / norm
        for _, t in self.items():
            if t.grad is not None:
                t.data -= (lr * factor) * t.grad
        self.quantize_storage()

    def quantize_storage(self):
        for _, t in self.items():
            t.data = t.data.astype(np.float32).astype(_DTYPE)

    def copy(self):
        other = ParamSet()
        for n, t in self.items():
            other.add(n, t.data.copy())
        return other

    def allclose(self, other):
        return self.names() == other.names() and all(
            np.array_equal(self._params[n].data, other._params[n].data)
            for n in self.names()
        )


def uniform_init(shape, fan_in, rng):
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_cell_params(ps, prefix, input_size, hidden_size, rng):
    """Create one LSTM cell's parameters under ``prefix`` with the standard
    init: uniform +-1/sqrt(fan_in), forget-gate bias forced to 1.0."""
    Wx = ps.add(f"{prefix}.Wx", uniform_init((input_size, 4 * hidden_size), input_size, rng))
    Wh = ps.add(f"{prefix}.Wh", uniform_init((hidden_size, 4 * hidden_size), hidden_size, rng))
    b_data = uniform_init(4 * hidden_size, hidden_size, rng)
    b_data[hidden_size : 2 * hidden_size] = 1.0
    b = ps.add(f"{prefix}.b", b_data)
    return CellParams(Wx, Wh, b)


def cell_params_from(ps, prefix):
    return CellParams(ps[f"{prefix}.Wx"], ps[f"{prefix}.Wh"], ps[f"{prefix}.b"])
