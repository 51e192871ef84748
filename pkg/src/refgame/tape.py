"""Reverse-mode differentiation on a single-use tape.

Every primitive appends one record to the innermost active tape; backward
replays the records in exact reverse order of forward execution, accumulating
gradients into ``Var.grad`` buffers and ``ParamTensor.grad`` arrays. Running a
primitive with no active tape computes values only (evaluation mode).
"""

from __future__ import annotations

import threading
from typing import Sequence

import numpy as np

from .errors import DimensionError, RefgameError, TapeReuseError
from .params import ParamTensor

PROB_CLAMP = 1e-7  # probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before log

_LOCAL = threading.local()


class Var:
    """Array value produced on (or fed into) a tape; grad is filled during backward."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


class Tape:
    """Ordered record of primitive operations; backward may run at most once."""

    __slots__ = ("_records", "_used")

    def __init__(self):
        self._records = []
        self._used = False

    def __enter__(self):
        stack = getattr(_LOCAL, "stack", None)
        if stack is None:
            stack = _LOCAL.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _LOCAL.stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def record(self, out: Var, backward_fn) -> None:
        self._records.append((out, backward_fn))

    def backward(self, root: Var, seed: float = 1.0) -> None:
        """Accumulate d(root)/d(input) into every grad buffer reachable from root."""
        if self._used:
            raise TapeReuseError("backward already ran on this tape")
        self._used = True
        if root.value.ndim != 0:
            raise DimensionError(
                f"backward root must be a scalar, got shape {root.value.shape}"
            )
        root.grad = np.asarray(float(seed))
        for out, fn in reversed(self._records):
            g = out.grad
            if g is not None:
                fn(g)


def active_tape() -> Tape | None:
    stack = getattr(_LOCAL, "stack", None)
    return stack[-1] if stack else None


def _value(x) -> np.ndarray:
    if isinstance(x, Var):
        return x.value
    if isinstance(x, ParamTensor):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _accum(x, g) -> None:
    if isinstance(x, Var):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        x.grad += g
    elif isinstance(x, ParamTensor):
        x.grad += g
    # plain arrays are constants: gradient is dropped


def _name(x, fallback: str) -> str:
    return x.name if isinstance(x, ParamTensor) else fallback


def _emit(out_value, backward_fn) -> Var:
    out = Var(out_value)
    tape = active_tape()
    if tape is not None:
        tape.record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitives


def affine(x, W, b) -> Var:
    """W @ x + b for a 1-D x; W is (out, in), b is (out,)."""
    xv, Wv, bv = _value(x), _value(W), _value(b)
    if Wv.ndim != 2 or xv.ndim != 1 or Wv.shape[1] != xv.shape[0] or bv.shape != (Wv.shape[0],):
        raise DimensionError(
            f"affine: {_name(W, 'W')}{Wv.shape} @ {_name(x, 'x')}{xv.shape} "
            f"+ {_name(b, 'b')}{bv.shape} do not conform"
        )
    out_value = Wv @ xv + bv

    def backward(g):
        _accum(W, np.outer(g, xv))
        _accum(b, g)
        _accum(x, Wv.T @ g)

    return _emit(out_value, backward)


def matvec(M, v) -> Var:
    """M @ v with M (n, q) and v (q,)."""
    Mv, vv = _value(M), _value(v)
    if Mv.ndim != 2 or vv.ndim != 1 or Mv.shape[1] != vv.shape[0]:
        raise DimensionError(f"matvec: {Mv.shape} @ {vv.shape} do not conform")
    out_value = Mv @ vv

    def backward(g):
        _accum(M, np.outer(g, vv))
        _accum(v, Mv.T @ g)

    return _emit(out_value, backward)


def matvec_t(M, v) -> Var:
    """M.T @ v with M (n, q) and v (n,): the v-weighted sum of M's rows."""
    Mv, vv = _value(M), _value(v)
    if Mv.ndim != 2 or vv.ndim != 1 or Mv.shape[0] != vv.shape[0]:
        raise DimensionError(f"matvec_t: {Mv.shape}.T @ {vv.shape} do not conform")
    out_value = Mv.T @ vv

    def backward(g):
        _accum(M, np.outer(vv, g))
        _accum(v, Mv @ g)

    return _emit(out_value, backward)


def _sigmoid_value(x: np.ndarray) -> np.ndarray:
    # exponentiates only nonpositive arguments: no overflow at any input
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Var:
    out_value = _sigmoid_value(_value(x))

    def backward(g, y=out_value):
        _accum(x, g * (y * (1.0 - y)))

    return _emit(out_value, backward)


def tanh(x) -> Var:
    out_value = np.tanh(_value(x))

    def backward(g, y=out_value):
        _accum(x, g * (1.0 - y * y))

    return _emit(out_value, backward)


def relu(x) -> Var:
    xv = _value(x)
    out_value = np.maximum(xv, 0.0)

    def backward(g, mask=(xv > 0.0)):
        _accum(x, g * mask)

    return _emit(out_value, backward)


_ELEMENTWISE = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def elementwise(kind: str, x) -> Var:
    """Dispatch to one of {sigmoid, tanh, relu}."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise RefgameError(f"unknown elementwise kind {kind!r}") from None
    return fn(x)


def softmax(logits) -> Var:
    """Stable softmax over a 1-D vector (max-subtraction)."""
    lv = _value(logits)
    if lv.size == 0:
        raise DimensionError("softmax over an empty vector")
    shifted = lv - lv.max()
    e = np.exp(shifted)
    out_value = e / e.sum()

    def backward(g, y=out_value):
        _accum(logits, y * (g - np.dot(g, y)))

    return _emit(out_value, backward)


def add(a, b) -> Var:
    av, bv = _value(a), _value(b)
    if av.shape != bv.shape:
        raise DimensionError(f"add: shapes {av.shape} and {bv.shape} differ")
    out_value = av + bv

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _emit(out_value, backward)


def sub(a, b) -> Var:
    av, bv = _value(a), _value(b)
    if av.shape != bv.shape:
        raise DimensionError(f"sub: shapes {av.shape} and {bv.shape} differ")
    out_value = av - bv

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _emit(out_value, backward)


def mul(a, b) -> Var:
    av, bv = _value(a), _value(b)
    if av.shape != bv.shape:
        raise DimensionError(f"mul: shapes {av.shape} and {bv.shape} differ")
    out_value = av * bv

    def backward(g):
        _accum(a, g * bv)
        _accum(b, g * av)

    return _emit(out_value, backward)


def scale(x, c: float) -> Var:
    c = float(c)
    out_value = _value(x) * c

    def backward(g):
        _accum(x, g * c)

    return _emit(out_value, backward)


def add_n(terms: Sequence) -> Var:
    """Sum of same-shaped terms."""
    if not terms:
        raise RefgameError("add_n of an empty sequence")
    values = [_value(t) for t in terms]
    out_value = values[0].copy()
    for v in values[1:]:
        out_value += v

    def backward(g):
        for t in terms:
            _accum(t, g)

    return _emit(out_value, backward)


def concat(parts: Sequence) -> Var:
    """Concatenate 1-D pieces."""
    values = [_value(p) for p in parts]
    sizes = [v.shape[0] for v in values]
    out_value = np.concatenate(values)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])

    return _emit(out_value, backward)


def stack(rows: Sequence) -> Var:
    """Stack equal-length 1-D rows into a 2-D matrix."""
    values = [_value(r) for r in rows]
    out_value = np.stack(values)

    def backward(g):
        for i, r in enumerate(rows):
            _accum(r, g[i])

    return _emit(out_value, backward)


def pick(v, index: int) -> Var:
    """Select one coordinate of a 1-D vector as a scalar."""
    vv = _value(v)
    index = int(index)
    if not 0 <= index < vv.shape[0]:
        raise DimensionError(f"pick: index {index} out of range for length {vv.shape[0]}")
    out_value = np.asarray(vv[index])

    def backward(g):
        buf = np.zeros_like(vv)
        buf[index] = g
        _accum(v, buf)

    return _emit(out_value, backward)


def sum_all(v) -> Var:
    vv = _value(v)
    out_value = np.asarray(vv.sum())

    def backward(g):
        _accum(v, np.full_like(vv, float(g)))

    return _emit(out_value, backward)


def log_clamped(p) -> Var:
    """log of p with p clamped to [PROB_CLAMP, 1 - PROB_CLAMP]; zero grad where clamped."""
    pv = _value(p)
    pc = np.clip(pv, PROB_CLAMP, 1.0 - PROB_CLAMP)
    out_value = np.log(pc)
    inside = (pv > PROB_CLAMP) & (pv < 1.0 - PROB_CLAMP)

    def backward(g):
        _accum(p, np.where(inside, g / pc, 0.0))

    return _emit(out_value, backward)


def bernoulli_logprob(p, bits) -> Var:
    """Sum over coordinates of log-likelihood of the taken bits under probabilities p."""
    pv = _value(p)
    bv = np.asarray(bits, dtype=np.float64)
    if pv.shape != bv.shape:
        raise DimensionError(f"bernoulli_logprob: shapes {pv.shape} and {bv.shape} differ")
    pc = np.clip(pv, PROB_CLAMP, 1.0 - PROB_CLAMP)
    out_value = np.asarray((bv * np.log(pc) + (1.0 - bv) * np.log(1.0 - pc)).sum())
    inside = (pv > PROB_CLAMP) & (pv < 1.0 - PROB_CLAMP)

    def backward(g):
        _accum(p, np.where(inside, float(g) * (bv / pc - (1.0 - bv) / (1.0 - pc)), 0.0))

    return _emit(out_value, backward)


def bernoulli_entropy_sum(p) -> Var:
    """Sum over coordinates of the Bernoulli entropy of p, in nats."""
    pv = _value(p)
    pc = np.clip(pv, PROB_CLAMP, 1.0 - PROB_CLAMP)
    out_value = np.asarray((-pc * np.log(pc) - (1.0 - pc) * np.log(1.0 - pc)).sum())
    inside = (pv > PROB_CLAMP) & (pv < 1.0 - PROB_CLAMP)

    def backward(g):
        # dH/dp = log((1-p)/p)
        _accum(p, np.where(inside, float(g) * (np.log(1.0 - pc) - np.log(pc)), 0.0))

    return _emit(out_value, backward)


class GruParams:
    """The nine tensors of a gated recurrent unit cell."""

    __slots__ = (
        "update_w", "update_u", "update_b",
        "reset_w", "reset_u", "reset_b",
        "cand_w", "cand_u", "cand_b",
    )

    def __init__(self, update_w, update_u, update_b, reset_w, reset_u, reset_b,
                 cand_w, cand_u, cand_b):
        self.update_w = update_w
        self.update_u = update_u
        self.update_b = update_b
        self.reset_w = reset_w
        self.reset_u = reset_u
        self.reset_b = reset_b
        self.cand_w = cand_w
        self.cand_u = cand_u
        self.cand_b = cand_b

    def tensors(self):
        return [getattr(self, f) for f in self.__slots__]


def gru_step(x, h, params: GruParams) -> Var:
    """One gated-recurrent-unit update.

    z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
    cand = tanh(Wc x + Uc (r*h) + bc), out = (1-z)*h + z*cand.
    """
    xv, hv = _value(x), _value(h)
    p = params
    Wz, Uz, bz = _value(p.update_w), _value(p.update_u), _value(p.update_b)
    Wr, Ur, br = _value(p.reset_w), _value(p.reset_u), _value(p.reset_b)
    Wc, Uc, bc = _value(p.cand_w), _value(p.cand_u), _value(p.cand_b)
    q = hv.shape[0]
    if Wz.shape != (q, xv.shape[0]) or Uz.shape != (q, q):
        raise DimensionError(
            f"gru_step: memory size {q}, input size {xv.shape[0]} do not match "
            f"{_name(p.update_w, 'update_w')}{Wz.shape} / {_name(p.update_u, 'update_u')}{Uz.shape}"
        )

    z = _sigmoid_value(Wz @ xv + Uz @ hv + bz)
    r = _sigmoid_value(Wr @ xv + Ur @ hv + br)
    rh = r * hv
    cand = np.tanh(Wc @ xv + Uc @ rh + bc)
    out_value = (1.0 - z) * hv + z * cand

    def backward(g):
        dz = g * (cand - hv) * z * (1.0 - z)
        dcand_pre = g * z * (1.0 - cand * cand)
        dh = g * (1.0 - z)

        _accum(p.cand_w, np.outer(dcand_pre, xv))
        _accum(p.cand_u, np.outer(dcand_pre, rh))
        _accum(p.cand_b, dcand_pre)
        drh = Uc.T @ dcand_pre
        dr_pre = drh * hv * r * (1.0 - r)
        dh += drh * r

        _accum(p.reset_w, np.outer(dr_pre, xv))
        _accum(p.reset_u, np.outer(dr_pre, hv))
        _accum(p.reset_b, dr_pre)
        dh += Ur.T @ dr_pre

        _accum(p.update_w, np.outer(dz, xv))
        _accum(p.update_u, np.outer(dz, hv))
        _accum(p.update_b, dz)
        dh += Uz.T @ dz

        _accum(h, dh)
        _accum(x, Wz.T @ dz + Wr.T @ dr_pre + Wc.T @ dcand_pre)

    return _emit(out_value, backward)
