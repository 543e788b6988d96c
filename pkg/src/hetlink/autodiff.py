"""Minimal dense tensor algebra with recorded-operation reverse-mode gradients.

Tensors are float64 numpy arrays of at most two dimensions (scalars are
0-d).  Every operation records itself on a :class:`Tape`; calling
``tape.backward(root)`` on a scalar root replays the tape in strict reverse
order and accumulates gradients for every recorded tensor.  A tape is
confined to a single thread; separate tapes share nothing.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeMismatchError(f"tensors are at most 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """A node on a tape: a float64 array plus the recipe that produced it."""

    __slots__ = ("data", "tape", "node_id", "_parents", "_backward")

    def __init__(self, data, tape: "Tape", parents=(), backward=None):
        self.data = _as_array(data)
        self.tape = tape
        self._parents = parents
        self._backward = backward
        self.node_id = tape._record(self)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, node={self.node_id})"


class Gradients:
    """Gradient buffers produced by one backward pass, keyed by tape node."""

    def __init__(self, buffers: dict, tape: "Tape"):
        self._buffers = buffers
        self._tape = tape

    def wrt(self, t: Tensor) -> np.ndarray:
        """d(root)/d(t); zeros when the root does not depend on t."""
        if t.tape is not self._tape:
            raise ValueError("tensor was recorded on a different tape")
        g = self._buffers.get(t.node_id)
        if g is None:
            return np.zeros_like(t.data)
        return g


class Tape:
    """Append-only record of operations, in construction (topological) order."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def _record(self, t: Tensor) -> int:
        self._nodes.append(t)
        return len(self._nodes) - 1

    def __len__(self):
        return len(self._nodes)

    def tensor(self, data) -> Tensor:
        """Record a leaf tensor (parameter or input)."""
        return Tensor(data, self)

    def constant(self, data) -> Tensor:
        """Alias for :meth:`tensor`; a leaf whose gradient is simply unused."""
        return Tensor(data, self)

    def backward(self, root: Tensor) -> Gradients:
        """Accumulate d(root)/dx for every tensor on the tape.

        Visits nodes in strict reverse recording order exactly once, so two
        runs over the same tape produce bit-identical buffers.
        """
        if root.tape is not self:
            raise ValueError("root tensor belongs to a different tape")
        if root.data.shape != ():
            raise ShapeMismatchError(
                f"backward requires a scalar root, got shape {root.data.shape}"
            )
        buffers: dict[int, np.ndarray] = {root.node_id: np.ones(())}
        for node in reversed(self._nodes[: root.node_id + 1]):
            grad = buffers.get(node.node_id)
            if grad is None or node._backward is None:
                continue
            for parent, contribution in node._backward(grad):
                acc = buffers.get(parent.node_id)
                if acc is None:
                    buffers[parent.node_id] = np.array(contribution, dtype=np.float64)
                else:
                    acc += contribution
        return Gradients(buffers, self)


def _same_tape(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("operands were recorded on different tapes")
    return tape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product with numpy 1-D semantics.

    Supports (m,k)@(k,n), (m,k)@(k,), (k,)@(k,n) and (k,)@(k,)->scalar.
    """
    tape = _same_tape(a, b)
    ka = a.data.shape[-1] if a.data.ndim else None
    kb = b.data.shape[0] if b.data.ndim else None
    if a.data.ndim == 0 or b.data.ndim == 0 or ka is None or ka != kb:
        raise ShapeMismatchError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.data.ndim == 2 and b.data.ndim == 2:
            return ((a, g @ b.data.T), (b, a.data.T @ g))
        if a.data.ndim == 2 and b.data.ndim == 1:
            return ((a, np.outer(g, b.data)), (b, a.data.T @ g))
        if a.data.ndim == 1 and b.data.ndim == 2:
            return ((a, b.data @ g), (b, np.outer(a.data, g)))
        return ((a, g * b.data), (b, g * a.data))

    return Tensor(out, tape, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"add: shape {a.shape} vs {b.shape}")
    return Tensor(a.data + b.data, tape, (a, b), lambda g: ((a, g), (b, g)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.data * c, a.tape, (a,), lambda g: ((a, g * c),))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.data + c, a.tape, (a,), lambda g: ((a, g),))


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"elementwise_mul: shape {a.shape} vs {b.shape}")
    return Tensor(
        a.data * b.data, tape, (a, b), lambda g: ((a, g * b.data), (b, g * a.data))
    )


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 0 (element-wise for 1-D inputs)."""
    if not parts:
        raise ValueError("concat_rows of nothing")
    tape = _same_tape(*parts)
    ndim = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != ndim:
            raise ShapeMismatchError(
                f"concat_rows: mixed ranks {[q.shape for q in parts]}"
            )
    out = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            (p, g[offsets[i] : offsets[i + 1]]) for i, p in enumerate(parts)
        )

    return Tensor(out, tape, tuple(parts), backward)


def narrow(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along axis 0."""
    if a.data.ndim == 0:
        raise ShapeMismatchError("narrow needs at least 1-D input")
    out = a.data[start:stop]

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return ((a, full),)

    return Tensor(out, a.tape, (a,), backward)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    """Elementwise max(x, slope*x); the subgradient at 0 takes the positive branch."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    mask = a.data >= 0.0
    out = np.where(mask, a.data, slope * a.data)
    return Tensor(
        out, a.tape, (a,), lambda g: ((a, g * np.where(mask, 1.0, slope)),)
    )


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return Tensor(out, a.tape, (a,), lambda g: ((a, g * out * (1.0 - out)),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, a.tape, (a,), lambda g: ((a, g * out),))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), a.tape, (a,), lambda g: ((a, g / a.data),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through where the input is inside."""
    inside = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, lo, hi)
    return Tensor(out, a.tape, (a,), lambda g: ((a, g * inside),))


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    return Tensor(
        a.data.sum(), a.tape, (a,), lambda g: ((a, np.full_like(a.data, float(g))),)
    )


def row_sum(a: Tensor) -> Tensor:
    """Sum each row of a matrix into a vector."""
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"row_sum needs a matrix, got shape {a.shape}")
    return Tensor(
        a.data.sum(axis=1),
        a.tape,
        (a,),
        lambda g: ((a, np.repeat(g[:, None], a.data.shape[1], axis=1)),),
    )


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-d vector to every row of an (n, d) matrix."""
    tape = _same_tape(a, v)
    if a.data.ndim != 2 or v.data.ndim != 1 or a.data.shape[1] != v.data.shape[0]:
        raise ShapeMismatchError(f"add_rowvec: shape {a.shape} vs {v.shape}")
    return Tensor(
        a.data + v.data[None, :],
        tape,
        (a, v),
        lambda g: ((a, g), (v, g.sum(axis=0))),
    )


def scale_rows(a: Tensor, v: Tensor) -> Tensor:
    """Multiply row i of a matrix by v[i]."""
    tape = _same_tape(a, v)
    if a.data.ndim != 2 or v.data.ndim != 1 or a.data.shape[0] != v.data.shape[0]:
        raise ShapeMismatchError(f"scale_rows: shape {a.shape} vs {v.shape}")
    return Tensor(
        a.data * v.data[:, None],
        tape,
        (a, v),
        lambda g: ((a, g * v.data[:, None]), (v, (g * a.data).sum(axis=1))),
    )


def gather(a: Tensor, indices) -> Tensor:
    """Select rows (or 1-D elements) by integer index; repeats allowed."""
    idx = np.asarray(indices, dtype=np.intp)
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return ((a, full),)

    return Tensor(out, a.tape, (a,), backward)


def scatter_rows(a: Tensor, indices, size: int) -> Tensor:
    """Add rows (or 1-D elements) of `a` into a zero output of `size` rows.

    Duplicate indices accumulate.
    """
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape[0] != a.data.shape[0]:
        raise ShapeMismatchError(
            f"scatter_rows: {idx.shape[0]} indices for {a.data.shape[0]} rows"
        )
    out = np.zeros((size,) + a.data.shape[1:], dtype=np.float64)
    np.add.at(out, idx, a.data)
    return Tensor(out, a.tape, (a,), lambda g: ((a, g[idx]),))


def broadcast_scalar(a: Tensor, size: int) -> Tensor:
    """Repeat a scalar tensor into a length-`size` vector."""
    if a.data.shape != ():
        raise ShapeMismatchError(f"broadcast_scalar needs a scalar, got {a.shape}")
    return Tensor(
        np.full(size, float(a.data)), a.tape, (a,), lambda g: ((a, g.sum()),)
    )


def lincomb(coeffs: Tensor, mats: Sequence[Tensor]) -> Tensor:
    """Linear combination sum_b coeffs[b] * mats[b] of same-shape matrices."""
    tape = _same_tape(coeffs, *mats)
    if coeffs.data.ndim != 1 or coeffs.data.shape[0] != len(mats):
        raise ShapeMismatchError(
            f"lincomb: {coeffs.data.shape} coefficients for {len(mats)} matrices"
        )
    out = np.zeros_like(mats[0].data)
    for c, m in zip(coeffs.data, mats):
        out += c * m.data

    def backward(g):
        grads = [(coeffs, np.array([(g * m.data).sum() for m in mats]))]
        grads.extend((m, coeffs.data[b] * g) for b, m in enumerate(mats))
        return tuple(grads)

    return Tensor(out, tape, (coeffs,) + tuple(mats), backward)


def masked_softmax(scores: Tensor, group_offsets) -> Tensor:
    """Softmax within each contiguous group of a 1-D score vector.

    ``group_offsets`` is an increasing int array of length G+1; group i
    spans scores[group_offsets[i]:group_offsets[i+1]].  Each group is
    stabilized by subtracting its max before exponentiation, so outputs
    are invariant to a constant shift of a group's scores.
    """
    if scores.data.ndim != 1:
        raise ShapeMismatchError(f"masked_softmax needs a vector, got {scores.shape}")
    offsets = np.asarray(group_offsets, dtype=np.intp)
    if offsets.ndim != 1 or len(offsets) < 2 or offsets[0] != 0 \
            or offsets[-1] != scores.data.shape[0]:
        raise ValueError("group offsets must start at 0 and end at len(scores)")
    if np.any(np.diff(offsets) <= 0):
        raise ValueError("masked_softmax: empty group")
    starts = offsets[:-1]
    lengths = np.diff(offsets)
    group_max = np.repeat(np.maximum.reduceat(scores.data, starts), lengths)
    e = np.exp(scores.data - group_max)
    denom = np.repeat(np.add.reduceat(e, starts), lengths)
    out = e / denom

    def backward(g):
        dots = np.repeat(np.add.reduceat(g * out, starts), lengths)
        return ((scores, out * (g - dots)),)

    return Tensor(out, scores.tape, (scores,), backward)
