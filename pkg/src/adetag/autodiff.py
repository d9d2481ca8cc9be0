"""Reverse-mode automatic differentiation over dense float64 tensors.

Every differentiable operation records a node onto the innermost active
Tape; Tape.backward replays the records in reverse, accumulating
gradients into every tensor that requires them. Tapes are rebuilt per
sample (dynamic graphs), so variable sequence lengths need no padding.
With no tape active, ops run forward-only.
"""

import threading

import numpy as np

PROB_FLOOR = 1e-12
MASK_OFFSET = -1e30


class ShapeMismatch(ValueError):
    pass


class DegenerateMaskError(ValueError):
    pass


_DEBUG = False


def set_debug_checks(enabled):
    """Enable NaN/Inf checks on every op output (slow, for tests)."""
    global _DEBUG
    _DEBUG = bool(enabled)


_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


class Tensor:
    """Dense float64 array, optionally participating in the grad graph."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Operation records in construction order; inputs always precede
    their consumers, so reversing the list is a reverse-topological walk."""

    def __init__(self):
        self._nodes = []  # (output tensor, backward fn) pairs

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        """Populate .grad on every requires_grad tensor reachable from loss.

        Gradients accumulate: repeated uses of a tensor inside the tape sum,
        and parameter grads sum across tapes until explicitly zeroed.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.accumulate(np.ones_like(loss.data))
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)


def _emit(data, inputs, backward):
    """Build the op output and record it on the active tape (if any)."""
    rg = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rg)
    if _DEBUG and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values in op output")
    stack = _tape_stack()
    if stack and rg:
        stack[-1]._nodes.append((out, backward))
    return out


def matmul(a, b):
    """Matrix product; supports 2D@2D, 2D@1D, 1D@2D and 1D@1D."""
    am, bm = a.data, b.data
    if am.shape[-1] != bm.shape[0]:
        raise ShapeMismatch(f"matmul inner dimensions disagree: {am.shape} @ {bm.shape}")

    out_data = am @ bm

    def backward(g):
        if a.requires_grad:
            if am.ndim == 2 and bm.ndim == 2:
                a.accumulate(g @ bm.T)
            elif am.ndim == 2 and bm.ndim == 1:
                a.accumulate(np.outer(g, bm))
            elif am.ndim == 1 and bm.ndim == 2:
                a.accumulate(bm @ g)
            else:
                a.accumulate(g * bm)
        if b.requires_grad:
            if am.ndim == 2 and bm.ndim == 2:
                b.accumulate(am.T @ g)
            elif am.ndim == 2 and bm.ndim == 1:
                b.accumulate(am.T @ g)
            elif am.ndim == 1 and bm.ndim == 2:
                b.accumulate(np.outer(am, g))
            else:
                b.accumulate(g * am)

    return _emit(out_data, (a, b), backward)


def add(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add shapes disagree: {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _emit(out_data, (a, b), backward)


def mul(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul shapes disagree: {a.shape} vs {b.shape}")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _emit(out_data, (a, b), backward)


def scale(a, c):
    """Multiply by a plain python scalar."""
    c = float(c)
    out_data = a.data * c

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * c)

    return _emit(out_data, (a,), backward)


def tanh_op(a):
    y = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate((1.0 - y * y) * g)

    return _emit(y, (a,), backward)


def sigmoid_op(a):
    x = a.data
    # two-branch form avoids overflow in exp for large |x|
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        if a.requires_grad:
            a.accumulate(y * (1.0 - y) * g)

    return _emit(y, (a,), backward)


def concat(parts, axis=0):
    """Concatenate along one axis; gradient slices route back to parts."""
    if not parts:
        raise ValueError("concat of zero parts")
    ndim = parts[0].data.ndim
    if not 0 <= axis < ndim:
        raise ShapeMismatch(f"concat axis {axis} out of range for {ndim}-d parts")
    ref = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != ndim or any(r != o for i, (r, o) in enumerate(zip(ref, other)) if i != axis):
            raise ShapeMismatch(f"concat parts disagree off-axis: {parts[0].shape} vs {p.shape}")
    sizes = [p.shape[axis] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)

    def backward(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                index = [slice(None)] * ndim
                index[axis] = slice(offset, offset + size)
                p.accumulate(g[tuple(index)])
            offset += size

    return _emit(out_data, tuple(parts), backward)


def stack(parts):
    """Stack same-shape tensors along a new leading axis."""
    if not parts:
        raise ValueError("stack of zero parts")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.shape != ref:
            raise ShapeMismatch(f"stack parts disagree: {ref} vs {p.shape}")
    out_data = np.stack([p.data for p in parts])

    def backward(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p.accumulate(g[i])

    return _emit(out_data, tuple(parts), backward)


def segment(a, start, stop):
    """Copy of rows [start, stop) along axis 0."""
    n = a.data.shape[0]
    if not (0 <= start < stop <= n):
        raise ShapeMismatch(f"segment [{start}, {stop}) out of range for axis length {n}")
    out_data = a.data[start:stop].copy()

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[start:stop] += g

    return _emit(out_data, (a,), backward)


def reshape(a, shape):
    out_data = a.data.reshape(shape).copy()

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    return _emit(out_data, (a,), backward)


def sum_op(a):
    out_data = np.asarray(a.data.sum())

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.ones_like(a.data) * g)

    return _emit(out_data, (a,), backward)


def windows(a, width):
    """Unfold an n x d matrix into overlapping flattened rows of `width`
    consecutive input rows: output is (n - width + 1) x (width * d)."""
    if a.data.ndim != 2:
        raise ShapeMismatch(f"windows needs a matrix, got shape {a.shape}")
    n, d = a.data.shape
    if width < 1 or width > n:
        raise ShapeMismatch(f"window width {width} invalid for {n} rows")
    count = n - width + 1
    out_data = np.empty((count, width * d))
    for j in range(width):
        out_data[:, j * d:(j + 1) * d] = a.data[j:j + count]

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            for j in range(width):
                a.grad[j:j + count] += g[:, j * d:(j + 1) * d]

    return _emit(out_data, (a,), backward)


def max_over_rows(a):
    """Column-wise max of a matrix; gradient routes to the first argmax row."""
    if a.data.ndim != 2:
        raise ShapeMismatch(f"max_over_rows needs a matrix, got shape {a.shape}")
    idx = np.argmax(a.data, axis=0)
    cols = np.arange(a.data.shape[1])
    out_data = a.data[idx, cols].copy()

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, (idx, cols), g)

    return _emit(out_data, (a,), backward)


def softmax(a, mask=None):
    """Stable softmax over a vector, optionally restricted to unmasked
    positions. Masked logits get an additive -1e30 before max-subtraction,
    masked outputs are exactly 0, and the rest renormalize to sum 1."""
    x = a.data
    if x.ndim != 1 or x.size < 1:
        raise ShapeMismatch(f"softmax needs a non-empty vector, got shape {a.shape}")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != x.shape:
            raise ShapeMismatch(f"mask shape {m.shape} does not match input {x.shape}")
        if not m.any():
            raise DegenerateMaskError("softmax over an all-masked vector")
        z = np.where(m, x, x + MASK_OFFSET)
    else:
        m = None
        z = x
    z = z - z.max()
    e = np.exp(z)
    if m is not None:
        e = np.where(m, e, 0.0)
    p = e / e.sum()

    def backward(g):
        if a.requires_grad:
            # rows of the softmax Jacobian collapse to p * (g - <g, p>);
            # masked entries have p == 0 so they receive exactly 0
            a.accumulate(p * (g - np.dot(g, p)))

    return _emit(p, (a,), backward)


def lookup(table, index):
    """Row copy from an embedding matrix; backward touches only that row.
    Frozen tables (requires_grad False) accumulate nothing."""
    v = table.data.shape[0]
    if not 0 <= index < v:
        raise IndexError(f"lookup index {index} out of range for table with {v} rows")
    out_data = table.data[index].copy()

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            table.grad[index] += g

    return _emit(out_data, (table,), backward)


def dropout(a, rate, training, rng):
    """Inverted dropout: zero with probability `rate`, scale survivors by
    1/(1-rate). Identity outside training mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return a
    keep = rng.random(a.data.shape) >= rate
    factor = keep / (1.0 - rate)
    out_data = a.data * factor

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * factor)

    return _emit(out_data, (a,), backward)


def cross_entropy(pred_dist, gold):
    """-log(p[gold]) with a 1e-12 probability floor before the log."""
    p = pred_dist.data
    if p.ndim != 1:
        raise ShapeMismatch(f"cross_entropy needs a distribution vector, got {pred_dist.shape}")
    if not 0 <= gold < p.size:
        raise IndexError(f"gold class {gold} out of range for {p.size} classes")
    pg = p[gold]
    floored = max(pg, PROB_FLOOR)
    out_data = np.asarray(-np.log(floored))

    def backward(g):
        if pred_dist.requires_grad:
            if pred_dist.grad is None:
                pred_dist.grad = np.zeros_like(p)
            if pg > PROB_FLOOR:
                pred_dist.grad[gold] += -float(g) / pg

    return _emit(out_data, (pred_dist,), backward)


def add_n(parts):
    """Sum a non-empty list of same-shape tensors."""
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out


def finite_diff_check(f, x, h=1e-5):
    """Max relative error between the analytic gradient of scalar f(x)
    and central finite differences, coordinate by coordinate.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    f must be deterministic; it is re-run forward-only 2 per coordinate.
    """
    was = x.requires_grad
    x.requires_grad = True
    x.zero_grad()
    with Tape() as tape:
        loss = f(x)
    tape.backward(loss)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    x.zero_grad()
    x.requires_grad = was

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
