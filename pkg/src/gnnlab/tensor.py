"""Dense tensors with reverse-mode autodiff, CSR sparse matrices, and Adam.

Everything is float64. Results of sanctioned ops are checked for NaN/Inf so
numerical blowups surface as errors instead of corrupting a training run.
"""

import numpy as np


class DimensionError(ValueError):
    """Shapes passed to an operation do not agree."""


def _ensure_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


def _as_array(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 ndarray plus reverse-mode gradient bookkeeping.

    Ops build a DAG; call ``backward()`` on a scalar result to populate
    ``grad`` on every tensor created with ``requires_grad=True``. A second
    ``backward()`` on the same result is an error (no silent accumulation).
    """

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._backward_done = False
        # optimizer hint: weight matrices get weight decay, biases/gates don't
        self.decay = True

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        if self._backward_done:
            raise RuntimeError("backward() already ran on this graph")
        self._backward_done = True

        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self):
        return Tensor(self.data.copy())

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _topo_order(root):
    """Reverse topological order, iterative (graphs can be hundreds deep)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return list(reversed(order))


def _result(data, parents, backward, op):
    _ensure_finite(data, op)
    out = Tensor(data)
    needs = [p for p in parents if isinstance(p, Tensor) and _needs_grad(p)]
    if needs:
        out.requires_grad = True
        out._parents = tuple(needs)
        out._backward = backward
    return out


def _needs_grad(t):
    return t.requires_grad


def _accum(t, g):
    if not _needs_grad(t):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# core ops


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(out_data, (a, b), backward, "matmul")


def add(a, b):
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(out_data, (a, b), backward, "add")


def mul(a, b):
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out_data, (a, b), backward, "mul")


def scale(a, s):
    s = float(s)

    def backward(g):
        _accum(a, g * s)

    return _result(a.data * s, (a,), backward, "scale")


def scale_by(a, s):
    """Multiply tensor `a` by a learnable one-element tensor `s`."""
    if s.data.size != 1:
        raise DimensionError("scale_by: scalar tensor required")
    sv = float(s.data.reshape(()))
    out_data = a.data * sv

    def backward(g):
        _accum(a, g * sv)
        _accum(s, np.array(np.sum(g * a.data)).reshape(s.data.shape))

    return _result(out_data, (a, s), backward, "scale_by")


def relu(a):
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _result(a.data * mask, (a,), backward, "relu")


def leaky_relu(a, slope=0.2):
    factor = np.where(a.data > 0, 1.0, slope)

    def backward(g):
        _accum(a, g * factor)

    return _result(a.data * factor, (a,), backward, "leaky_relu")


def sigmoid(a):
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _result(out_data, (a,), backward, "sigmoid")


def dropout(a, p, rng):
    """Zero entries with probability p, rescale survivors by 1/(1-p).

    `rng` is a numpy Generator; pass `dropout_rng(seed, layer, epoch)` for the
    counter-based scheme that keeps parallel sweeps reproducible.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability out of range: {p}")
    if p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)

    def backward(g):
        _accum(a, g * keep)

    return _result(a.data * keep, (a,), backward, "dropout")


def dropout_rng(seed, layer_id, epoch):
    """Per-call generator keyed by (global seed, layer id, epoch)."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), int(layer_id), int(epoch)]))


def row_softmax(a):
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = np.sum(g * out_data, axis=1, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _result(out_data, (a,), backward, "row_softmax")


def log_row_softmax(a):
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def backward(g):
        _accum(a, g - soft * g.sum(axis=1, keepdims=True))

    return _result(out_data, (a,), backward, "log_row_softmax")


def sum_all(a):
    def backward(g):
        _accum(a, np.full_like(a.data, float(g.reshape(()))))

    return _result(np.array(a.data.sum()).reshape(()), (a,), backward, "sum_all")


def concat_cols(tensors):
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=1)
    splits = np.cumsum([d.shape[1] for d in datas])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=1)):
            _accum(t, piece)

    return _result(out_data, tuple(tensors), backward, "concat_cols")


def maximum(a, b):
    """Entrywise max; ties route the gradient to the first argument."""
    take_a = a.data >= b.data

    def backward(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _result(np.where(take_a, a.data, b.data), (a, b), backward, "maximum")


def gather_rows(a, idx):
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        _accum(a, acc)

    return _result(a.data[idx], (a,), backward, "gather_rows")


def element(a, i, j):
    """Extract entry (i, j) as a 0-d tensor (used for combine weights)."""
    def backward(g):
        acc = np.zeros_like(a.data)
        acc[i, j] = float(g.reshape(()))
        _accum(a, acc)

    return _result(np.array(a.data[i, j]).reshape(()), (a,), backward, "element")


# ---------------------------------------------------------------------------
# segment ops (per-neighborhood reductions for attention layers)


class Segments:
    """Contiguous row segments of an edge array, e.g. edges grouped by target."""

    def __init__(self, offsets, n_segments):
        self.offsets = np.asarray(offsets, dtype=np.intp)
        self.n = int(n_segments)
        counts = np.diff(self.offsets)
        self.counts = counts
        self.ids = np.repeat(np.arange(self.n), counts)

    def reduce_sum(self, arr):
        out = np.zeros((self.n,) + arr.shape[1:], dtype=np.float64)
        nonempty = self.counts > 0
        if nonempty.any():
            out[nonempty] = np.add.reduceat(
                arr, self.offsets[:-1][nonempty], axis=0)
        return out

    def expand(self, arr):
        return arr[self.ids]


def segment_sum(a, segments):
    def backward(g):
        _accum(a, segments.expand(g))

    return _result(segments.reduce_sum(a.data), (a,), backward, "segment_sum")


def segment_softmax(a, segments):
    """Softmax over each contiguous segment (column-wise)."""
    seg_max = np.full((segments.n,) + a.data.shape[1:], -np.inf)
    nonempty = segments.counts > 0
    seg_max[nonempty] = np.maximum.reduceat(
        a.data, segments.offsets[:-1][nonempty], axis=0)
    e = np.exp(a.data - segments.expand(seg_max))
    denom = segments.expand(segments.reduce_sum(e))
    out_data = e / denom

    def backward(g):
        dot = segments.expand(segments.reduce_sum(g * out_data))
        _accum(a, out_data * (g - dot))

    return _result(out_data, (a,), backward, "segment_softmax")


# ---------------------------------------------------------------------------
# sparse


class SparseMatrix:
    """Immutable CSR matrix with strictly increasing column indices per row."""

    def __init__(self, n_rows, n_cols, row_offsets, col_indices, values):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_offsets = np.asarray(row_offsets, dtype=np.intp)
        self.col_indices = np.asarray(col_indices, dtype=np.intp)
        self.values = np.asarray(values, dtype=np.float64)
        self._validate()
        self._transpose = None

    def _validate(self):
        if len(self.row_offsets) != self.n_rows + 1:
            raise DimensionError("row_offsets length must be n_rows + 1")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != len(self.col_indices):
            raise ValueError("row_offsets endpoints inconsistent with nnz")
        if len(self.values) != len(self.col_indices):
            raise DimensionError("values and col_indices must have equal length")
        if len(self.col_indices):
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols:
                raise IndexError("column index out of range")
        if len(self.col_indices) > 1:
            # strictly increasing within each row: every adjacent pair must
            # increase unless the second element starts a new row
            row_start = np.zeros(len(self.col_indices), dtype=bool)
            starts = self.row_offsets[1:-1]
            row_start[starts[starts < len(self.col_indices)]] = True
            bad = (np.diff(self.col_indices) <= 0) & ~row_start[1:]
            if bad.any():
                i = int(np.searchsorted(self.row_offsets,
                                        np.flatnonzero(bad)[0], "right")) - 1
                raise ValueError(f"columns not strictly increasing in row {i}")

    @property
    def nnz(self):
        return len(self.values)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, vals):
        """Build from coordinate triplets; duplicates are summed."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        vals = np.asarray(vals, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            keep = np.ones(len(rows), dtype=bool)
            keep[1:] = (np.diff(rows) != 0) | (np.diff(cols) != 0)
            group = np.cumsum(keep) - 1
            summed = np.zeros(group[-1] + 1)
            np.add.at(summed, group, vals)
            rows, cols, vals = rows[keep], cols[keep], summed
        offsets = np.zeros(n_rows + 1, dtype=np.intp)
        np.add.at(offsets, rows + 1, 1)
        offsets = np.cumsum(offsets)
        return cls(n_rows, n_cols, offsets, cols, vals)

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        return cls.from_coo(dense.shape[0], dense.shape[1], rows, cols,
                            dense[rows, cols])

    @classmethod
    def identity(cls, n):
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols))
        row_ids = np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))
        out[row_ids, self.col_indices] = self.values
        return out

    def transpose(self):
        if self._transpose is None:
            row_ids = np.repeat(np.arange(self.n_rows),
                                np.diff(self.row_offsets))
            self._transpose = SparseMatrix.from_coo(
                self.n_cols, self.n_rows, self.col_indices, row_ids, self.values)
        return self._transpose

    def dot(self, dense):
        """self @ dense with left-to-right accumulation per output entry.

        Rows are grouped by nnz count so each accumulation step is one
        vectorized add, while the per-row summation order stays strictly
        sequential in column-index order (bit-reproducible and matched by
        the dense reference used in tests).
        """
        dense = np.asarray(dense, dtype=np.float64)
        if dense.shape[0] != self.n_cols:
            raise DimensionError(
                f"spmm: {self.shape} x {dense.shape} inner dims disagree")
        out = np.zeros((self.n_rows, dense.shape[1]))
        if not self.nnz:
            return out
        prod = self.values[:, None] * dense[self.col_indices]
        counts = np.diff(self.row_offsets)
        order = np.argsort(counts, kind="stable")
        sorted_counts = counts[order]
        starts = self.row_offsets[:-1]
        lo = int(np.searchsorted(sorted_counts, 1))
        active = order[lo:]
        out[active] = prod[starts[active]]
        step = 1
        max_count = int(sorted_counts[-1])
        while step < max_count:
            lo = int(np.searchsorted(sorted_counts, step + 1))
            active = order[lo:]
            out[active] += prod[starts[active] + step]
            step += 1
        return out

    def scale_values(self, factors):
        """New matrix with values multiplied entrywise (same sparsity)."""
        return SparseMatrix(self.n_rows, self.n_cols, self.row_offsets,
                            self.col_indices, self.values * factors)


def spmm(s, d):
    """Sparse @ dense. Gradient flows into the dense factor only."""
    out_data = s.dot(d.data)

    def backward(g):
        _accum(d, s.transpose().dot(g))

    return _result(out_data, (d,), backward, "spmm")


# ---------------------------------------------------------------------------
# optimizer


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=0.0):
    """One Adam step on a list of ndarrays, updating them in place.

    Weight decay is decoupled and applied before the adaptive update.
    `state` is a dict with keys "t", "m", "v"; pass {} for a fresh start.
    """
    if not state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    for p, g, m in zip(params, grads, state["m"]):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError("adam_step: param/grad/state shape mismatch")
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if weight_decay:
            p *= (1.0 - lr * weight_decay)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


class Adam:
    """Adam with decoupled weight decay over Tensor parameters.

    Parameters with ``decay=False`` (biases, gates) skip weight decay.
    ``weight_decay2``, when set, applies to params flagged ``decay="conv"``
    (the per-layer propagation weights of the deep variants).
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0, weight_decay2=None):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.weight_decay2 = weight_decay2
        self._states = [{} for _ in self.params]

    def _wd(self, p):
        if p.decay is False:
            return 0.0
        if p.decay == "conv" and self.weight_decay2 is not None:
            return self.weight_decay2
        return self.weight_decay

    def step(self):
        for p, st in zip(self.params, self._states):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step([p.data], [g], st, self.lr, self.beta1, self.beta2,
                      self.eps, self._wd(p))

    def zero_grad(self):
        for p in self.params:
            p.grad = None
