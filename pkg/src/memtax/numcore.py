"""Dense rank-<=2 float64 tensors with tape-based reverse-mode differentiation.

Every differentiable value is a `Tensor` recorded on a `Tape`.  Operations
compute eagerly with numpy and append one node per result; `Tape.backward`
walks the recording in reverse topological order (which is just reverse
creation order) and accumulates gradients by summation.

`finite_diff` is an independent central-difference oracle.  It never touches
the tape machinery and exists so the analytic gradients can be checked against
a second route.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class DomainError(ValueError):
    """Operand values outside an operation's numeric domain."""


CE_CLAMP = 1e-12  # lower clamp for predicted probabilities inside cross_entropy


def _as_matrix(value):
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise ShapeError("tensors are rank <= 2, got shape %s" % (a.shape,))
    return a


class Tensor:
    """One node of a tape recording: a float64 matrix plus its provenance."""

    __slots__ = ("data", "tape", "idx", "op", "parents", "aux")

    def __init__(self, data, tape, idx, op, parents, aux=None):
        self.data = data
        self.tape = tape
        self.idx = idx
        self.op = op
        self.parents = parents
        self.aux = aux

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ShapeError("item() on tensor of shape %s" % (self.shape,))
        return float(self.data[0, 0])

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return "Tensor(op=%s, shape=%s, idx=%d)" % (self.op, self.shape, self.idx)


class Gradients:
    """Gradient lookup for one backward pass."""

    def __init__(self, slots):
        self._slots = slots

    def wrt(self, tensor):
        """Gradient of the backward root with respect to `tensor`.

        Tensors the root does not depend on get an all-zero gradient.
        """
        g = self._slots[tensor.idx]
        if g is None:
            return np.zeros_like(tensor.data)
        return g


class Tape:
    """Append-only recording of tensor operations."""

    def __init__(self):
        self.nodes = []

    def _record(self, data, op, parents, aux=None):
        for p in parents:
            if p.tape is not self:
                raise ValueError("operand belongs to a different tape")
        t = Tensor(data, self, len(self.nodes), op, parents, aux)
        self.nodes.append(t)
        return t

    def leaf(self, value):
        """Enter a value (parameter, input, or constant) as a leaf tensor."""
        return self._record(_as_matrix(value).copy(), "leaf", ())

    def scalar(self, value):
        return self._record(np.array([[float(value)]]), "leaf", ())

    def zeros(self, rows, cols=1):
        return self._record(np.zeros((rows, cols)), "leaf", ())

    def backward(self, root):
        """Accumulate d(root)/d(node) for every node that feeds `root`.

        `root` must be scalar (1x1).  Returns a `Gradients` lookup.
        """
        if root.tape is not self:
            raise ValueError("root recorded on a different tape")
        if root.shape != (1, 1):
            raise ShapeError("backward root must be 1x1, got %s" % (root.shape,))
        slots = [None] * (root.idx + 1)
        slots[root.idx] = np.ones((1, 1))
        for i in range(root.idx, -1, -1):
            g = slots[i]
            if g is None:
                continue
            node = self.nodes[i]
            if node.op == "leaf":
                continue
            for parent, contrib in zip(node.parents, _BACKWARD[node.op](node, g)):
                if contrib is None:
                    continue
                if slots[parent.idx] is None:
                    slots[parent.idx] = contrib
                else:
                    # out-of-place: contributions may alias upstream buffers
                    slots[parent.idx] = slots[parent.idx] + contrib
        return Gradients(slots)


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError("%s: shapes %s and %s differ" % (op, a.shape, b.shape))


# ---------------------------------------------------------------------------
# forward ops


def add(a, b):
    _check_same_shape(a, b, "add")
    return a.tape._record(a.data + b.data, "add", (a, b))


def sub(a, b):
    _check_same_shape(a, b, "sub")
    return a.tape._record(a.data - b.data, "sub", (a, b))


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    _check_same_shape(a, b, "mul")
    return a.tape._record(a.data * b.data, "mul", (a, b))


def smul(s, t):
    """Scalar (1x1 tensor) times arbitrary tensor."""
    if s.shape != (1, 1):
        raise ShapeError("smul: scaling operand must be 1x1, got %s" % (s.shape,))
    return s.tape._record(s.data[0, 0] * t.data, "smul", (s, t))


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul: shapes %s and %s" % (a.shape, b.shape))
    return a.tape._record(a.data @ b.data, "matmul", (a, b))


def affine(w, x, b):
    """w @ x + b in one node (the workhorse of every cell step)."""
    if w.shape[1] != x.shape[0] or b.shape != (w.shape[0], x.shape[1]):
        raise ShapeError(
            "affine: shapes %s, %s, %s" % (w.shape, x.shape, b.shape)
        )
    return w.tape._record(w.data @ x.data + b.data, "affine", (w, x, b))


def affine2(w1, x1, w2, x2, b):
    """w1 @ x1 + w2 @ x2 + b in one node (two-input affine)."""
    if (
        w1.shape[1] != x1.shape[0]
        or w2.shape[1] != x2.shape[0]
        or w1.shape[0] != w2.shape[0]
        or x1.shape[1] != x2.shape[1]
        or b.shape != (w1.shape[0], x1.shape[1])
    ):
        raise ShapeError(
            "affine2: shapes %s@%s, %s@%s, %s"
            % (w1.shape, x1.shape, w2.shape, x2.shape, b.shape)
        )
    return w1.tape._record(
        w1.data @ x1.data + w2.data @ x2.data + b.data,
        "affine2",
        (w1, x1, w2, x2, b),
    )


def transpose(a):
    return a.tape._record(a.data.T.copy(), "transpose", (a,))


def concat_rows(tensors):
    """Stack tensors vertically.  All operands must share the column count."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_rows of nothing")
    cols = tensors[0].shape[1]
    for t in tensors[1:]:
        if t.shape[1] != cols:
            raise ShapeError(
                "concat_rows: column mismatch %s vs %s" % (tensors[0].shape, t.shape)
            )
    data = np.concatenate([t.data for t in tensors], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])
    return tensors[0].tape._record(data, "concat_rows", tuple(tensors), offsets)


def slice_rows(t, start, stop):
    """Rows start:stop as a new tensor (contiguous row range)."""
    if not (0 <= start <= stop <= t.shape[0]):
        raise ShapeError("slice_rows [%d:%d] of %s" % (start, stop, t.shape))
    return t.tape._record(t.data[start:stop].copy(), "slice_rows", (t,), (start, stop))


def sigmoid(t):
    # exp(-log(1 + exp(-x))) is overflow-safe in both tails
    out = np.exp(-np.logaddexp(0.0, -t.data))
    return t.tape._record(out, "sigmoid", (t,))


def tanh(t):
    return t.tape._record(np.tanh(t.data), "tanh", (t,))


def relu(t):
    return t.tape._record(np.maximum(t.data, 0.0), "relu", (t,))


def softmax(t):
    """Softmax over a column vector (n,1)."""
    if t.shape[1] != 1:
        raise ShapeError("softmax expects a column vector, got %s" % (t.shape,))
    z = t.data - t.data.max()
    e = np.exp(z)
    return t.tape._record(e / e.sum(), "softmax", (t,))


def vsum(t):
    """Sum of all entries -> 1x1."""
    return t.tape._record(np.array([[t.data.sum()]]), "sum", (t,))


def squared_error(pred, target):
    """Sum of squared differences -> 1x1."""
    _check_same_shape(pred, target, "squared_error")
    d = pred.data - target.data
    return pred.tape._record(np.array([[(d * d).sum()]]), "squared_error", (pred, target))


def cross_entropy(pred, target):
    """-sum(target * log(pred)) -> 1x1, with pred clamped to [1e-12, 1].

    `pred` must be positive everywhere (probabilities, e.g. a softmax output);
    nonpositive entries are a caller bug and raise DomainError.
    """
    _check_same_shape(pred, target, "cross_entropy")
    if np.any(pred.data <= 0.0):
        raise DomainError("cross_entropy: nonpositive predicted probability")
    p = np.clip(pred.data, CE_CLAMP, 1.0)
    val = -(target.data * np.log(p)).sum()
    return pred.tape._record(np.array([[val]]), "cross_entropy", (pred, target))


def lerp(gate, a, b):
    """gate * a + (1 - gate) * b with a 1x1 gate; gate=1 selects `a`."""
    if gate.shape != (1, 1):
        raise ShapeError("lerp: gate must be 1x1, got %s" % (gate.shape,))
    _check_same_shape(a, b, "lerp")
    s = gate.data[0, 0]
    return gate.tape._record(s * a.data + (1.0 - s) * b.data, "lerp", (gate, a, b))


def stack_blend(slots, cand, d):
    """One step of a differentiable stack: blend push/pop/no-op continuations.

    slots: (D, W) with the top at row 0.  cand: (W, 1) candidate word.
    d: (3, 1) signal strengths (push, pop, no-op).  Returns (D+1, W):

        d0 * [cand^T; slots]  +  d1 * [slots[1:]; 0; 0]  +  d2 * [slots; 0]
    """
    depth, word = slots.shape
    if cand.shape != (word, 1) or d.shape != (3, 1):
        raise ShapeError(
            "stack_blend: slots %s, cand %s, d %s" % (slots.shape, cand.shape, d.shape)
        )
    d0, d1, d2 = d.data[:, 0]
    out = np.zeros((depth + 1, word))
    out[0] = d0 * cand.data[:, 0]
    out[1:] += d0 * slots.data
    out[: depth - 1] += d1 * slots.data[1:]
    out[:depth] += d2 * slots.data
    return slots.tape._record(out, "stack_blend", (slots, cand, d))


def write_rows(mem, keep, write, cand):
    """Per-row gated memory write: mem * keep + write @ cand^T.

    mem: (M, W); keep, write: (M, 1) per-row gates; cand: (W, 1) written word.
    """
    rows, word = mem.shape
    if keep.shape != (rows, 1) or write.shape != (rows, 1) or cand.shape != (word, 1):
        raise ShapeError(
            "write_rows: mem %s, keep %s, write %s, cand %s"
            % (mem.shape, keep.shape, write.shape, cand.shape)
        )
    out = mem.data * keep.data + write.data @ cand.data.T
    return mem.tape._record(out, "write_rows", (mem, keep, write, cand))


def _norm(x):
    return float(np.sqrt((x * x).sum()))


def cosine_similarity(a, b):
    """Cosine of the angle between two vectors -> 1x1."""
    _check_same_shape(a, b, "cosine_similarity")
    na, nb = _norm(a.data), _norm(b.data)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine_similarity: zero-norm operand")
    val = float((a.data * b.data).sum()) / (na * nb)
    return a.tape._record(np.array([[val]]), "cosine_similarity", (a, b))


def cosine_rows(m, key):
    """Cosine similarity of every row of m (M,W) against key (W,1) -> (M,1)."""
    if key.shape != (m.shape[1], 1):
        raise ShapeError("cosine_rows: memory %s vs key %s" % (m.shape, key.shape))
    row_norms = np.sqrt((m.data * m.data).sum(axis=1, keepdims=True))
    kn = _norm(key.data)
    if kn == 0.0 or np.any(row_norms == 0.0):
        raise DomainError("cosine_rows: zero-norm row or key")
    sims = (m.data @ key.data) / (row_norms * kn)
    return m.tape._record(sims, "cosine_rows", (m, key), (row_norms, kn))


def rowscale(m, v):
    """Scale row i of m (M,W) by v[i] (v is (M,1))."""
    if v.shape != (m.shape[0], 1):
        raise ShapeError("rowscale: matrix %s vs scales %s" % (m.shape, v.shape))
    return m.tape._record(m.data * v.data, "rowscale", (m, v))


_SHIFT_INDEX_CACHE = {}


def _shift_indices(m, width):
    """Gather maps for circular shifts: IDX[j, i] = (i - (j - n)) mod m."""
    try:
        return _SHIFT_INDEX_CACHE[(m, width)]
    except KeyError:
        n = width // 2
        base = np.arange(m)
        fwd = np.stack([(base - (j - n)) % m for j in range(width)])
        rev = np.stack([(base + (j - n)) % m for j in range(width)])
        _SHIFT_INDEX_CACHE[(m, width)] = (fwd, rev)
        return fwd, rev


def circular_conv(a, s):
    """Circular convolution of weights a (M,1) with shift kernel s (2n+1,1).

    Kernel entry j carries offset j-n; out[i] = sum_k s[k+n] * a[(i-k) mod M].
    """
    if a.shape[1] != 1 or s.shape[1] != 1 or s.shape[0] % 2 != 1:
        raise ShapeError("circular_conv: weights %s, kernel %s" % (a.shape, s.shape))
    m = a.shape[0]
    fwd, _ = _shift_indices(m, s.shape[0])
    out = s.data[:, 0] @ a.data[:, 0][fwd]
    return a.tape._record(out.reshape(m, 1), "circular_conv", (a, s))


# ---------------------------------------------------------------------------
# backward rules: op name -> fn(node, upstream grad) -> per-parent gradients


def _bw_add(node, g):
    return (g, g)


def _bw_sub(node, g):
    return (g, -g)


def _bw_mul(node, g):
    a, b = node.parents
    return (g * b.data, g * a.data)


def _bw_smul(node, g):
    s, t = node.parents
    return (np.array([[(g * t.data).sum()]]), s.data[0, 0] * g)


def _bw_matmul(node, g):
    a, b = node.parents
    return (g @ b.data.T, a.data.T @ g)


def _bw_affine(node, g):
    w, x, _ = node.parents
    return (g @ x.data.T, w.data.T @ g, g)


def _bw_affine2(node, g):
    w1, x1, w2, x2, _ = node.parents
    return (g @ x1.data.T, w1.data.T @ g, g @ x2.data.T, w2.data.T @ g, g)


def _bw_transpose(node, g):
    return (g.T,)


def _bw_concat_rows(node, g):
    offsets = node.aux
    return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(node.parents)))


def _bw_slice_rows(node, g):
    (t,) = node.parents
    start, stop = node.aux
    out = np.zeros_like(t.data)
    out[start:stop] = g
    return (out,)


def _bw_sigmoid(node, g):
    y = node.data
    return (g * y * (1.0 - y),)


def _bw_tanh(node, g):
    y = node.data
    return (g * (1.0 - y * y),)


def _bw_relu(node, g):
    # derivative taken as 0 at the kink
    return (g * (node.parents[0].data > 0.0),)


def _bw_softmax(node, g):
    y = node.data
    return (y * (g - (y * g).sum()),)


def _bw_sum(node, g):
    (t,) = node.parents
    return (np.full_like(t.data, g[0, 0]),)


def _bw_squared_error(node, g):
    p, t = node.parents
    d = 2.0 * g[0, 0] * (p.data - t.data)
    return (d, -d)


def _bw_cross_entropy(node, g):
    p, t = node.parents
    pc = np.clip(p.data, CE_CLAMP, 1.0)
    return (-g[0, 0] * t.data / pc, -g[0, 0] * np.log(pc))


def _bw_lerp(node, g):
    gate, a, b = node.parents
    s = gate.data[0, 0]
    gg = float((g * (a.data - b.data)).sum())
    return (np.array([[gg]]), s * g, (1.0 - s) * g)


def _bw_stack_blend(node, g):
    slots, cand, d = node.parents
    depth = slots.shape[0]
    d0, d1, d2 = d.data[:, 0]
    sd = slots.data
    g_slots = d0 * g[1:] + d2 * g[:depth]
    g_slots[1:] += d1 * g[: depth - 1]
    g_cand = (d0 * g[0]).reshape(-1, 1)
    g_d = np.array(
        [
            [float((g[0] * cand.data[:, 0]).sum() + (g[1:] * sd).sum())],
            [float((g[: depth - 1] * sd[1:]).sum())],
            [float((g[:depth] * sd).sum())],
        ]
    )
    return (g_slots, g_cand, g_d)


def _bw_write_rows(node, g):
    mem, keep, write, cand = node.parents
    return (
        g * keep.data,
        (g * mem.data).sum(axis=1, keepdims=True),
        g @ cand.data,
        g.T @ write.data,
    )


def _bw_cosine_similarity(node, g):
    a, b = node.parents
    na, nb = _norm(a.data), _norm(b.data)
    c = node.data[0, 0]
    gs = g[0, 0]
    ga = gs * (b.data / (na * nb) - c * a.data / (na * na))
    gb = gs * (a.data / (na * nb) - c * b.data / (nb * nb))
    return (ga, gb)


def _bw_cosine_rows(node, g):
    # d sim_i/d m_i = k/(|m_i||k|) - sim_i * m_i/|m_i|^2
    # d sim_i/d k   = m_i/(|m_i||k|) - sim_i * k/|k|^2
    m, key = node.parents
    row_norms, kn = node.aux
    sims = node.data
    gm = g * (key.data.T / (row_norms * kn) - sims * m.data / (row_norms * row_norms))
    gk = (m.data / (row_norms * kn)).T @ g - (key.data / (kn * kn)) * float(
        (g * sims).sum()
    )
    return (gm, gk)


def _bw_rowscale(node, g):
    m, v = node.parents
    return (g * v.data, (g * m.data).sum(axis=1, keepdims=True))


def _bw_circular_conv(node, g):
    # out[i] = sum_j s[j] * a[(i - j + n) mod M]  =>
    #   da[p] = sum_j s[j] * g[(p + j - n) mod M],  ds[j] = g . a[fwd[j]]
    a, s = node.parents
    m = a.shape[0]
    fwd, rev = _shift_indices(m, s.shape[0])
    gv = g[:, 0]
    av = a.data[:, 0]
    ga = s.data[:, 0] @ gv[rev]
    gs = av[fwd] @ gv
    return (ga.reshape(m, 1), gs.reshape(-1, 1))


_BACKWARD = {
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "smul": _bw_smul,
    "matmul": _bw_matmul,
    "affine": _bw_affine,
    "affine2": _bw_affine2,
    "transpose": _bw_transpose,
    "concat_rows": _bw_concat_rows,
    "slice_rows": _bw_slice_rows,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "relu": _bw_relu,
    "softmax": _bw_softmax,
    "sum": _bw_sum,
    "squared_error": _bw_squared_error,
    "cross_entropy": _bw_cross_entropy,
    "cosine_similarity": _bw_cosine_similarity,
    "cosine_rows": _bw_cosine_rows,
    "lerp": _bw_lerp,
    "stack_blend": _bw_stack_blend,
    "write_rows": _bw_write_rows,
    "rowscale": _bw_rowscale,
    "circular_conv": _bw_circular_conv,
}


# ---------------------------------------------------------------------------
# independent gradient oracle


def finite_diff(f, x, h=1e-5):
    """Central-difference gradient of scalar function f at x.

    f takes a plain numpy array and returns a float; it is evaluated 2*x.size
    times.  Deliberately independent of the tape machinery.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def rel_err(a, b):
    """max_i |a_i - b_i| / max(1e-8, |a_i| + |b_i|): the gradient-check metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1e-8, np.abs(a) + np.abs(b))
    if a.size == 0:
        return 0.0
    return float((np.abs(a - b) / denom).max())
