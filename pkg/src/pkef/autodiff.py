"""Minimal reverse-mode differentiation over float64 numpy arrays.

Everything the model differentiates goes through the ops in this module:
dense elementwise math, dense/sparse matrix products, row gathering and
concatenation, row-wise softmax, log-sigmoid, row-wise projection and
reductions. The sparse operand of ``spmm`` is graph structure, never a
parameter, so it stays constant data.

Values on the tape are numpy float64 arrays. Scalars are 0-d arrays.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

EPS_NORM = 1e-12  # below this norm a projection target counts as degenerate


class Parameter:
    """A named trainable array. The same object may appear on many tapes."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class SparseMatrix:
    """CSR matrix used as constant data (adjacency structure).

    Canonical form: no duplicate entries, strictly increasing column
    indices within each row. The transpose is cached because every
    backward pass of spmm needs it.
    """

    def __init__(self, mat):
        csr = sp.csr_matrix(mat, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        self.csr = csr
        self._t = None

    @property
    def shape(self):
        return self.csr.shape

    @property
    def rows(self):
        return self.csr.shape[0]

    @property
    def cols(self):
        return self.csr.shape[1]

    @property
    def transpose(self):
        if self._t is None:
            t = self.csr.T.tocsr()
            t.sort_indices()
            self._t = t
        return self._t

    def row_entries(self, i: int):
        """(col, value) pairs of row i, columns strictly increasing."""
        lo, hi = self.csr.indptr[i], self.csr.indptr[i + 1]
        return list(zip(self.csr.indices[lo:hi].tolist(), self.csr.data[lo:hi].tolist()))

    def toarray(self):
        return self.csr.toarray()


class Node:
    """One recorded operation result. parents/vjp drive the backward pass."""

    __slots__ = ("tape", "value", "parents", "vjp", "grad", "idx")

    def __init__(self, tape, value, parents=(), vjp=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.idx = len(tape.nodes)
        tape.nodes.append(self)

    # arithmetic sugar; floats and arrays are lifted to constants
    def __add__(self, other):
        return add(self, _lift(self.tape, other))

    def __radd__(self, other):
        return add(_lift(self.tape, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self.tape, other))

    def __rsub__(self, other):
        return sub(_lift(self.tape, other), self)

    def __mul__(self, other):
        return mul(self, _lift(self.tape, other))

    def __rmul__(self, other):
        return mul(_lift(self.tape, other), self)

    def __neg__(self):
        return neg(self)


class Tape:
    """Ordered record of operations.

    Nodes are appended in execution order, so a reverse scan visits them
    in reverse topological order; gradient accumulation is additive.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[int, tuple[Parameter, Node]] = {}

    def leaf(self, param: Parameter) -> Node:
        """Leaf node for a parameter; one node per parameter per tape."""
        entry = self._leaves.get(id(param))
        if entry is None:
            node = Node(self, param.value)
            self._leaves[id(param)] = (param, node)
            return node
        return entry[1]

    def constant(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64))

    def leaves(self):
        return [(param, node) for param, node in self._leaves.values()]


def _lift(tape: Tape, x) -> Node:
    if isinstance(x, Node):
        return x
    return tape.constant(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Node, b: Node) -> Node:
    def vjp(g):
        return (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape))

    return Node(a.tape, a.value + b.value, (a, b), vjp)


def sub(a: Node, b: Node) -> Node:
    def vjp(g):
        return (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape))

    return Node(a.tape, a.value - b.value, (a, b), vjp)


def mul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value

    def vjp(g):
        return (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))

    return Node(a.tape, av * bv, (a, b), vjp)


def neg(a: Node) -> Node:
    return Node(a.tape, -a.value, (a,), lambda g: (-g,))


def stop_gradient(a: Node) -> Node:
    """Identity in the forward pass; blocks all gradient flow."""
    return Node(a.tape, a.value, (), None)


# ---------------------------------------------------------------------------
# matrix products


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value

    def vjp(g):
        return (g @ bv.T, av.T @ g)

    return Node(a.tape, av @ bv, (a, b), vjp)


def spmm(a: SparseMatrix, b: Node) -> Node:
    """Sparse-dense product; differentiable in b only (a is constant data)."""
    if a.cols != b.value.shape[0]:
        raise ValueError(
            f"spmm dimension mismatch: sparse is {a.shape}, dense is {b.value.shape}"
        )

    def vjp(g):
        return (a.transpose @ g,)

    return Node(b.tape, a.csr @ b.value, (b,), vjp)


# ---------------------------------------------------------------------------
# structural ops


def gather_rows(x: Node, idx: np.ndarray) -> Node:
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Node(x.tape, x.value[idx], (x,), vjp)


def vstack_rows(a: Node, b: Node) -> Node:
    na = a.value.shape[0]

    def vjp(g):
        return (g[:na], g[na:])

    return Node(a.tape, np.concatenate([a.value, b.value], axis=0), (a, b), vjp)


def concat_cols(a: Node, b: Node) -> Node:
    ca = a.value.shape[1]

    def vjp(g):
        return (g[:, :ca], g[:, ca:])

    return Node(a.tape, np.concatenate([a.value, b.value], axis=1), (a, b), vjp)


def slice_col(x: Node, j: int) -> Node:
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, j : j + 1] = g
        return (out,)

    return Node(x.tape, x.value[:, j : j + 1], (x,), vjp)


# ---------------------------------------------------------------------------
# reductions and nonlinearities


def row_sum(x: Node) -> Node:
    shape = x.value.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).copy(),)

    return Node(x.tape, x.value.sum(axis=1, keepdims=True), (x,), vjp)


def sum_all(x: Node) -> Node:
    shape = x.value.shape

    def vjp(g):
        return (np.full(shape, float(g)),)

    return Node(x.tape, np.asarray(x.value.sum()), (x,), vjp)


def mean_all(x: Node) -> Node:
    shape = x.value.shape
    n = x.value.size

    def vjp(g):
        return (np.full(shape, float(g) / n),)

    return Node(x.tape, np.asarray(x.value.mean()), (x,), vjp)


def softmax_rows(x: Node) -> Node:
    out = softmax_rows_np(x.value)

    def vjp(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner),)

    return Node(x.tape, out, (x,), vjp)


def log_sigmoid(x: Node) -> Node:
    xv = x.value

    def vjp(g):
        # d/dx log sigma(x) = sigma(-x)
        return (g * _sigmoid(-xv),)

    return Node(x.tape, log_sigmoid_np(xv), (x,), vjp)


def proj_coef(a: Node, b: Node, eps: float = EPS_NORM) -> Node:
    """Row-wise projection coefficient (a.b)/|b|^2, shape (n, 1).

    Rows where |b| < eps get coefficient 0 and propagate no gradient
    (the degenerate-direction rule: the collinear component is defined
    as the zero vector there).
    """
    av, bv = a.value, b.value
    ab = (av * bv).sum(axis=1, keepdims=True)
    bb = (bv * bv).sum(axis=1, keepdims=True)
    ok = np.sqrt(bb) >= eps
    safe_bb = np.where(ok, bb, 1.0)
    coef = np.where(ok, ab / safe_bb, 0.0)

    def vjp(g):
        g = g * ok
        ga = g * bv / safe_bb
        gb = g * (av - 2.0 * coef * bv) / safe_bb
        return (ga, gb)

    return Node(a.tape, coef, (a, b), vjp)


def project(a: Node, b: Node, eps: float = EPS_NORM) -> Node:
    """Component of each row of a collinear with the matching row of b."""
    return mul(proj_coef(a, b, eps), b)


# ---------------------------------------------------------------------------
# backward


def backward(tape: Tape, loss: Node) -> dict[Parameter, np.ndarray]:
    """Gradient of a scalar loss with respect to every parameter leaf.

    Visits the tape strictly in reverse construction order (reverse
    topological order); a node consumed by several ops accumulates the
    sum of their contributions.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes[: loss.idx + 1]):
        if node.grad is None or node.vjp is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            parent.grad = g if parent.grad is None else parent.grad + g
    return {
        param: (node.grad if node.grad is not None else np.zeros_like(param.value))
        for param, node in tape.leaves()
    }


# ---------------------------------------------------------------------------
# numpy kernels shared with the no-tape inference path


def softmax_rows_np(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; each row sums to 1."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_sigmoid_np(x: np.ndarray) -> np.ndarray:
    """log sigma(x) = -log(1 + exp(-x)), stable for large |x|."""
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(log_sigmoid_np(x))


def proj_coef_np(a: np.ndarray, b: np.ndarray, eps: float = EPS_NORM) -> np.ndarray:
    """Row-wise (a.b)/|b|^2 with the same degenerate rule as proj_coef."""
    ab = (a * b).sum(axis=-1, keepdims=True)
    bb = (b * b).sum(axis=-1, keepdims=True)
    ok = np.sqrt(bb) >= eps
    return np.where(ok, ab / np.where(ok, bb, 1.0), 0.0)


def project_np(a: np.ndarray, b: np.ndarray, eps: float = EPS_NORM) -> np.ndarray:
    return proj_coef_np(a, b, eps) * b
