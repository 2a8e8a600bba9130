"""Core numeric kernels: contract examples, gradient checks, projection algebra."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import fd_check_params
from pkef import autodiff as ad
from pkef.autodiff import Parameter, SparseMatrix, Tape, backward


def const(tape, x):
    return tape.constant(np.asarray(x, dtype=np.float64))


class TestSparseMatrix:
    def test_canonical_row_iteration(self):
        # duplicate entries collapse; columns come back strictly increasing
        import scipy.sparse as sp

        coo = sp.coo_matrix(
            (np.array([1.0, 2.0, 3.0]), (np.array([0, 0, 0]), np.array([2, 0, 2]))),
            shape=(2, 3),
        )
        m = SparseMatrix(coo)
        rows = m.row_entries(0)
        assert rows == [(0, 2.0), (2, 4.0)]
        cols = [c for c, _ in rows]
        assert cols == sorted(cols)

    def test_shape_properties(self):
        m = SparseMatrix(np.eye(3))
        assert (m.rows, m.cols) == (3, 3)


class TestSpmm:
    def test_half_matrix_example(self):
        tape = Tape()
        a = SparseMatrix(np.array([[0.5, 0.5], [0.5, 0.5]]))
        b = const(tape, [[2.0, 0.0], [0.0, 2.0]])
        np.testing.assert_allclose(ad.spmm(a, b).value, [[1.0, 1.0], [1.0, 1.0]])

    def test_identity(self):
        tape = Tape()
        b = const(tape, np.arange(6.0).reshape(3, 2))
        np.testing.assert_array_equal(ad.spmm(SparseMatrix(np.eye(3)), b).value, b.value)

    def test_zero_matrix(self):
        tape = Tape()
        b = const(tape, np.ones((3, 2)))
        out = ad.spmm(SparseMatrix(np.zeros((3, 3))), b)
        np.testing.assert_array_equal(out.value, np.zeros((3, 2)))

    def test_dimension_mismatch(self):
        tape = Tape()
        with pytest.raises(ValueError, match="mismatch"):
            ad.spmm(SparseMatrix(np.eye(3)), const(tape, np.ones((2, 2))))

    def test_linearity(self):
        rng = np.random.default_rng(0)
        import scipy.sparse as sp

        a = SparseMatrix(sp.random(6, 5, density=0.5, random_state=2))
        tape = Tape()
        b1 = const(tape, rng.uniform(-1, 1, (5, 3)))
        b2 = const(tape, rng.uniform(-1, 1, (5, 3)))
        lhs = ad.spmm(a, b1 + b2).value
        rhs = ad.spmm(a, b1).value + ad.spmm(a, b2).value
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestProject:
    def test_hand_example(self):
        tape = Tape()
        out = ad.project(const(tape, [[1.0, 1.0]]), const(tape, [[2.0, 0.0]]))
        np.testing.assert_allclose(out.value, [[1.0, 0.0]])

    def test_orthogonal(self):
        tape = Tape()
        out = ad.project(const(tape, [[0.0, 3.0]]), const(tape, [[2.0, 0.0]]))
        np.testing.assert_allclose(out.value, [[0.0, 0.0]])

    def test_self_projection_identity(self):
        tape = Tape()
        out = ad.project(const(tape, [[3.0, 4.0]]), const(tape, [[3.0, 4.0]]))
        np.testing.assert_array_equal(out.value, [[3.0, 4.0]])

    def test_degenerate_direction(self):
        tape = Tape()
        out = ad.project(const(tape, [[1.0, 2.0]]), const(tape, [[0.0, 0.0]]))
        np.testing.assert_array_equal(out.value, [[0.0, 0.0]])

    def test_idempotence(self):
        rng = np.random.default_rng(1)
        tape = Tape()
        a = const(tape, rng.uniform(-1, 1, (50, 4)))
        b = const(tape, rng.uniform(-1, 1, (50, 4)))
        once = ad.project(a, b)
        twice = ad.project(once, b)
        np.testing.assert_allclose(twice.value, once.value, atol=1e-10)

    def test_decomposition(self):
        rng = np.random.default_rng(2)
        tape = Tape()
        av = rng.uniform(-1, 1, (100, 5))
        bv = rng.uniform(-1, 1, (100, 5))
        proj = ad.project(const(tape, av), const(tape, bv)).value
        residual = av - proj
        np.testing.assert_allclose(proj + residual, av, atol=1e-12)
        assert np.abs((residual * bv).sum(axis=1)).max() < 1e-8


class TestRowwiseSoftmax:
    def test_uniform_logits(self):
        tape = Tape()
        out = ad.softmax_rows(const(tape, [[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.value, [[1 / 3, 1 / 3, 1 / 3]])

    def test_closed_form(self):
        tape = Tape()
        out = ad.softmax_rows(const(tape, [[np.log(2.0), 0.0]]))
        np.testing.assert_allclose(out.value, [[2 / 3, 1 / 3]])

    def test_large_logits_no_overflow(self):
        tape = Tape()
        out = ad.softmax_rows(const(tape, [[1000.0, 0.0]])).value
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-200)

    @given(
        st.lists(
            st.lists(st.floats(-50, 50), min_size=3, max_size=3),
            min_size=1,
            max_size=8,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_rows_sum_to_one(self, rows):
        tape = Tape()
        out = ad.softmax_rows(const(tape, np.array(rows))).value
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


class TestBackward:
    def test_quadratic(self):
        theta = Parameter("theta", np.array([[1.0, 2.0]]))
        tape = Tape()
        n = tape.leaf(theta)
        grads = backward(tape, ad.sum_all(n * n))
        np.testing.assert_allclose(grads[theta], [[2.0, 4.0]])

    def test_constant_loss(self):
        theta = Parameter("theta", np.array([[1.0, 2.0]]))
        tape = Tape()
        tape.leaf(theta)
        grads = backward(tape, tape.constant(5.0))
        np.testing.assert_array_equal(grads[theta], np.zeros((1, 2)))

    def test_bpr_zero_margin(self):
        theta = Parameter("theta", np.array([[1.0], [1.0]]))
        tape = Tape()
        n = tape.leaf(theta)
        pos = ad.gather_rows(n, np.array([0]))
        neg = ad.gather_rows(n, np.array([1]))
        loss = ad.mean_all(-ad.log_sigmoid(pos - neg))
        np.testing.assert_allclose(backward(tape, loss)[theta].ravel(), [-0.5, 0.5])

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        with pytest.raises(ValueError, match="scalar"):
            backward(tape, tape.constant(np.ones((2, 2))))

    def test_fanout_accumulates(self):
        # x used by two consumers receives the sum of both contributions
        theta = Parameter("theta", np.array([[3.0]]))
        tape = Tape()
        n = tape.leaf(theta)
        loss = ad.sum_all(n * n + n)  # d/dx (x^2 + x) = 2x + 1
        np.testing.assert_allclose(backward(tape, loss)[theta], [[7.0]])

    def test_stop_gradient_blocks(self):
        theta = Parameter("theta", np.array([[2.0]]))
        tape = Tape()
        n = tape.leaf(theta)
        loss = ad.sum_all(ad.stop_gradient(n * n))
        np.testing.assert_array_equal(backward(tape, loss)[theta], [[0.0]])


class TestGradientChecks:
    """Analytic gradients vs central differences on random [-1, 1] inputs."""

    H = 1e-5
    TOL = 1e-4

    def _check(self, build, shapes, seed):
        rng = np.random.default_rng(seed)
        params = [
            Parameter(f"p{i}", rng.uniform(-1, 1, shape)) for i, shape in enumerate(shapes)
        ]
        # random fixed projection so the checked scalar probes all outputs
        assert fd_check_params(lambda t: build(t, params), params, self.H) < self.TOL

    def test_elementwise_chain(self):
        def build(t, ps):
            a, b = t.leaf(ps[0]), t.leaf(ps[1])
            return ad.sum_all((a * b + a - b) * (a + 0.5))

        self._check(build, [(4, 3), (4, 3)], 10)

    def test_matmul(self):
        def build(t, ps):
            return ad.sum_all(ad.matmul(t.leaf(ps[0]), t.leaf(ps[1])) * 0.7)

        self._check(build, [(3, 4), (4, 2)], 11)

    def test_spmm(self):
        import scipy.sparse as sp

        a = SparseMatrix(sp.random(5, 4, density=0.6, random_state=0))

        def build(t, ps):
            return ad.sum_all(ad.spmm(a, t.leaf(ps[0])))

        self._check(build, [(4, 3)], 12)

    def test_gather_scatter(self):
        idx = np.array([0, 2, 2, 1])

        def build(t, ps):
            g = ad.gather_rows(t.leaf(ps[0]), idx)
            return ad.sum_all(g * g)

        self._check(build, [(3, 2)], 13)

    def test_softmax(self):
        def build(t, ps):
            s = ad.softmax_rows(t.leaf(ps[0]))
            return ad.sum_all(s * t.leaf(ps[1]))

        self._check(build, [(4, 3), (4, 3)], 14)

    def test_log_sigmoid(self):
        def build(t, ps):
            return ad.sum_all(ad.log_sigmoid(t.leaf(ps[0]) * 3.0))

        self._check(build, [(4, 2)], 15)

    def test_projection(self):
        def build(t, ps):
            p = ad.project(t.leaf(ps[0]), t.leaf(ps[1]))
            return ad.sum_all(p * t.leaf(ps[2]))

        self._check(build, [(5, 3), (5, 3), (5, 3)], 16)

    def test_concat_and_slices(self):
        def build(t, ps):
            c = ad.concat_cols(t.leaf(ps[0]), t.leaf(ps[1]))
            v = ad.vstack_rows(t.leaf(ps[0]), t.leaf(ps[1]))
            return ad.sum_all(ad.slice_col(c, 1)) + ad.mean_all(ad.row_sum(v))

        self._check(build, [(3, 2), (3, 2)], 17)

    def test_reductions(self):
        def build(t, ps):
            return ad.mean_all(t.leaf(ps[0])) + 0.25 * ad.sum_all(t.leaf(ps[0]))

        self._check(build, [(4, 3)], 18)


class TestFiniteness:
    def test_finite_outputs_on_finite_inputs(self):
        rng = np.random.default_rng(3)
        tape = Tape()
        a = const(tape, rng.uniform(-100, 100, (6, 4)))
        b = const(tape, rng.uniform(-100, 100, (6, 4)))
        nodes = [
            a + b,
            a * b,
            ad.softmax_rows(a),
            ad.log_sigmoid(a),
            ad.project(a, b),
            ad.row_sum(a * b),
        ]
        for node in nodes:
            assert np.isfinite(node.value).all()


@given(
    st.integers(0, 2**31 - 1),
    st.floats(0.1, 10.0),
)
@settings(max_examples=50, deadline=None)
def test_projection_decomposition_property(seed, scale):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-scale, scale, (8, 4))
    b = rng.uniform(-scale, scale, (8, 4))
    proj = ad.project_np(a, b)
    # a splits into the collinear part plus a remainder orthogonal to b
    np.testing.assert_allclose(proj + (a - proj), a, atol=1e-12)
    norms = np.linalg.norm(b, axis=1)
    ortho = np.abs(((a - proj) * b).sum(axis=1))
    assert (ortho[norms > 1e-12] < 1e-8 * np.maximum(1.0, scale * scale)).all()
