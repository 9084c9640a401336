"""Autodiff engine: analytic cases, finite-difference checks, hand values."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import visr.nn.tensor as T
from conftest import fd_check, sos
from visr.errors import ContractError, ShapeError
from visr.nn.tensor import Tensor


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# analytic gradient facts
# ---------------------------------------------------------------------------

def test_sum_of_squares_gradient_is_two_x():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = T.tsum(T.mul(x, x))
    T.backward(loss, [x])
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_unreached_parameter_gets_zero_grad():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    p = Tensor(np.array([5.0]), requires_grad=True)
    loss = T.tsum(T.mul(x, x))
    T.backward(loss, [x, p])
    np.testing.assert_array_equal(p.grad, [0.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        T.mul(x, x).backward()


def test_no_grad_blocks_graph_construction():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad
    assert y._parents == ()


def test_grad_accumulates_across_shared_use():
    x = Tensor(np.array([3.0]), requires_grad=True)
    loss = T.tsum(T.add(T.mul(x, x), T.mul(x, x)))   # 2x^2 -> d/dx = 4x
    T.backward(loss, [x])
    np.testing.assert_allclose(x.grad, [12.0])


# ---------------------------------------------------------------------------
# finite-difference checks, op by op
# ---------------------------------------------------------------------------

UNARY_OPS = [T.relu, T.sigmoid, T.tanh, T.exp, T.absval]


@pytest.mark.parametrize("op", UNARY_OPS, ids=lambda f: f.__name__)
def test_fd_unary(op):
    rng = np.random.default_rng(3)
    # keep values away from relu/absval kinks
    x = Tensor(rng.uniform(0.2, 1.5, size=(3, 4)) * rng.choice([-1, 1], (3, 4)),
               requires_grad=True)
    assert fd_check(lambda: sos(op(x)), [x], rng=rng) < 1e-4


@pytest.mark.parametrize("op", [T.log, T.sqrt], ids=lambda f: f.__name__)
def test_fd_unary_positive_domain(op):
    rng = np.random.default_rng(4)
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    assert fd_check(lambda: sos(op(x)), [x], rng=rng) < 1e-4


def test_fd_arithmetic_with_broadcast():
    rng = np.random.default_rng(5)
    a = leaf(rng, 3, 4)
    b = leaf(rng, 4)          # broadcast over rows
    c = leaf(rng, 3, 1)       # broadcast over cols

    def loss():
        return sos(T.div(T.add(T.mul(a, b), T.sub(a, c)),
                         T.add(T.absval(b), 1.5)))

    assert fd_check(loss, [a, b, c], rng=rng) < 1e-4


def test_fd_matmul_all_ranks():
    rng = np.random.default_rng(6)
    m = leaf(rng, 3, 4)
    w = leaf(rng, 4, 2)
    v = leaf(rng, 4)
    u = leaf(rng, 3)
    cases = [
        (lambda: sos(T.matmul(m, w)), [m, w]),        # matrix @ matrix
        (lambda: sos(T.matmul(v, w)), [v, w]),        # vector @ matrix
        (lambda: sos(T.matmul(m, v)), [m, v]),        # matrix @ vector
        (lambda: sos(T.matmul(u, T.matmul(m, v))), [u, m, v]),  # dot product
    ]
    for loss, params in cases:
        assert fd_check(loss, params, rng=rng) < 1e-4


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_fd_reductions_and_reshapes():
    rng = np.random.default_rng(7)
    x = leaf(rng, 3, 4)
    cases = [
        lambda: T.tsum(T.mul(x, x)),
        lambda: T.tmean(T.mul(x, x)),
        lambda: sos(T.tsum(x, axis=0)),
        lambda: sos(T.tmean(x, axis=1)),
        lambda: sos(T.reshape(T.mul(x, x), (2, 6))),
        lambda: sos(T.transpose(T.mul(x, x), (1, 0))),
    ]
    for loss in cases:
        assert fd_check(loss, [x], rng=rng) < 1e-4


def test_fd_row_slicing_and_stacking():
    rng = np.random.default_rng(8)
    x = leaf(rng, 5, 3)
    y = leaf(rng, 2, 3)
    cases = [
        (lambda: sos(T.rows(x, 1, 4)), [x]),
        (lambda: sos(T.row(x, 2)), [x]),
        (lambda: sos(T.cat0([x, y])), [x, y]),
        (lambda: sos(T.stack_rows([T.row(x, 0), T.row(y, 1), T.row(x, 4)])),
         [x, y]),
    ]
    for loss, params in cases:
        assert fd_check(loss, params, rng=rng) < 1e-4


def test_fd_softmax_layernorm_ce():
    rng = np.random.default_rng(9)
    x = leaf(rng, 4, 5)
    gain = leaf(rng, 5)
    bias = leaf(rng, 5)
    ids = rng.integers(0, 5, size=4)
    cases = [
        (lambda: sos(T.softmax_last(x)), [x]),
        (lambda: sos(T.layer_norm(x, gain, bias)), [x, gain, bias]),
        (lambda: T.cross_entropy_rows(x, ids), [x]),
    ]
    for loss, params in cases:
        assert fd_check(loss, params, rng=rng) < 1e-4


def test_fd_normalize_cosine_rowscale():
    rng = np.random.default_rng(10)
    a = leaf(rng, 4, 3)
    b = leaf(rng, 3)
    s = leaf(rng, 4)
    # sum-of-squares of normalized rows is constant, so weight with a fixed
    # random matrix to get a non-degenerate loss
    w = Tensor(rng.standard_normal((4, 3)))

    def cos_loss():
        sims, _ = T.cosine_rows(a, b)
        return sos(sims)

    cases = [
        (lambda: T.tsum(T.mul(T.normalize_rows(a), w)), [a]),
        (cos_loss, [a, b]),
        (lambda: sos(T.rowscale(a, s)), [a, s]),
    ]
    for loss, params in cases:
        assert fd_check(loss, params, rng=rng) < 1e-4


def test_fd_info_nce():
    rng = np.random.default_rng(11)
    left = leaf(rng, 3, 4)
    right = leaf(rng, 3, 4)
    assert fd_check(lambda: T.info_nce(left, right, temperature=0.3),
                    [left, right], rng=rng) < 1e-4


def test_fd_embedding_with_repeats():
    rng = np.random.default_rng(12)
    table = leaf(rng, 5, 3)
    ids = np.array([0, 2, 2, 4, 0])
    assert fd_check(lambda: sos(T.embedding(table, ids)), [table],
                    rng=rng) < 1e-4


def test_embedding_rejects_out_of_range():
    table = Tensor(np.ones((5, 3)))
    with pytest.raises(ContractError):
        T.embedding(table, np.array([1, 5]))
    with pytest.raises(ContractError):
        T.embedding(table, np.array([-1]))


# ---------------------------------------------------------------------------
# hand values
# ---------------------------------------------------------------------------

def test_softmax_uniform_on_equal_logits():
    out = T.softmax_last(Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, [1 / 3] * 3)


def test_layer_norm_of_constant_vector_is_bias():
    gain = Tensor(np.full(4, 2.0))
    bias = Tensor(np.array([1.0, -1.0, 0.5, 0.0]))
    out = T.layer_norm(Tensor(np.full((2, 4), 7.0)), gain, bias)
    np.testing.assert_allclose(out.data, np.tile(bias.data, (2, 1)))


def test_cosine_hand_values():
    b = np.array([1.0, 0.0])
    for row, want in [([1.0, 0.0], 1.0),
                      ([-2.0, 0.0], -1.0),
                      ([1.0, 1.0], math.sqrt(0.5))]:
        sims, dead = T.cosine_rows(Tensor(np.array([row])), Tensor(b))
        assert dead == 0
        np.testing.assert_allclose(sims.data, [want], rtol=1e-12)


def test_cosine_zero_norm_row_reports_dead():
    a = Tensor(np.array([[0.0, 0.0], [1.0, 0.0]]))
    sims, dead = T.cosine_rows(a, Tensor(np.array([1.0, 0.0])))
    assert dead == 1
    np.testing.assert_allclose(sims.data, [0.0, 1.0])


def test_info_nce_identity_matrix_hand_value():
    # cosine matrix = I at temperature 1: each row/column CE is ln(1 + e^-1)
    left = Tensor(np.eye(2))
    right = Tensor(np.eye(2))
    want = math.log(1.0 + math.exp(-1.0))
    got = T.info_nce(left, right, temperature=1.0).item()
    assert got == pytest.approx(want, rel=1e-12)


def test_info_nce_identical_rows_is_ln_b():
    for b in (2, 3, 5):
        rows = np.tile(np.array([0.3, -0.8, 0.5]), (b, 1))
        got = T.info_nce(Tensor(rows), Tensor(rows.copy()),
                         temperature=0.07).item()
        assert got == pytest.approx(math.log(b), rel=1e-12)


def test_info_nce_perfect_retrieval_limit():
    # orthonormal matches at a small temperature push the loss toward zero
    eye = np.eye(4)
    got = T.info_nce(Tensor(eye), Tensor(eye.copy()), temperature=0.01).item()
    assert got < 1e-6


def test_info_nce_rotation_invariance():
    rng = np.random.default_rng(13)
    left = rng.standard_normal((4, 5))
    right = rng.standard_normal((4, 5))
    q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    base = T.info_nce(Tensor(left), Tensor(right)).item()
    rot = T.info_nce(Tensor(left @ q), Tensor(right @ q)).item()
    assert rot == pytest.approx(base, rel=1e-9)


def test_info_nce_needs_two_rows():
    one = Tensor(np.ones((1, 4)))
    with pytest.raises(ContractError):
        T.info_nce(one, one)


# ---------------------------------------------------------------------------
# property tests
# ---------------------------------------------------------------------------

finite_rows = st.integers(1, 5).flatmap(
    lambda r: st.integers(1, 6).map(lambda c: (r, c)))


@settings(max_examples=40, deadline=None)
@given(shape=finite_rows, seed=st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(shape, seed):
    x = np.random.default_rng(seed).uniform(-30, 30, size=shape)
    out = T.softmax_last(Tensor(x)).data
    np.testing.assert_allclose(out.sum(axis=-1), np.ones(shape[0]), atol=1e-12)
    assert (out >= 0).all()


@settings(max_examples=40, deadline=None)
@given(shape=finite_rows, seed=st.integers(0, 2**31 - 1))
def test_cosine_rows_bounded(shape, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(shape)
    b = rng.standard_normal(shape[1])
    sims, _ = T.cosine_rows(Tensor(a), Tensor(b))
    assert (np.abs(sims.data) <= 1.0 + 1e-12).all()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_normalize_rows_unit_norm(seed):
    a = np.random.default_rng(seed).standard_normal((4, 6)) + 0.1
    out = T.normalize_rows(Tensor(a)).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.ones(4),
                               atol=1e-9)
