import math

import numpy as np
import pytest

from dstcgcn import tensor as tt
from dstcgcn.errors import ContractError, NonFiniteError, ShapeError


def test_matmul_identity():
    a = tt.constant([[1.0, 2.0], [3.0, 4.0]])
    out = tt.matmul(a, tt.constant(np.eye(2)))
    assert np.array_equal(out.data, a.data)


def test_matmul_annihilator():
    a = tt.constant([[1.0, 2.0], [3.0, 4.0]])
    out = tt.matmul(a, tt.constant(np.zeros((2, 2))))
    assert np.array_equal(out.data, np.zeros((2, 2)))


def test_matmul_inner_product():
    out = tt.matmul(tt.constant([[1.0, 2.0]]), tt.constant([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        tt.matmul(tt.constant(np.ones((2, 3))), tt.constant(np.ones((2, 3))))
    assert "(2, 3)" in str(err.value)


def test_softmax_rows_symmetry():
    out = tt.softmax_rows(tt.constant([[0.0, 0.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]], atol=1e-15)


def test_softmax_rows_hand_computed():
    # rows of softmax([[1,0],[0,1]]) are (e, 1)/(e+1) in some order
    out = tt.softmax_rows(tt.constant([[1.0, 0.0], [0.0, 1.0]]))
    hi = math.e / (math.e + 1.0)
    lo = 1.0 / (math.e + 1.0)
    assert np.allclose(out.data, [[hi, lo], [lo, hi]], atol=1e-12)


def test_softmax_rows_max_subtraction_no_overflow():
    out = tt.softmax_rows(tt.constant([[1000.0, 1000.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]], atol=1e-15)


def test_softmax_rows_sum_to_one(rng):
    x = tt.constant(rng.normal(scale=50.0, size=(20, 7)))
    out = tt.softmax_rows(x)
    assert np.all(np.abs(out.data.sum(axis=-1) - 1.0) <= 1e-9)
    # strict openness at scales where float64 can still represent it
    out2 = tt.softmax_rows(tt.constant(rng.normal(scale=5.0, size=(20, 7))))
    assert np.all(out2.data > 0) and np.all(out2.data < 1)


def test_backward_elementwise_square():
    x = tt.parameter([1.0, 2.0, 3.0])
    y = tt.tsum(tt.mul(x, x))
    tt.backward(y)
    assert np.array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_sum_gives_ones(rng):
    x = tt.parameter(rng.normal(size=(3, 4)))
    tt.backward(tt.tsum(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_matmul_against_fd(rng):
    c = tt.constant(rng.normal(size=(4, 3)))
    err = tt.finite_diff_check(lambda x: tt.tsum(tt.matmul(x, c)),
                               tt.Tensor(rng.normal(size=(2, 4))))
    assert err <= 1e-8
    # closed form: grad rows are the row sums of c, broadcast
    x = tt.parameter(rng.normal(size=(2, 4)))
    tt.backward(tt.tsum(tt.matmul(x, c)))
    assert np.allclose(x.grad, np.broadcast_to(c.data.sum(axis=1), (2, 4)))


def test_backward_requires_scalar_root(rng):
    x = tt.parameter(rng.normal(size=3))
    with pytest.raises(ContractError):
        tt.backward(tt.mul(x, x))


def test_backward_unreachable_leaf_gets_zero_grad(rng):
    x = tt.parameter(rng.normal(size=3))
    other = tt.parameter(rng.normal(size=3))
    tt.backward(tt.tsum(x))
    assert np.array_equal(other.grad, np.zeros(3))


def test_backward_twice_with_reset_is_bitwise_identical(rng, scoped_tape):
    x = tt.parameter(rng.normal(size=(3, 3)))
    y = tt.mean(tt.softmax_rows(tt.matmul(x, tt.transpose(x, (1, 0)))))
    tt.backward(y)
    first = x.grad.copy()
    scoped_tape.zero_grads()
    tt.backward(y)
    assert np.array_equal(first, x.grad)


def test_finite_diff_quadratic():
    err = tt.finite_diff_check(lambda x: tt.tsum(tt.mul(x, x)),
                               tt.Tensor([1.0, 2.0]))
    assert err < 1e-8


def test_finite_diff_softmax_conservation(rng):
    # rows sum to one, so the gradient of the total is ~0 everywhere
    err = tt.finite_diff_check(lambda x: tt.tsum(tt.softmax_rows(x)),
                               tt.Tensor(rng.normal(size=(3, 5))))
    assert err < 1e-6


def _fd_cases(rng):
    c = rng.normal(size=(4, 3))
    w = rng.normal(size=(5, 4))
    bias = rng.normal(size=4)
    nodew = rng.normal(size=(3, 4, 2))
    nodeb = rng.normal(size=(3, 2))
    idx = np.array([[0, 2], [1, 3], [3, 1]])
    return {
        "add": ((3, 4), lambda x: tt.tsum(tt.add(x, tt.constant(c.T)))),
        "add_broadcast": ((3, 1), lambda x: tt.tsum(tt.add(x, tt.constant(c.T)))),
        "sub": ((3, 4), lambda x: tt.tsum(tt.sub(tt.constant(c.T), x))),
        "mul": ((3, 4), lambda x: tt.tsum(tt.mul(x, tt.constant(c.T)))),
        "div": ((3, 4), lambda x: tt.tsum(tt.div(tt.constant(c.T),
                                                 tt.add(tt.mul(x, x), 1.0)))),
        "neg": ((6,), lambda x: tt.tsum(tt.mul(tt.neg(x), x))),
        "matmul": ((2, 4), lambda x: tt.mean(tt.matmul(x, tt.constant(c)))),
        "matmul_batched": ((2, 3, 4), lambda x: tt.mean(
            tt.matmul(x, tt.constant(c)))),
        "linear": ((2, 5), lambda x: tt.mean(
            tt.mul(y := tt.linear(x, tt.constant(w), tt.constant(bias)), y))),
        "node_linear": ((2, 3, 4), lambda x: tt.mean(
            tt.mul(y := tt.node_linear(x, tt.constant(nodew), tt.constant(nodeb)), y))),
        "weights_from_embedding": ((3, 4), lambda x: tt.mean(
            tt.weights_from_embedding(x, tt.constant(rngw)))),
        "transpose": ((2, 3, 4), lambda x: tt.mean(
            tt.mul(y := tt.transpose(x, (2, 0, 1)), y))),
        "reshape": ((2, 6), lambda x: tt.mean(
            tt.mul(y := tt.reshape(x, (3, 4)), y))),
        "concat": ((2, 3), lambda x: tt.mean(
            tt.mul(y := tt.concat([x, tt.mul(x, x)], axis=-1), y))),
        "index_axis": ((4, 3), lambda x: tt.mean(
            tt.mul(y := tt.index_axis(x, 0, 2), y))),
        "slice_axis": ((6,), lambda x: tt.mean(
            tt.mul(y := tt.slice_axis(x, 0, 1, 4), y))),
        "tile_axis": ((2, 3), lambda x: tt.mean(
            tt.mul(y := tt.tile_axis(x, 1, 4), y))),
        "gather_last": ((3, 4), lambda x: tt.mean(
            tt.mul(y := tt.gather_last(x, idx), y))),
        "diag_part": ((4, 4), lambda x: tt.mean(
            tt.mul(y := tt.diag_part(x), y))),
        "diag_embed": ((2, 3), lambda x: tt.mean(
            tt.mul(y := tt.diag_embed(x), y))),
        "mean_axes": ((2, 3, 4), lambda x: tt.tsum(
            tt.mul(y := tt.mean(x, axes=(0, 2)), y))),
        "sum_keepdims": ((2, 3), lambda x: tt.mean(
            tt.mul(y := tt.tsum(x, axes=1, keepdims=True), y))),
        "relu": ((5, 5), lambda x: tt.mean(tt.relu(x))),
        "sigmoid": ((5,), lambda x: tt.mean(tt.sigmoid(x))),
        "tanh": ((5,), lambda x: tt.mean(tt.tanh(x))),
        "abs": ((5,), lambda x: tt.mean(tt.tabs(x))),
        "softmax_rows": ((3, 5), lambda x: tt.mean(
            tt.mul(y := tt.softmax_rows(x), y))),
    }


rngw = np.random.default_rng(99).normal(size=(4, 3, 2))


@pytest.mark.parametrize("name", sorted(_fd_cases(np.random.default_rng(0))))
def test_finite_diff_every_op_ten_points(name):
    rng = np.random.default_rng(abs(hash(name)) % 2 ** 32)
    cases = _fd_cases(np.random.default_rng(0))
    shape, fn = cases[name]
    for _ in range(10):
        x = rng.normal(size=shape)
        if name in ("relu", "abs"):
            x = np.where(np.abs(x) < 0.05, 0.5, x)  # stay clear of the kink
        err = tt.finite_diff_check(fn, tt.Tensor(x))
        assert err <= 1e-5, f"{name}: FD error {err}"


def test_nan_rejected_at_construction():
    with pytest.raises(NonFiniteError):
        tt.Tensor([1.0, float("nan")])


def test_division_by_zero_rejected():
    with pytest.raises(NonFiniteError):
        tt.div(tt.constant([1.0]), tt.constant([0.0]))


def test_tensor_invariants(rng):
    x = tt.parameter(rng.normal(size=(3, 4)))
    assert x.data.size == int(np.prod(x.shape))
    assert x.grad.shape == x.data.shape
    assert x.data.flags["C_CONTIGUOUS"]


def test_gather_last_out_of_range():
    with pytest.raises(ContractError):
        tt.gather_last(tt.constant(np.ones((2, 3))), np.array([[0, 3]]))


def test_index_axis_out_of_range():
    with pytest.raises(ContractError):
        tt.index_axis(tt.constant(np.ones((2, 3))), 0, 5)


def test_no_grad_suppresses_recording(scoped_tape):
    x = tt.parameter([1.0, 2.0])
    before = len(scoped_tape)
    with tt.no_grad():
        out = tt.mul(x, x)
    assert len(scoped_tape) == before
    assert not out.requires_grad
