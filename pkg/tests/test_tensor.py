import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rasor import tensor as T
from rasor.errors import ContractError, DimensionError
from rasor.gradcheck import check


def test_matmul_examples():
    a = T.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(a, T.tensor(np.eye(2))).data, a.data)
    assert T.matmul(T.tensor([[1.0, 2.0]]), T.tensor([[3.0], [4.0]])).item() == 11.0


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(T.zeros((2, 3)), T.zeros((2, 3)))


def test_matmul_gradcheck():
    rng = np.random.default_rng(0)
    with T.precision(np.float64):
        a = T.parameter(rng.normal(size=(3, 4)))
        b = T.parameter(rng.normal(size=(4, 2)))
        w = T.tensor(rng.normal(size=(3, 2)))
        results = check("matmul", lambda: T.sum_all(T.matmul(a, b) * w), {"a": a, "b": b})
    assert all(r.error < 1e-4 for r in results)


def test_softmax_examples():
    assert np.allclose(T.softmax_rows(T.tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    assert np.allclose(T.softmax_rows(T.tensor([[1000.0, 1000.0]])).data, [[0.5, 0.5]])
    out = T.softmax_rows(T.tensor([[math.log(1), math.log(3)]])).data
    assert np.allclose(out, [[0.25, 0.75]])


def test_softmax_empty_row_rejected():
    with pytest.raises(DimensionError):
        T.softmax_rows(T.zeros((2, 0)))


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                  elements=st.floats(-1e4, 1e4)))
@settings(max_examples=100)
def test_softmax_rows_sum_to_one(x):
    out = T.softmax_rows(T.tensor(x, dtype=np.float64)).data
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)


def test_log_sum_exp_examples():
    assert T.log_sum_exp(T.tensor([0.0, 0.0])).item() == pytest.approx(0.693147, abs=1e-6)
    assert T.log_sum_exp(T.tensor([5.0])).item() == 5.0
    with T.precision(np.float64):
        v = T.log_sum_exp(T.tensor([-1000.0, -1000.0])).item()
    assert v == pytest.approx(-1000 + math.log(2), abs=1e-9)


def test_log_sum_exp_empty_rejected():
    with pytest.raises(DimensionError):
        T.log_sum_exp(T.zeros((0,)))


def test_elementwise_examples():
    assert T.relu(T.tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert T.concat([T.tensor([1.0, 2.0]), T.tensor([3.0])], axis=0).data.tolist() == [1, 2, 3]
    assert T.sigmoid(T.tensor([0.0])).item() == 0.5


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        T.add(T.zeros((2, 3)), T.zeros((3, 2)))
    with pytest.raises(DimensionError):
        T.mul(T.zeros((2,)), T.zeros((3,)))
    with pytest.raises(DimensionError):
        T.concat([T.zeros((2, 3)), T.zeros((2, 4))], axis=0)


def test_backward_examples():
    x = T.parameter([3.0])
    T.backward(T.sum_all(x * x))
    assert x.grad.tolist() == [6.0]
    a = T.parameter(np.ones((2, 2)))
    T.backward(T.sum_all(T.matmul(a, T.tensor(np.ones((2, 2))))))
    assert np.array_equal(a.grad, np.full((2, 2), 2.0))


def test_backward_non_scalar_rejected():
    x = T.parameter(np.ones((2, 2)))
    with pytest.raises(ContractError):
        T.backward(x * x)
    T.current_graph().clear()


def test_fan_out_accumulates():
    rng = np.random.default_rng(1)
    val = rng.normal(size=(3,))
    x = T.parameter(val)
    T.backward(T.sum_all(T.tanh(x)) + T.sum_all(T.scale(x, 2.0)))
    # duplicated-leaf construction: two independent copies, gradients summed
    x1, x2 = T.parameter(val), T.parameter(val)
    T.backward(T.sum_all(T.tanh(x1)) + T.sum_all(T.scale(x2, 2.0)))
    assert np.allclose(x.grad, x1.grad + x2.grad)


def test_gradient_accumulates_across_backward_calls():
    x = T.parameter([2.0])
    T.backward(T.sum_all(x * x))
    T.backward(T.sum_all(x * x))
    assert x.grad.tolist() == [8.0]


def test_graph_is_topological_and_cleared():
    a = T.parameter([1.0, 2.0])
    b = T.tanh(a)
    c = b * b
    ops = list(T.current_graph().ops)
    assert ops.index(b) < ops.index(c)
    T.backward(T.sum_all(c))
    assert len(T.current_graph()) == 0


def test_no_grad_records_nothing():
    a = T.parameter([1.0])
    with T.no_grad():
        b = T.tanh(a)
    assert not b.requires_grad and len(T.current_graph()) == 0


def test_backward_is_deterministic():
    rng = np.random.default_rng(4)
    val = rng.normal(size=(4, 4))
    grads = []
    for _ in range(2):
        a = T.parameter(val)
        T.backward(T.log_sum_exp(T.matmul(a, T.tanh(a))))
        grads.append(a.grad.tobytes())
    assert grads[0] == grads[1]


def test_default_precision_is_float32():
    assert T.tensor([1.0]).dtype == np.float32
    with T.precision(np.float64):
        assert T.tensor([1.0]).dtype == np.float64
    assert T.tensor([1.0]).dtype == np.float32


def test_debug_checks_catch_nonfinite():
    with T.debug_checks(), np.errstate(divide="ignore"):
        with pytest.raises(FloatingPointError, match="log"):
            T.log(T.tensor([0.0]))


def test_sink_leaves_grad_untouched():
    x = T.parameter([3.0])
    (g,) = T.grad(T.sum_all(x * x), [x])
    assert g.tolist() == [6.0] and x.grad is None


def test_item_requires_single_value():
    with pytest.raises(ContractError):
        T.tensor([1.0, 2.0]).item()
