# tests/core/test_autodiff.py

import numpy as np
import pytest

from core import autodiff as ad
from core.autodiff import Tape, Tensor
from core.config import LOG_CLAMP
from core.errors import ShapeError, TapeError, TokenError
from core.gradcheck import grad_check
from core.params import ParamStore


def _numeric_grad(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        plus = fn(x)
        x[idx] = orig - h
        minus = fn(x)
        x[idx] = orig
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def test_add_mul_broadcast_gradients():
    """A bias broadcast over rows must receive the row-sum of the upstream gradient."""
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)

    with Tape() as tape:
        loss = ad.sum_((a + b) * a)
    tape.backward(loss)

    np.testing.assert_allclose(a.grad, 2 * a.data + b.data)
    np.testing.assert_allclose(b.grad, a.data.sum(axis=0))


@pytest.mark.parametrize("shape_a, shape_b", [((3, 4), (4, 2)), ((4,), (4, 2)), ((3, 4), (4,)), ((4,), (4,))])
def test_matmul_gradients_match_finite_differences(shape_a, shape_b):
    rng = np.random.default_rng(0)
    a_val = rng.normal(size=shape_a)
    b_val = rng.normal(size=shape_b)

    a = Tensor(a_val, requires_grad=True)
    b = Tensor(b_val, requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(ad.tanh(a @ b))
    tape.backward(loss)

    expected_a = _numeric_grad(lambda x: np.tanh(x @ b_val).sum(), a_val.copy())
    expected_b = _numeric_grad(lambda x: np.tanh(a_val @ x).sum(), b_val.copy())
    np.testing.assert_allclose(a.grad, expected_a, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(b.grad, expected_b, rtol=1e-6, atol=1e-8)


def test_leaf_used_twice_accumulates_both_contributions():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(x * x + x)
    tape.backward(loss)
    assert x.grad[0] == pytest.approx(7.0)


def test_backward_twice_raises():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(x * x)
    tape.backward(loss)

    with pytest.raises(TapeError):
        tape.backward(loss)


def test_backward_on_empty_tape_raises():
    tape = Tape()
    with pytest.raises(TapeError):
        tape.backward(Tensor(1.0))


def test_non_scalar_loss_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(TapeError):
        tape.backward(y)


def test_ops_outside_a_tape_are_not_recorded():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.sum_(x * 2.0)
    assert y.is_leaf
    assert y.item() == pytest.approx(6.0)

    with Tape() as tape:
        ad.sum_(Tensor(np.ones(3)) * 2.0)  # nothing requires grad
    assert len(tape) == 0


def test_softmax_rows_sum_to_one_for_large_inputs():
    scores = Tensor(np.array([[1000.0, 1001.0, 999.0], [-5.0, 0.0, 5.0]]))
    out = ad.softmax_lastdim(scores)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(np.isfinite(out.data))


def test_softmax_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x_val = rng.normal(size=5)
    weights = rng.normal(size=5)
    x = Tensor(x_val, requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(ad.softmax_lastdim(x) * weights)
    tape.backward(loss)

    def f(v):
        e = np.exp(v - v.max())
        return float((e / e.sum() * weights).sum())

    np.testing.assert_allclose(x.grad, _numeric_grad(f, x_val.copy()), rtol=1e-6, atol=1e-9)


def test_log_clamps_zero_and_passes_no_gradient():
    p = Tensor(np.array([0.0, 0.5]), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(ad.log(p))
    tape.backward(loss)

    assert loss.item() == pytest.approx(np.log(LOG_CLAMP) + np.log(0.5))
    assert p.grad[0] == 0.0
    assert p.grad[1] == pytest.approx(2.0)


def test_slice_scatters_gradient_back():
    x = Tensor(np.arange(8.0), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(x[2:5] * 3.0)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [0, 0, 3, 3, 3, 0, 0, 0])


def test_embed_lookup_accumulates_repeated_ids():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(ad.embed_lookup(table, [1, 1, 3]))
    tape.backward(loss)
    np.testing.assert_array_equal(table.grad[:, 0], [0, 2, 0, 1])


def test_embed_lookup_rejects_out_of_range_ids():
    table = Tensor(np.zeros((4, 3)))
    with pytest.raises(TokenError):
        ad.embed_lookup(table, 4)


def test_shape_error_names_the_op_and_shapes():
    with pytest.raises(ShapeError) as excinfo:
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    message = str(excinfo.value)
    assert "matmul" in message
    assert "(2, 3)" in message and "(4, 2)" in message


def test_concat_and_stack_route_gradients_to_parts():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    weights = np.arange(5.0)
    with Tape() as tape:
        loss = ad.sum_(ad.concat([a, b]) * weights)
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, [0, 1])
    np.testing.assert_array_equal(b.grad, [2, 3, 4])

    rows = ad.stack([Tensor(np.ones(3)), Tensor(np.zeros(3))])
    assert rows.shape == (2, 3)


def test_forward_op_dispatches_by_kind():
    out = ad.forward_op("mul", [Tensor(2.0), Tensor(3.0)])
    assert out.item() == 6.0
    with pytest.raises(ValueError):
        ad.forward_op("conv2d", [])


# op kind -> (operand shapes, attrs); every operand is a parameter
OP_CASES = {
    "matmul": ([(3, 4), (4, 2)], {}),
    "add": ([(3, 4), (4,)], {}),
    "mul": ([(3, 4), (4,)], {}),
    "concat": ([(3, 4), (3, 2)], {"axis": -1}),
    "tanh": ([(3, 4)], {}),
    "sigmoid": ([(3, 4)], {}),
    "softmax_lastdim": ([(3, 4)], {}),
    "log": ([(3, 4)], {}),
    "sum": ([(3, 4)], {"axis": 0}),
    "mean": ([(3, 4)], {"axis": 1}),
    "slice": ([(3, 4)], {"key": (slice(0, 2), slice(1, 4))}),
    "embed_lookup": ([(5, 4)], {"ids": [1, 3, 1]}),
    "transpose": ([(3, 4)], {}),
    "reshape": ([(3, 4)], {"shape": (2, 6)}),
}


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("kind", sorted(OP_CASES))
def test_every_op_gradient_matches_finite_differences(kind, seed):
    shapes, attrs = OP_CASES[kind]
    rng = np.random.default_rng([seed, len(kind)])
    store = ParamStore()
    for i, shape in enumerate(shapes):
        value = rng.normal(size=shape)
        # log needs a positive operand away from the clamp
        store.add(f"x{i}", np.abs(value) + 0.1 if kind == "log" else value)

    def loss_fn(params):
        out = ad.forward_op(kind, [params[f"x{i}"] for i in range(len(shapes))], **attrs)
        weights = np.random.default_rng([seed, 99]).normal(size=out.shape)
        return ad.sum_(out * Tensor(weights))

    report = grad_check(loss_fn, store, tolerance=1e-4)
    assert report.passed, report.failed_names()
    assert sum(e.checked for e in report.entries) == store.size()
