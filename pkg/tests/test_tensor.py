import numpy as np
import pytest

from bgpgat import tensor as T
from bgpgat.tensor import Tape, Tensor, norm_relative_error, numerical_gradient

rng = np.random.default_rng(0)


def check_grad(build, *shapes, positive=False, tol=1e-6):
    """Compare tape gradients of ``sum(build(*inputs) * probe)`` with central differences."""
    arrays = [rng.standard_normal(s) for s in shapes]
    if positive:
        arrays = [np.abs(a) + 0.5 for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    probe = None

    def loss_value():
        nonlocal probe
        out = build(*[Tensor(l.data) for l in leaves])
        if probe is None:
            probe = rng.standard_normal(out.shape)
        return float((out.data * probe).sum())

    loss_value()  # fixes the probe
    with Tape() as tape:
        out = build(*leaves)
        loss = T.sum(T.mul(out, probe))
    tape.backward(loss)
    for leaf in leaves:
        num = numerical_gradient(loss_value, leaf.data)
        assert norm_relative_error(leaf.grad, num) < tol


def test_matmul_shapes():
    check_grad(T.matmul, (3, 4), (4, 2))
    check_grad(T.matmul, (2, 3, 4), (4, 5))
    check_grad(T.matmul, (2, 3, 4), (2, 4, 5))
    check_grad(T.matmul, (2, 3, 4), (4, 1))


def test_broadcasting_arithmetic():
    check_grad(T.add, (2, 3, 4), (4,))
    check_grad(T.sub, (3, 4), (3, 1))
    check_grad(T.mul, (2, 3, 4), (3, 4))
    check_grad(lambda x: T.scale(x, -2.5), (3, 2))


def test_shape_ops():
    check_grad(T.transpose, (2, 3, 4))
    check_grad(lambda x: T.reshape(x, (6, 2)), (3, 4))
    check_grad(lambda x: T.getitem(x, (slice(None), 1, slice(0, 2))), (2, 3, 4))
    check_grad(lambda a, b: T.concat([a, b], axis=-1), (2, 3), (2, 5))
    check_grad(lambda a, b: T.concat([a, b], axis=0), (2, 3), (4, 3))


@pytest.mark.parametrize("fn", [T.sigmoid, T.tanh, T.elu, T.row_softmax, T.logsumexp,
                                lambda x: T.leaky_relu(x, 0.2),
                                lambda x: T.leaky_relu(x, 0.2, "clamp")])
def test_elementwise_and_softmax(fn):
    check_grad(fn, (2, 3, 4))


def test_reductions_and_pick():
    check_grad(T.mean, (3, 4))
    check_grad(lambda x: T.sum(x, axis=1), (3, 4))
    check_grad(lambda x: T.pick(x, np.array([0, 2, 1])), (3, 4))


def test_shared_subexpression_accumulates():
    check_grad(lambda x: T.mul(T.tanh(x), T.add(x, T.tanh(x))), (3, 3))


def test_relu_away_from_kink():
    x = Tensor(np.array([-2.0, -0.5, 0.5, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = T.sum(T.relu(x))
    tape.backward(loss)
    assert np.array_equal(x.grad, [0, 0, 1, 1])


def test_leaky_relu_values():
    x = np.array([-1.0, 0.0, 2.0])
    assert np.allclose(T.leaky_relu(x, 0.2).data, [-0.2, 0.0, 2.0])
    assert np.allclose(T.leaky_relu(x, 0.2, "clamp").data, [0.2, 0.0, 2.0])


def test_stable_softmax_and_logsumexp():
    x = np.array([[1000.0, 1000.0], [-1000.0, 0.0]])
    s = T.row_softmax(x).data
    assert np.allclose(s, [[0.5, 0.5], [0.0, 1.0]])
    assert np.allclose(T.logsumexp(x).data, [1000 + np.log(2), 0.0])
    assert np.isfinite(T.sigmoid(np.array([-800.0, 800.0])).data).all()


def test_masked_softmax():
    out = T.row_softmax(np.zeros((2, 3)), mask=np.array([[1, 0, 1], [1, 1, 1]], bool)).data
    assert np.allclose(out, [[0.5, 0, 0.5], [1 / 3] * 3])
    with pytest.raises(ValueError):
        T.row_softmax(np.zeros((1, 2)), mask=np.zeros((1, 2), bool))


def test_tape_single_use():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        loss = T.sum(x)
    tape.backward(loss)
    with pytest.raises(RuntimeError):
        tape.backward(loss)
    tape.reset()
    assert len(tape) == 0


def test_no_recording_without_tape_or_tracked_inputs():
    x = Tensor(np.ones(2), requires_grad=True)
    T.sum(x)  # no active tape: nothing breaks
    with Tape() as tape:
        T.tanh(np.ones(3))
        assert len(tape) == 0
        T.tanh(x)
        assert len(tape) == 1


def test_backward_needs_scalar():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = T.tanh(x)
    with pytest.raises(ValueError):
        tape.backward(y)


def test_rank_limit():
    with pytest.raises(ValueError):
        Tensor(np.zeros((1, 1, 1, 1)))


def test_dropout_mask():
    r = np.random.default_rng(0)
    m = T.dropout_mask((1000, 10), 0.2, r)
    assert set(np.unique(m)) <= {0.0, 1.25}
    assert abs(m.mean() - 1.0) < 0.05
    assert np.all(T.dropout_mask((3, 3), 0.5, r, training=False) == 1)
    with pytest.raises(ValueError):
        T.dropout_mask((2,), 1.0, r)


def test_numerical_gradient_of_quadratic():
    a = np.array([1.0, -2.0, 3.0])
    g = numerical_gradient(lambda: float((a ** 2).sum()), a)
    assert np.allclose(g, 2 * np.array([1.0, -2.0, 3.0]), atol=1e-8)
    assert np.array_equal(a, [1.0, -2.0, 3.0])
