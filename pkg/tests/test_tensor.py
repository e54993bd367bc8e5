import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from holofocus import tensor as T
from holofocus.tensor import ShapeError, Tensor

from conftest import fd_check

TOL = 1e-4


def r(rng, *shape):
    return rng.standard_normal(shape)


# --- gradient oracle, one primitive at a time --------------------------------

def test_grad_add_mul_sub(rng):
    a, b = r(rng, 3, 4), r(rng, 3, 4)
    assert fd_check(T.add, [a, b]) < TOL
    assert fd_check(T.mul, [a, b]) < TOL
    assert fd_check(T.sub, [a, b]) < TOL
    assert fd_check(lambda x, bias: x + bias, [a, r(rng, 4)]) < TOL
    assert fd_check(lambda x: x * 2.5 - 1.0, [a]) < TOL


def test_grad_matmul_linear(rng):
    assert fd_check(T.matmul, [r(rng, 3, 4), r(rng, 4, 2)]) < TOL
    assert fd_check(T.matmul, [r(rng, 2, 3, 4), r(rng, 2, 4, 5)]) < TOL
    assert fd_check(T.matmul, [r(rng, 2, 3, 4), r(rng, 4, 5)]) < TOL
    assert fd_check(T.linear, [r(rng, 2, 3, 4), r(rng, 4, 5), r(rng, 5)]) < TOL


def test_grad_shape_ops(rng):
    x = r(rng, 2, 3, 4)
    assert fd_check(lambda a: T.reshape(a, (6, 4)), [x]) < TOL
    assert fd_check(lambda a: T.transpose(a, (2, 0, 1)), [x]) < TOL
    assert fd_check(lambda a: a[:, 1:, ::2], [x]) < TOL
    assert fd_check(lambda a: a[:, 0], [x]) < TOL
    assert fd_check(lambda a, b: T.concat([a, b], axis=1), [x, r(rng, 2, 2, 4)]) < TOL
    assert fd_check(lambda a: T.roll(a, (1, -2), (1, 2)), [x]) < TOL
    assert fd_check(lambda a: T.take(a, np.array([[0, 2], [2, 1]])), [r(rng, 3, 2)]) < TOL


def test_grad_reductions(rng):
    x = r(rng, 3, 4, 2)
    assert fd_check(lambda a: T.sum_(a, axis=1), [x]) < TOL
    assert fd_check(lambda a: T.mean(a, axis=(0, 2)), [x]) < TOL
    assert fd_check(lambda a: T.mean(a), [x]) < TOL


def test_grad_pointwise(rng):
    x = r(rng, 4, 5)
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kinks of relu and abs
    for fn in (T.relu, T.gelu, T.tanh, T.abs_, T.log_cosh):
        assert fd_check(fn, [x]) < TOL, fn.__name__


def test_grad_softmax_layer_norm(rng):
    x = r(rng, 3, 5)
    assert fd_check(lambda a: T.softmax(a, axis=-1), [x]) < TOL
    assert fd_check(lambda a: T.softmax(a, axis=0), [x]) < TOL
    assert fd_check(T.layer_norm, [x, r(rng, 5), r(rng, 5)]) < TOL
    assert fd_check(lambda a: T.layer_norm(a), [x]) < TOL


def test_grad_dropout(rng):
    x = r(rng, 4, 6)
    assert fd_check(lambda a: T.dropout(a, 0.3, seed=5), [x]) < TOL


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 0), (2, 1), (1, 0)])
def test_grad_conv2d(rng, stride, padding):
    x, w, b = r(rng, 2, 3, 6, 6), r(rng, 4, 3, 3, 3), r(rng, 4)
    assert fd_check(lambda a, k, c: T.conv2d(a, k, c, stride, padding), [x, w, b]) < TOL


def test_grad_pools(rng):
    x = rng.permutation(2 * 3 * 4 * 4).reshape(2, 3, 4, 4) * 0.1  # distinct values, no ties
    assert fd_check(lambda a: T.maxpool2d(a, 2), [x]) < TOL
    assert fd_check(lambda a: T.mean_pool2d(a, 2), [r(rng, 2, 3, 4, 4)]) < TOL


# --- forward semantics ---------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)
    x = np.array([[1.0, -2.0, 0.3], [5.0, 5.0, -1.0]])
    np.testing.assert_allclose(T.softmax(Tensor(x + 7.5)).data, T.softmax(Tensor(x)).data, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_softmax_simplex(xs):
    p = T.softmax(Tensor(np.array(xs))).data
    assert np.all(p > 0) and np.all(p <= 1)
    assert abs(p.sum() - 1) < 1e-12


def test_softmax_empty_axis_rejected():
    with pytest.raises(ShapeError):
        T.softmax(Tensor(np.zeros((3, 0))), axis=-1)


def test_layer_norm_statistics(rng):
    y = T.layer_norm(Tensor(r(rng, 6, 32) * 7 + 3)).data
    assert np.abs(y.mean(-1)).max() < 1e-10
    # eps = 1e-5 on a variance of ~49 perturbs the output variance by ~2e-7 relative
    var = y.var(-1)
    assert np.abs(var - 1).max() < 1e-6


def test_conv_identity_kernel(rng):
    x = r(rng, 2, 1, 7, 5)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(T.conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data, x)


def test_conv_matches_direct_sum(rng):
    x, w, b = r(rng, 1, 2, 5, 6), r(rng, 3, 2, 3, 3), r(rng, 3)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for o in range(3):
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_dropout_eval_identity_and_seeded(rng):
    x = Tensor(r(rng, 5, 5))
    assert T.dropout(x, 0.5, seed=1, training=False) is x
    np.testing.assert_array_equal(T.dropout(x, 0.5, 3).data, T.dropout(x, 0.5, 3).data)


def test_shape_errors_name_the_op():
    with pytest.raises(ShapeError, match="matmul"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError, match="conv2d"):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError, match="add"):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


# --- backward semantics ------------------------------------------------------------

def test_backward_examples(rng):
    x = Tensor(r(rng, 4, 3), requires_grad=True)
    T.sum_(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((4, 3)))
    x.zero_grad()
    T.sum_(x * x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_accumulates(rng):
    x = Tensor(r(rng, 3), requires_grad=True)
    T.sum_(x * 3.0).backward()
    T.sum_(x * 3.0).backward()
    np.testing.assert_array_equal(x.grad, np.full(3, 6.0))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_reused_node_and_tape_order(rng):
    x = Tensor(r(rng, 3), requires_grad=True)
    y = x * x
    z = T.sum_(y + y * x)
    order = T.tape(z)
    pos = {id(t): k for k, t in enumerate(order)}
    assert pos[id(x)] < pos[id(y)] < pos[id(z)]
    z.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 3 * x.data ** 2)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and T.is_grad_enabled()


def test_grads_finite_after_backward(rng):
    w = Tensor(r(rng, 4, 4), requires_grad=True)
    x = Tensor(r(rng, 2, 4))
    T.mean(T.log_cosh(T.gelu(T.linear(x, w)) * 100.0)).backward()
    assert np.all(np.isfinite(w.grad))


# --- checkpoints ---------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, rng):
    state = {"a.w": r(rng, 3, 4), "b": r(rng, 5).astype(np.float32), "scalar": np.array(2.0)}
    path = tmp_path / "m.tnsr"
    T.save_checkpoint(path, state)
    back = T.load_checkpoint(path)
    assert list(back) == list(state)
    for k in state:
        assert back[k].dtype == state[k].dtype
        np.testing.assert_array_equal(back[k], state[k])
    raw = path.read_bytes()
    assert raw[:4] == b"TNSR"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert int.from_bytes(raw[6:10], "little") == 3


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.tnsr"
    p.write_bytes(b"NOPE" + bytes(10))
    with pytest.raises(ValueError):
        T.load_checkpoint(p)


def test_trunc_normal_bounds():
    x = T.trunc_normal(np.random.default_rng(0), (200, 200), std=0.02)
    assert np.abs(x).max() <= 0.04
    assert 0.015 < x.std() < 0.02
