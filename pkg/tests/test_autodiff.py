import numpy as np
import pytest
from hypothesis import given, strategies as st

from pointplane import autodiff as ad
from pointplane.autodiff import BatchNormState, Tensor, grad_check, no_grad
from pointplane.errors import ShapeError
from pointplane.gradsuite import OP_TOLERANCE, op_cases


def T(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


# ----------------------------------------------------------------- layers

def test_linear_examples():
    x = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_array_equal(ad.linear_pointwise(x, np.eye(3), np.zeros(3)).data, x)
    assert ad.linear_pointwise(np.array([[3.0, 4.0]]), np.array([[1.0, 2.0]]), np.zeros(1)).data[0, 0] == 11
    out = ad.linear_pointwise(np.zeros((5, 2)), np.ones((3, 2)), np.array([1.0, 2.0, 3.0]))
    assert (out.data == [1, 2, 3]).all()
    with pytest.raises(ShapeError):
        ad.linear_pointwise(np.zeros((2, 3)), np.zeros((2, 2)))


def conv_reference(x, k, b):
    h, w, cin = x.shape
    out = np.zeros((h, w, k.shape[0]))
    for i in range(h):
        for j in range(w):
            for di in range(3):
                for dj in range(3):
                    ii, jj = i + di - 1, j + dj - 1
                    if 0 <= ii < h and 0 <= jj < w:
                        out[i, j] += k[:, di, dj, :] @ x[ii, jj]
    return out + b


def test_conv_examples():
    r = np.random.default_rng(1)
    x = r.standard_normal((4, 5, 2))
    delta = np.zeros((2, 3, 3, 2))
    delta[0, 1, 1, 0] = delta[1, 1, 1, 1] = 1
    np.testing.assert_array_equal(ad.conv2d_same(x, delta, np.zeros(2)).data, x)
    assert ad.conv2d_same(np.full((1, 1, 1), 5.0), np.ones((1, 3, 3, 1)), np.zeros(1)).data.item() == 5
    out = ad.conv2d_same(x, np.zeros((3, 3, 3, 2)), np.array([1.0, -2.0, 0.5]))
    assert (out.data == [1.0, -2.0, 0.5]).all()


def test_conv_matches_direct_loop_and_batches():
    r = np.random.default_rng(2)
    x, k, b = r.standard_normal((2, 5, 6, 3)), r.standard_normal((4, 3, 3, 3)), r.standard_normal(4)
    out = ad.conv2d_same(x, k, b).data
    for i in range(2):
        np.testing.assert_allclose(out[i], conv_reference(x[i], k, b), rtol=1e-12, atol=1e-12)
    with pytest.raises(ShapeError):
        ad.conv2d_same(x, np.zeros((4, 3, 3, 2)))


def test_depthwise_examples():
    x = np.random.default_rng(3).standard_normal((4, 2))
    np.testing.assert_array_equal(ad.depthwise_pointwise(x, np.ones(2), np.zeros(2)).data, x)
    assert ad.depthwise_pointwise(np.ones((1, 2)), np.array([2.0, 3.0]), np.zeros(2)).data.tolist() == [[2, 3]]
    assert (ad.depthwise_pointwise(x, np.zeros(2), np.array([4.0, 5.0])).data == [4, 5]).all()
    with pytest.raises(ShapeError):
        ad.depthwise_pointwise(x, np.ones(3))


# ------------------------------------------------------------- batch norm

def test_batch_norm_examples():
    st_ = BatchNormState.create(1)
    st_.beta.data[:] = 0.7
    out = ad.batch_norm(np.full((6, 1), 3.0), st_)
    assert np.abs(out.data - 0.7).max() < 1e-3
    st_ = BatchNormState.create(1)
    np.testing.assert_allclose(ad.batch_norm(np.array([[1.0], [3.0]]), st_).data[:, 0], [-1, 1], atol=1e-5)
    ev = BatchNormState.create(3)
    ev.mode = "eval"
    x = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_allclose(ad.batch_norm(x, ev).data, x / np.sqrt(1 + 1e-5), rtol=1e-12)


def test_batch_norm_running_stats_and_errors():
    st_ = BatchNormState.create(2)
    x = np.array([[1.0, 0.0], [3.0, 4.0]])
    ad.batch_norm(x, st_)
    np.testing.assert_allclose(st_.running_mean, 0.1 * x.mean(0))
    np.testing.assert_allclose(st_.running_var, 0.9 + 0.1 * x.var(0, ddof=1))
    with pytest.raises(ShapeError):
        ad.batch_norm(np.ones((1, 2)), st_)
    with pytest.raises(ShapeError):
        ad.batch_norm(np.ones((3, 3)), st_)


@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 40))
def test_batch_norm_train_standardises(seed, n):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, 3)) * r.uniform(0.5, 5, 3) + r.uniform(-5, 5, 3)
    out = ad.batch_norm(x, BatchNormState.create(3)).data
    assert np.abs(out.mean(0)).max() < 1e-9
    var = x.var(0)
    np.testing.assert_allclose(out.var(0), var / (var + 1e-5), atol=1e-6)
    assert (BatchNormState.create(3).running_var >= 0).all()


# ------------------------------------------------------------ activations

def test_activation_examples():
    assert ad.sigmoid(np.array(0.0)).data == 0.5
    assert ad.relu(np.array([-2.0, 3.0])).data.tolist() == [0, 3]
    np.testing.assert_allclose(ad.softmax_rows(np.full((1, 4), 7.0)).data, 0.25)


@given(st.integers(0, 2 ** 31 - 1))
def test_softmax_rows_properties(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((5, 6)) * 30
    s = ad.softmax_rows(x).data
    assert np.abs(s.sum(1) - 1).max() < 1e-9
    np.testing.assert_allclose(ad.softmax_rows(x + r.standard_normal((5, 1)) * 100).data, s, atol=1e-9)
    np.testing.assert_allclose(np.exp(ad.log_softmax_rows(x).data), s, atol=1e-12)


def test_max_over_neighbors_examples():
    out = ad.max_over_neighbors(np.array([[[1.0, 5.0]], [[3.0, 2.0]]]))
    assert out.data.tolist() == [[3, 5]]
    x = np.random.default_rng(0).standard_normal((1, 4, 2))
    np.testing.assert_array_equal(ad.max_over_neighbors(x).data, x[0])
    t = T(np.ones((3, 2, 2)))
    ad.sum(ad.max_over_neighbors(t)).backward()
    assert t.grad[0].tolist() == [[1, 1], [1, 1]] and (t.grad[1:] == 0).all()


# ------------------------------------------------------------------- tape

def test_grad_check_square():
    x = T(3.0)
    assert grad_check(lambda a: a * a, [x]) < 1e-6
    x = T(3.0)
    (x * x).backward()
    assert abs(x.grad - 6.0) < 1e-12


def test_fan_out_accumulates():
    x = T([1.0, -2.0, 0.5])
    y = ad.sum(ad.sigmoid(x) * 2.0 + ad.relu(x) * 3.0)
    y.backward()
    s = 1 / (1 + np.exp(-x.data))
    np.testing.assert_allclose(x.grad, 2 * s * (1 - s) + 3 * (x.data > 0), rtol=1e-12)


def test_backward_runs_in_reverse_creation_order():
    seen = []
    x = T([1.0, 2.0])
    a = x * 2.0
    b = a + 1.0
    c = a * b
    for t, name in ((a, "a"), (b, "b"), (c, "c")):
        fn = t._backward
        t._backward = (lambda f, n: (lambda g: (seen.append(n), f(g))))(fn, name)
    ad.sum(c).backward()
    assert seen == ["c", "b", "a"]


def test_no_grad_records_nothing():
    x = T([1.0])
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_backward_needs_scalar_or_gradient():
    with pytest.raises(ShapeError):
        T([1.0, 2.0]).backward()


def test_composed_sigmoid_linear_gradient():
    r = np.random.default_rng(4)
    ins = [T(r.standard_normal((6, 3))), T(r.standard_normal((2, 3))), T(r.standard_normal(2))]
    assert grad_check(lambda x, w, b: ad.sigmoid(ad.linear_pointwise(x, w, b)), ins) < 1e-4


def test_conv_gradient_example():
    r = np.random.default_rng(6)
    ins = [T(r.standard_normal((4, 4, 2))), T(r.standard_normal((3, 3, 3, 2))), T(r.standard_normal(3))]
    assert grad_check(ad.conv2d_same, ins) < 1e-4


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_op_matches_finite_differences(seed):
    for name, fn, inputs in op_cases(seed):
        err = max(grad_check(fn, inputs, seed=d) for d in range(3))
        assert err < OP_TOLERANCE, (name, err)
