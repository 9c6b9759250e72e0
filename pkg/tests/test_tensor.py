"""Tensor engine: primitive semantics, backward sweep, gradient checks."""

import numpy as np
import pytest

from depmax import tensor as T
from depmax.errors import ConfigError, ShapeError
from depmax.tensor import Tensor

import oracles


@pytest.fixture(autouse=True)
def fp64():
    with T.using_dtype(np.float64):
        yield


def test_matmul_identity():
    a = np.arange(6.0).reshape(2, 3)
    out = T.matmul(Tensor(a), Tensor(np.eye(3)))
    np.testing.assert_array_equal(out.data, a)


def test_matmul_hand_case():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    b = rng.normal(size=(3, 4))
    err = T.grad_check(lambda a: T.sum_(T.matmul(a, Tensor(b))), rng.normal(size=(2, 3)))
    assert err <= 1e-8
    # d(sum(a @ b))/da equals column sums of b broadcast over rows
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    T.sum_(T.matmul(a, Tensor(b))).backward()
    np.testing.assert_allclose(a.grad, np.tile(b.sum(axis=1), (2, 1)), atol=1e-12)


def test_conv2d_delta_kernel_is_identity():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 5, 5))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    out = T.conv2d(Tensor(x), Tensor(w), stride=1, pad=0)
    np.testing.assert_allclose(out.data, x, atol=1e-12)


def test_conv2d_all_ones_kernel_constant_image():
    c = 0.7
    x = np.full((1, 1, 6, 6), c)
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), stride=1, pad=0)
    np.testing.assert_allclose(out.data, 9 * c, rtol=1e-12)


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 2, 7, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    for stride, pad in [(1, 0), (2, 1), (1, 1)]:
        got = T.conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad).data
        want = oracles.conv2d_loop(x, w, stride, pad)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_conv2d_gradient_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(2, 2, 3, 3))
    err_x = T.grad_check(lambda t: T.sum_(T.square(T.conv2d(t, Tensor(w), 1, 1))), x)
    err_w = T.grad_check(lambda t: T.sum_(T.square(T.conv2d(Tensor(x), t, 2, 1))), w)
    assert err_x <= 1e-6
    assert err_w <= 1e-6


def test_conv2d_nonpositive_output_is_config_error():
    with pytest.raises(ConfigError):
        T.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))), 1, 0)


def test_batch_norm_normalized_input_is_identity():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(64, 5))
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    gamma = Tensor(np.ones(5), requires_grad=True)
    beta = Tensor(np.zeros(5), requires_grad=True)
    out = T.batch_norm(Tensor(x), gamma, beta, None, None, mode="train")
    np.testing.assert_allclose(out.data, x, atol=1e-4)


def test_batch_norm_constant_column_is_zero():
    x = np.ones((8, 3)) * 2.5
    out = T.batch_norm(Tensor(x), None, None, None, None, mode="train")
    np.testing.assert_allclose(out.data, 0.0, atol=1e-9)


def test_batch_norm_running_stats_momentum():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(16, 3)) + 2.0
    rm = np.full(3, 10.0)
    rv = np.full(3, 4.0)
    T.batch_norm(Tensor(x), None, None, rm, rv, mode="train", momentum=0.1)
    np.testing.assert_allclose(rm, 0.9 * 10.0 + 0.1 * x.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(rv, 0.9 * 4.0 + 0.1 * x.var(axis=0), rtol=1e-12)


def test_batch_norm_batch_of_one_raises():
    with pytest.raises(ShapeError, match="degenerate"):
        T.batch_norm(Tensor(np.ones((1, 3))), None, None, None, None, mode="train")


def test_batch_norm_gradient():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(6, 4))
    gamma = np.full(4, 1.3)
    beta = np.full(4, -0.2)
    weights = rng.normal(size=(6, 4))  # sum(bn^2) is constant, weight it instead

    def f(t):
        bn = T.batch_norm(t, Tensor(gamma), Tensor(beta), None, None, mode="train")
        return T.sum_(T.mul(bn, Tensor(weights)))

    assert T.grad_check(f, x) <= 1e-6


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    T.sum_(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_mean_square():
    rng = np.random.default_rng(7)
    xv = rng.normal(size=(5, 3))
    x = Tensor(xv, requires_grad=True)
    T.mean_(T.square(x)).backward()
    np.testing.assert_allclose(x.grad, 2 * xv / xv.size, rtol=1e-12)
    assert T.grad_check(lambda t: T.mean_(T.square(t)), xv) <= 1e-8


def test_backward_disconnected_leaf_gets_zero():
    x = Tensor(np.ones(3), requires_grad=True)
    other = Tensor(np.ones(3), requires_grad=True)
    loss = T.sum_(T.square(x))
    grads = T.gradients(loss, [x, other])
    np.testing.assert_array_equal(grads[1], np.zeros(3))
    assert grads[0].shape == (3,)


def test_backward_non_scalar_root_raises():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        T.add(x, x).backward()


def test_backward_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = T.add(T.mul(x, x), T.mul(x, 3.0))  # x^2 + 3x -> grad 2x + 3 = 7
    T.sum_(y).backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_backward_deterministic_bitwise():
    rng = np.random.default_rng(8)
    xv = rng.normal(size=(8, 6))

    def run():
        x = Tensor(xv.copy(), requires_grad=True)
        loss = T.mean_(T.square(T.relu(T.matmul(x, T.transpose(x)))))
        loss.backward()
        return x.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)


def test_sqrt_stable_at_zero():
    x = Tensor(np.zeros(4), requires_grad=True)
    out = T.sqrt_stable(x)
    np.testing.assert_allclose(out.data, np.sqrt(1e-12))
    T.sum_(out).backward()
    assert np.all(np.isfinite(x.grad))


def test_relu_kink_exclusion_in_grad_check():
    x = np.array([-1.0, -1e-7, 0.0, 1e-7, 1.0])
    h = 1e-5
    exclude = np.abs(x) < 10 * h
    err = T.grad_check(lambda t: T.sum_(T.relu(t)), x, h=h, exclude=exclude)
    assert err <= 1e-10


def test_grad_check_linear_is_exact():
    rng = np.random.default_rng(9)
    assert T.grad_check(lambda t: T.sum_(t), rng.normal(size=(4, 3))) <= 1e-10


@pytest.mark.parametrize(
    "name,f",
    [
        ("add_broadcast", lambda t: T.sum_(T.square(T.add(t, Tensor(np.arange(3.0)))))),
        ("sub", lambda t: T.sum_(T.square(T.sub(t, 0.3)))),
        ("mul_broadcast", lambda t: T.sum_(T.mul(t, Tensor(np.arange(1.0, 4.0))))),
        ("div", lambda t: T.sum_(T.div(t, Tensor(np.arange(1.0, 4.0))))),
        ("div_denominator", lambda t: T.sum_(T.div(Tensor(np.ones(3)), T.add(T.square(t), 1.0)))),
        ("square", lambda t: T.sum_(T.square(t))),
        ("sqrt_stable", lambda t: T.sum_(T.sqrt_stable(T.square(t)))),
        ("exp", lambda t: T.sum_(T.exp(t))),
        ("log", lambda t: T.sum_(T.log(T.add(T.square(t), 1.0)))),
        ("maximum", lambda t: T.sum_(T.maximum(t, 0.25))),
        ("mean_axis", lambda t: T.sum_(T.square(T.mean_(t, axis=0)))),
        ("sum_keepdims", lambda t: T.sum_(T.square(T.sum_(t, axis=1, keepdims=True)))),
        ("reshape", lambda t: T.sum_(T.square(T.reshape(t, (3, 2))))),
        ("transpose", lambda t: T.sum_(T.square(T.matmul(t, T.transpose(t))))),
    ],
)
def test_per_primitive_gradients(name, f):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = rng.normal(size=(2, 3)) + 0.5
    if name == "maximum":
        x = x + np.where(np.abs(x - 0.25) < 1e-3, 0.01, 0.0)  # step off the kink
    assert T.grad_check(f, x) <= 1e-6, name


def test_dtype_context_switches_width():
    with T.using_dtype(np.float32):
        assert Tensor(np.zeros(2)).data.dtype == np.float32
    assert Tensor(np.zeros(2)).data.dtype == np.float64  # fixture sets fp64
