"""Distance covariance / correlation: oracle equivalence and properties."""

import numpy as np
import pytest

from depmax import tensor as T
from depmax.dcor import (
    CenteredDistanceMatrix,
    dcor_loss,
    dcor_stat,
    dcov2,
    double_center,
    double_center_np,
    pairwise_distances,
    pairwise_distances_np,
)
from depmax.errors import ShapeError
from depmax.tensor import Tensor

import oracles


@pytest.fixture(autouse=True)
def fp64():
    with T.using_dtype(np.float64):
        yield


# -- pairwise distances ----------------------------------------------------


def test_identical_rows_give_zero_distances():
    x = np.tile(np.array([1.0, 2.0, 3.0]), (4, 1))
    np.testing.assert_allclose(pairwise_distances_np(x), 0.0, atol=1e-12)


def test_three_four_five_triangle():
    d = pairwise_distances_np(np.array([[0.0, 0.0], [3.0, 4.0]]))
    np.testing.assert_allclose(d[0, 1], 5.0, rtol=1e-12)
    np.testing.assert_allclose(d[1, 0], 5.0, rtol=1e-12)
    assert d[0, 0] == 0.0


def test_translation_leaves_distances_unchanged():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    d1 = pairwise_distances_np(x)
    d2 = pairwise_distances_np(x + 7.25)
    np.testing.assert_allclose(d1, d2, atol=1e-9)


def test_pairwise_batch_too_small():
    with pytest.raises(ShapeError, match="B >= 2"):
        pairwise_distances_np(np.ones((1, 3)))


def test_differentiable_distances_match_stat_off_diagonal():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 4))
    dt = pairwise_distances(Tensor(x)).data
    dn = pairwise_distances_np(x)
    off = ~np.eye(6, dtype=bool)
    np.testing.assert_allclose(dt[off], dn[off], rtol=1e-9)
    # diagonal is sqrt(rounding noise + eps), so only approximately sqrt(eps)
    np.testing.assert_allclose(np.diag(dt), np.sqrt(1e-12), rtol=1e-3)


# -- double centering ---------------------------------------------------------


def test_double_center_constant_matrix_is_zero():
    out = double_center_np(np.full((5, 5), 3.3))
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_double_center_hand_case():
    out = double_center_np(np.array([[0.0, 2.0], [2.0, 0.0]]))
    np.testing.assert_allclose(out, [[-1.0, 1.0], [1.0, -1.0]], atol=1e-12)


def test_double_center_row_col_sums_vanish():
    rng = np.random.default_rng(2)
    m = pairwise_distances_np(rng.normal(size=(9, 4)))
    c = double_center(m, source_shape=(9, 4))
    assert isinstance(c, CenteredDistanceMatrix)
    b = m.shape[0]
    assert np.abs(c.values.sum(axis=0)).max() <= 1e-9 * b
    assert np.abs(c.values.sum(axis=1)).max() <= 1e-9 * b
    np.testing.assert_allclose(c.values, c.values.T, atol=1e-12)


def test_double_center_non_square_raises():
    with pytest.raises(ShapeError):
        double_center_np(np.ones((3, 4)))


# -- dcov2 -----------------------------------------------------------------------


def test_dcov2_constant_argument_is_zero():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 3))
    y = np.tile(np.array([1.0, 2.0]), (6, 1))
    assert abs(dcov2(x, y)) <= 1e-12


def test_dcov2_fixed_case_vs_four_term_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4, 2))
    y = rng.normal(size=(4, 3))
    got = dcov2(x, y)
    want = oracles.dcov2_four_term(x, y)
    assert abs(got - want) <= 1e-10 * max(abs(want), 1.0)


def test_dcov2_self_is_nonnegative_dvar():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(7, 3))
    assert dcov2(x, x) >= 0.0


def test_dcov2_batch_mismatch():
    with pytest.raises(ShapeError, match="batch"):
        dcov2(np.ones((4, 2)), np.ones((5, 2)))


def test_oracle_equivalence_many_random_cases():
    rng = np.random.default_rng(6)
    for _ in range(25):
        b = int(rng.integers(3, 17))
        d1 = int(rng.integers(1, 9))
        d2 = int(rng.integers(1, 6))
        x = rng.normal(size=(b, d1))
        y = rng.normal(size=(b, d2))
        got = dcov2(x, y)
        want = oracles.dcov2_four_term(x, y)
        assert abs(got - want) <= 1e-10 * max(abs(want), 1e-3)
        got_r = dcor_stat(x, y).dcor
        want_r = oracles.dcor_four_term(x, y)
        assert abs(got_r - want_r) <= 1e-10


# -- dcor_stat ---------------------------------------------------------------------


def test_dcor_self_is_one():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(10, 4))
    assert abs(dcor_stat(x, x).dcor - 1.0) <= 1e-9


def test_dcor_independent_batches_are_weakly_dependent():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(512, 4))
    y = rng.normal(size=(512, 7))
    r = dcor_stat(x, y)
    assert r.dcor <= 0.3
    assert not r.degenerate


def test_dcor_rigid_motion_and_scaling_invariance():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(12, 5))
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    y = 2.5 * (x @ q) + 3.0
    assert abs(dcor_stat(x, y).dcor - 1.0) <= 1e-9


def test_dcor_invariances_per_argument():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(10, 4))
    y = rng.normal(size=(10, 6))
    base = dcor_stat(x, y).dcor
    qx, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    qy, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    assert abs(dcor_stat(x + 5.0, y).dcor - base) <= 1e-9
    assert abs(dcor_stat(x, y - 2.0).dcor - base) <= 1e-9
    assert abs(dcor_stat(x @ qx, y).dcor - base) <= 1e-9
    assert abs(dcor_stat(x, y @ qy).dcor - base) <= 1e-9
    assert abs(dcor_stat(0.3 * x, y).dcor - base) <= 1e-9
    assert abs(dcor_stat(x, 17.0 * y).dcor - base) <= 1e-9


def test_dcor_symmetry_is_exact():
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = rng.normal(size=(8, 3))
        y = rng.normal(size=(8, 5))
        assert dcor_stat(x, y).dcor == dcor_stat(y, x).dcor


def test_dcor_range():
    rng = np.random.default_rng(12)
    for _ in range(50):
        b = int(rng.integers(2, 12))
        x = rng.normal(size=(b, int(rng.integers(1, 5))))
        y = x + rng.normal(0, rng.uniform(0.01, 10), size=x.shape) @ np.ones((x.shape[1], x.shape[1]))
        r = dcor_stat(x, y).dcor
        assert -1e-12 <= r <= 1.0 + 1e-9


def test_dcor_degenerate_flag():
    x = np.tile(np.array([1.0, 2.0]), (5, 1))
    y = np.random.default_rng(13).normal(size=(5, 3))
    r = dcor_stat(x, y)
    assert r.degenerate
    assert r.dcor == 0.0


# -- dcor_loss ----------------------------------------------------------------------


def test_dcor_loss_matches_stat():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(16, 4))
    y = rng.normal(size=(16, 6))
    loss = dcor_loss(Tensor(x), Tensor(y)).item()
    stat = dcor_stat(x, y).dcor
    assert abs(loss - stat) <= 1e-6


def test_dcor_loss_gradient_finite_differences():
    # dcor is scale-invariant, so unlucky draws have near-null gradient
    # coordinates where the difference quotient is pure roundoff; a fixed
    # well-conditioned instance keeps this a meaningful 1e-4 check.
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 4))
    y = rng.normal(size=(6, 3))
    err = T.grad_check(lambda t: dcor_loss(t, Tensor(y)), x)
    assert err <= 1e-4
    err_y = T.grad_check(lambda t: dcor_loss(Tensor(x), t), y)
    assert err_y <= 1e-4


def test_dcor_loss_degenerate_argument_gives_zero_with_finite_grad():
    rng = np.random.default_rng(16)
    x = rng.normal(size=(6, 4))
    y = np.tile(np.array([1.0, 2.0]), (6, 1))
    xt = Tensor(x, requires_grad=True)
    out = dcor_loss(xt, Tensor(y))
    assert abs(out.item()) <= 1e-6
    out.backward()
    assert np.all(np.isfinite(xt.grad))


def test_dcor_loss_batch_mismatch():
    with pytest.raises(ShapeError):
        dcor_loss(Tensor(np.ones((4, 2))), Tensor(np.ones((5, 2))))
