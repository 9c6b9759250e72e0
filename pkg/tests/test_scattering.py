"""Scattering transform: nullity, channel count, shift covariance, stability."""

import numpy as np
import pytest

from depmax.descriptors import DescriptorSpec, compute_descriptor
from depmax.errors import ConfigError
from depmax.scattering import build_bank, scattering2d


def test_channel_count_for_default_parameters():
    bank = build_bank(32, 32, 2, 8)
    assert bank.channels_per_input == 81  # 1 + 2*8 + 8*8*1
    # enumerate valid (j1, t1, j2, t2) with j2 > j1 independently
    count2 = sum(
        1
        for j1 in range(2)
        for _ in range(8)
        for j2 in range(2)
        for _ in range(8)
        if j2 > j1
    )
    assert 1 + 2 * 8 + count2 == 81


@pytest.mark.parametrize("j,l,expect", [(1, 4, 1 + 4), (3, 2, 1 + 6 + 4 * 3)])
def test_channel_count_general(j, l, expect):
    assert build_bank(32, 32, j, l).channels_per_input == expect


def test_constant_image_nullity():
    c = 0.7
    s = scattering2d(np.full((1, 32, 32), c), 2, 8)
    np.testing.assert_allclose(s[0, 0], c, rtol=1e-9)  # order 0 preserves DC
    assert np.abs(s[0, 1:]).max() <= 1e-6 * c


def test_circular_shift_covariance():
    rng = np.random.default_rng(0)
    img = rng.random((1, 32, 32))
    s = scattering2d(img, 2, 8)
    shifted = scattering2d(np.roll(img, (4, 8), axis=(1, 2)), 2, 8)
    err = np.abs(np.roll(s, (1, 2), axis=(2, 3)) - shifted).max()
    assert err <= 1e-4 * np.abs(s).max()


def test_output_geometry():
    s = scattering2d(np.zeros((3, 32, 32)), 2, 8)
    assert s.shape == (3, 81, 8, 8)
    spec = DescriptorSpec(kind="scattering")
    out = compute_descriptor(np.zeros((2, 3, 32, 32)), spec)
    assert out.shape == (2, 3 * 81 * 8 * 8)


def test_indivisible_extent_rejected():
    with pytest.raises(ConfigError):
        scattering2d(np.zeros((1, 30, 30)), 2, 8)


def test_orientation_selectivity():
    # a vertical grating excites theta=0 filters far more than theta=90
    y, x = np.mgrid[0:32, 0:32]
    img = (0.5 + 0.4 * np.sin(2 * np.pi * 6 * x / 32))[None]
    s = scattering2d(img.astype(float), 2, 8)
    first = s[0, 1:17].mean(axis=(1, 2)).reshape(2, 8)
    for j in range(2):
        assert first[j, 0] > 5 * first[j, 4]


def test_deformation_stability_report():
    # report-level: descriptor distance vs input distance under a small warp
    rng = np.random.default_rng(1)
    img = rng.random((32, 32))
    shift = np.roll(img, 1, axis=1)  # one-pixel translation as a mild deformation
    a = scattering2d(img[None], 2, 8).reshape(-1)
    b = scattering2d(shift[None], 2, 8).reshape(-1)
    in_dist = np.linalg.norm(img - shift)
    out_dist = np.linalg.norm(a - b)
    ratio = out_dist / in_dist
    print(f"scattering deformation ratio: {ratio:.4f} (in {in_dist:.3f}, out {out_dist:.3f})")
    assert np.isfinite(ratio)