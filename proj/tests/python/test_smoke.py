import numpy as np
import pytest

import voxelcom


def test_likelihood_reference_value():
    assert voxelcom.likelihood(0.0, 0.0, 1.0) == pytest.approx(0.382925, abs=1e-5)


def test_expected_bits_monotone_in_sigma():
    sigmas = [0.05, 0.2, 1.0, 4.0]
    bits = [voxelcom.expected_bits_per_dim(s) for s in sigmas]
    assert all(b2 > b1 for b1, b2 in zip(bits, bits[1:]))


def test_allocate_nearest_tie_up():
    k = voxelcom.allocate([0.0, 3.9, 3.0, 100.0], 1.0, [0, 2, 4, 8])
    assert k == [0, 4, 4, 8]  # 3.0 is equidistant between 2 and 4, ties go up


def test_allocate_monotone_in_eta():
    bits = [1.0, 5.0, 9.0, 17.0]
    lo = voxelcom.allocate(bits, 0.5)
    hi = voxelcom.allocate(bits, 2.0)
    assert all(a <= b for a, b in zip(lo, hi))


def test_psnr_caps_on_identical_images():
    img = np.random.default_rng(0).random((16, 16, 3), dtype=np.float32)
    assert voxelcom.psnr(img, img) == 99.0
    noisy = np.clip(img + 0.1, 0.0, 1.0)
    assert voxelcom.psnr(img, noisy) < 30.0


def test_ssim_identity():
    img = np.random.default_rng(1).random((24, 24, 3), dtype=np.float32)
    assert voxelcom.ssim(img, img) == pytest.approx(1.0, abs=1e-9)


def test_validate_config():
    assert voxelcom.validate_config("[scene]\nkind = boxes\n")
    with pytest.raises(ValueError):
        voxelcom.validate_config("[scene]\nbogus = 1\n")
    with pytest.raises(ValueError):
        voxelcom.validate_config("[codec]\nlambda = -2\n")
