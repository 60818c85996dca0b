from __future__ import annotations

import numpy as np

from src.config import AugmentConfig
from src.transform.augment import (
    augment_batch, augment_window, spatial_occlusion, temporal_permutation, uniform_noise,
)


def window(rng, n=6, l=12):
    x = np.empty((2, n, l))
    x[0] = rng.normal(size=(n, l))
    x[1] = np.linspace(0.0, 0.5, l)[None, :]
    return x


def test_all_probabilities_zero_is_identity(rng):
    x = window(rng)
    cfg = AugmentConfig(p_occlude=0.0, p_permute=0.0, noise_scale=0.0)
    np.testing.assert_array_equal(augment_window(x, cfg, rng), x)


def test_full_occlusion_scales_metric_only(rng):
    x = window(rng)
    out = spatial_occlusion(x, AugmentConfig(p_occlude=1.0), rng)
    np.testing.assert_allclose(out[0], 0.05 * x[0])
    np.testing.assert_array_equal(out[1], x[1])


def test_permutation_single_sensor_is_identity(rng):
    x = window(rng, n=1)
    np.testing.assert_array_equal(temporal_permutation(x, AugmentConfig(p_permute=1.0), rng), x)


def test_permutation_preserves_each_timestep_multiset(rng):
    x = window(rng, n=8)
    out = temporal_permutation(x, AugmentConfig(p_permute=1.0), rng)
    for t in range(x.shape[2]):
        np.testing.assert_array_equal(np.sort(out[0, :, t]), np.sort(x[0, :, t]))
    # sensors move together across channels
    assert not np.array_equal(out[0], x[0])


def test_noise_stays_within_bound(rng):
    x = window(rng, n=20, l=12)
    out = uniform_noise(x, AugmentConfig(noise_scale=0.05), 2.0, rng)
    delta = out[0] - x[0]
    assert np.all(np.abs(delta) <= 0.1)
    assert np.any(delta != 0)
    np.testing.assert_array_equal(out[1], x[1])


def test_input_is_not_modified(rng):
    x = window(rng)
    before = x.copy()
    augment_window(x, AugmentConfig(p_occlude=1.0, p_permute=1.0), rng)
    np.testing.assert_array_equal(x, before)


def test_batch_is_deterministic_per_datapoint(rng):
    xb = np.stack([window(rng) for _ in range(4)])
    cfg = AugmentConfig(p_occlude=0.3, p_permute=0.3)
    a = augment_batch(xb, cfg, seed=9, indices=[10, 11, 12, 13])
    b = augment_batch(xb, cfg, seed=9, indices=[10, 11, 12, 13])
    np.testing.assert_array_equal(a, b)

    # the same datapoint gets the same augmentation whatever its batch position
    c = augment_batch(xb[[2]], cfg, seed=9, indices=[12])
    np.testing.assert_array_equal(c[0], a[2])

    d = augment_batch(xb, cfg, seed=10, indices=[10, 11, 12, 13])
    assert not np.array_equal(a, d)
