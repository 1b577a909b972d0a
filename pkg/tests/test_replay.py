"""Gaussian pseudo-feature replay: fitting, sampling, persistence."""

import numpy as np
import pytest

from conceptcil import replay
from conceptcil.errors import DataError, IntegrityError


def test_identical_rows_give_zero_covariance():
    v = np.array([1.0, -2.0, 0.5])
    stats = replay.fit_class(np.tile(v, (4, 1)), 0, shrink=1e-4)
    np.testing.assert_allclose(stats.mu, v, atol=1e-7)
    np.testing.assert_array_equal(stats.sigma, np.zeros((3, 3)))
    np.testing.assert_allclose(stats.chol, np.sqrt(1e-4) * np.eye(3), atol=1e-12)


def test_two_sample_unbiased_covariance():
    stats = replay.fit_class(np.array([[0.0], [2.0]]), 1, shrink=1e-4)
    assert stats.mu[0] == 1.0
    assert stats.sigma[0, 0] == 2.0  # unbiased: ((0-1)^2 + (2-1)^2) / (2-1)
    assert stats.sample_count == 2


def test_single_sample_fits_pure_shrinkage():
    stats = replay.fit_class(np.array([[3.0, 4.0]]), 2, shrink=1e-2)
    np.testing.assert_array_equal(stats.sigma, np.zeros((2, 2)))
    np.testing.assert_allclose(stats.chol @ stats.chol.T, 1e-2 * np.eye(2), atol=1e-15)


def test_nonfinite_features_rejected():
    with pytest.raises(DataError, match="non-finite"):
        replay.fit_class(np.array([[np.inf, 0.0]]), 0)


def test_fit_recovers_known_gaussian():
    rng = np.random.default_rng(17)
    mu = np.array([1.0, -0.5, 2.0])
    a = rng.normal(size=(3, 3))
    sigma = a @ a.T / 3.0 + 0.25 * np.eye(3)
    samples = mu + rng.standard_normal((5000, 3)) @ np.linalg.cholesky(sigma).T
    stats = replay.fit_class(samples, 0)
    np.testing.assert_allclose(stats.mu, mu, atol=0.05)
    np.testing.assert_allclose(stats.sigma, sigma, atol=0.1)


def test_cholesky_reconstruction():
    rng = np.random.default_rng(23)
    feats = rng.normal(size=(40, 6))
    stats = replay.fit_class(feats, 0, shrink=1e-4)
    recon = stats.chol @ stats.chol.T
    assert np.abs(recon - (stats.sigma + 1e-4 * np.eye(6))).max() < 1e-8


def test_sampling_is_seed_deterministic():
    stats = replay.fit_class(np.random.default_rng(0).normal(size=(30, 4)), 0)
    a = replay.sample(stats, 8, np.random.default_rng(99))
    b = replay.sample(stats, 8, np.random.default_rng(99))
    assert np.array_equal(a, b)


def test_degenerate_gaussian_sampling_envelope():
    v = np.array([2.0, -1.0])
    shrink = 1e-10
    stats = replay.fit_class(np.tile(v, (3, 1)), 0, shrink=shrink)
    draws = replay.sample(stats, 1000, np.random.default_rng(5))
    assert np.abs(draws - stats.mu).max() < np.sqrt(shrink) * 6.0


def test_sampling_moments_match_target():
    rng = np.random.default_rng(31)
    feats = rng.normal(size=(2000, 4))
    stats = replay.fit_class(feats, 0, shrink=1e-4)
    draws = replay.sample(stats, 10_000, np.random.default_rng(7))
    target_cov = stats.sigma + 1e-4 * np.eye(4)
    assert np.abs(draws.mean(axis=0) - stats.mu).max() < 0.05
    assert np.abs(np.cov(draws, rowvar=False) - target_cov).max() < 0.05


def test_affine_scaling_law_exact():
    rng = np.random.default_rng(41)
    feats = rng.normal(size=(50, 3))
    base = replay.fit_class(feats, 0, shrink=1e-4)
    scaled = replay.fit_class(feats * 2.0, 0, shrink=4e-4)  # sigma scales by 4
    a = replay.sample(base, 20, np.random.default_rng(3))
    b = replay.sample(scaled, 20, np.random.default_rng(3))
    assert np.array_equal((a - base.mu) * 2.0, b - scaled.mu)


def test_stats_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(53)
    stats = {
        cid: replay.fit_class(rng.normal(size=(20, 5)), cid, shrink=1e-4) for cid in (0, 1, 4)
    }
    replay.save_stats(list(stats.values()), tmp_path / "stats.json")
    loaded = replay.load_stats(tmp_path / "stats.json")
    assert sorted(loaded) == [0, 1, 4]
    for cid, original in stats.items():
        assert np.array_equal(loaded[cid].mu, original.mu)
        assert np.array_equal(loaded[cid].sigma, original.sigma)
        assert loaded[cid].sample_count == original.sample_count
        # identical Cholesky -> identical post-load sampling
        a = replay.sample(original, 6, np.random.default_rng(11))
        b = replay.sample(loaded[cid], 6, np.random.default_rng(11))
        assert np.array_equal(a, b)


def test_duplicate_class_id_rejected(tmp_path):
    rng = np.random.default_rng(5)
    a = replay.fit_class(rng.normal(size=(10, 3)), 7)
    b = replay.fit_class(rng.normal(size=(10, 3)), 7)
    with pytest.raises(IntegrityError, match="duplicate"):
        replay.save_stats([a, b], tmp_path / "stats.json")
    replay.save_stats([a], tmp_path / "stats.json")
    manifest = (tmp_path / "stats.json").read_text().replace("[\n    7\n  ]", "[\n    7,\n    7\n  ]")
    (tmp_path / "stats.json").write_text(manifest)
    with pytest.raises(IntegrityError, match="duplicate"):
        replay.load_stats(tmp_path / "stats.json")
