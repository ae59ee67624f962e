import numpy as np
import pytest

from equiwarp.toy import (AnalyticDenoiser, NumericalError, TrainConfig, analytic_denoiser,
                          equivariance_error, fit_linear_denoiser, make_synthetic_model,
                          operator_error, sample_noise, sample_video)
from equiwarp.toy.denoise import psd_pinv
from equiwarp.toy.model import chunk_rng


def test_scalar_posterior_formula():
    m = make_synthetic_model(1, 1, n_warps=0, cov_kind="isotropic", sigma0=1.7)
    for t in (0.1, 1.0, 5.0):
        w, b = analytic_denoiser(m, "independent", t=t).at(t)
        s2 = 1.7 ** 2
        assert w[0, 0] == pytest.approx(s2 / (s2 + t * t), rel=1e-12)
        assert b[0] == pytest.approx(m.mu0[0] * t * t / (s2 + t * t), rel=1e-12)


def test_large_t_collapses_to_prior_mean():
    m = make_synthetic_model(4, 4, n_warps=2, cov_kind="isotropic")
    w, b = AnalyticDenoiser(m, 0.0).matrices(1e3)
    assert np.abs(w).max() < 1e-2
    mu = m.mean()
    assert np.linalg.norm(b - mu) / np.linalg.norm(mu) < 1e-2


@pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
def test_exact_equivariance_with_warped_noise(t):
    m = make_synthetic_model(8, 8, n_warps=4)
    err = equivariance_error(AnalyticDenoiser(m, 1.0), m, t)
    assert err.max() < 1e-8


def test_single_frame_error_is_zero():
    m = make_synthetic_model(4, 4, n_warps=0)
    assert np.array_equal(equivariance_error(AnalyticDenoiser(m, 0.0), m, 1.0), [0.0])


def test_sigma_f_breaks_equivariance():
    m = make_synthetic_model(4, 4, n_warps=2, sigma_f=0.1)
    assert equivariance_error(AnalyticDenoiser(m, 1.0), m, 1.0).max() > 1e-3


def test_psd_pinv_handles_structural_null_space():
    q = np.linalg.qr(np.random.default_rng(0).standard_normal((5, 5)))[0]
    a = (q * [3.0, 2.0, 1.0, 0.0, 0.0]) @ q.T
    p, lam, _ = psd_pinv(a)
    assert np.allclose(a @ p @ a, a, atol=1e-12)
    with pytest.raises(NumericalError):
        psd_pinv(np.zeros((3, 3)))


def test_mixture_denoiser_matches_components_far_from_ambiguity():
    m = make_synthetic_model(3, 3, n_warps=2, motions=["shift:1,0", "shift:0,1"], mean_scale=3.0)
    den = AnalyticDenoiser(m, 1.0)
    v = sample_video(m, 0, 5, motion=1)
    t = 0.05
    x = v + t * sample_noise(m, 1.0, np.ones(5, int), chunk_rng(0, 0))
    w, b, _, _ = den.component(t, 1)
    assert np.allclose(den.responsibilities(x, t)[1], 1.0)
    assert np.allclose(den(x, t), x @ w.T + b)
    with pytest.raises(ValueError):
        den.matrices(t)


def test_fit_matches_analytic_at_large_sample_size():
    m = make_synthetic_model(3, 3, n_warps=2)
    cfg = TrainConfig(t_min=0.5, t_max=5.0, n_levels=2, n_samples=100_000)
    fit = fit_linear_denoiser(m, cfg, "independent")
    an = AnalyticDenoiser(m, 0.0)
    for t in cfg.levels():
        assert operator_error(fit.at(t)[0], an.matrices(t)[0]) < 0.05


def test_fit_worker_invariance():
    m = make_synthetic_model(3, 3, n_warps=1)
    cfg = TrainConfig(n_levels=2, n_samples=5000, chunk=1000)
    a = fit_linear_denoiser(m, cfg, "warped", workers=1)
    b = fit_linear_denoiser(m, cfg, "warped", workers=3)
    assert np.array_equal(a.W, b.W) and np.array_equal(a.b, b.b)


def test_ridge_limit_and_rank_deficiency():
    m = make_synthetic_model(3, 3, n_warps=1)
    big = fit_linear_denoiser(m, TrainConfig(n_levels=1, n_samples=2000, ridge=1e9), "independent")
    assert np.abs(big.W).max() < 1e-6
    with pytest.raises(NumericalError, match="condition"):
        fit_linear_denoiser(m, TrainConfig(n_levels=1, n_samples=10, ridge=0.0), "independent")


def test_fitted_family_interpolates_and_refuses_outside_grid():
    m = make_synthetic_model(2, 2, n_warps=1)
    fit = fit_linear_denoiser(m, TrainConfig(t_min=1.0, t_max=4.0, n_levels=2, n_samples=2000),
                              "independent")
    mid = fit.at(2.0)[0]
    assert np.allclose(mid, 0.5 * (fit.W[0] + fit.W[1]))
    for t in (0.5, 8.0):
        with pytest.raises(ValueError, match="unavailable"):
            fit.at(t)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(t_min=0)
    with pytest.raises(ValueError):
        TrainConfig(ridge=-1)
