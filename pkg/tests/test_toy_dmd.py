import numpy as np
import pytest

from equiwarp.toy import DMDConfig, LinearGenerator, NumericalError, dmd_distill, make_synthetic_model, noise_cov
from equiwarp.toy.dmd import dmd_gradient, fd_kl_gradient, mean_reverse_kl, reverse_kl


@pytest.fixture(scope="module")
def small():
    return make_synthetic_model(2, 2, n_warps=1)


def test_reverse_kl_basics():
    mu, cov = np.array([1.0, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]])
    assert reverse_kl(mu, cov, mu, cov) == pytest.approx(0.0, abs=1e-12)
    # scalar closed form
    kl = reverse_kl(np.array([0.0]), np.array([[1.0]]), np.array([1.0]), np.array([[4.0]]))
    assert kl == pytest.approx(0.5 * (1 / 4 + 1 / 4 - 1 + np.log(4)))


def test_teacher_is_fixed_point(small):
    cov = small.cov() + 1e-12 * np.eye(small.dim)
    gen = LinearGenerator(np.linalg.cholesky(cov), small.mean(), 0.0)
    ga, gb = dmd_gradient(small, gen, DMDConfig().levels())
    assert max(np.abs(ga).max(), np.abs(gb).max()) < 1e-8


@pytest.mark.parametrize("beta", [0.0, 0.9])
def test_gradient_matches_finite_differences(small, beta):
    # the score-difference update is the KL gradient preconditioned by the noise covariance
    ts = DMDConfig().levels()
    sn = noise_cov(small, beta)
    rng = np.random.default_rng(int(beta * 10))
    for _ in range(3):
        gen = LinearGenerator(np.eye(small.dim) + 0.3 * rng.standard_normal((small.dim,) * 2),
                              rng.standard_normal(small.dim), beta)
        ga, gb = dmd_gradient(small, gen, ts)
        fa, fb = fd_kl_gradient(small, gen, ts)
        want = np.concatenate([(sn @ fa).ravel(), sn @ fb])
        got = np.concatenate([ga.ravel(), gb])
        assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-4


def test_scalar_teacher_converges():
    m = make_synthetic_model(1, 1, n_warps=0, cov_kind="isotropic", sigma0=1.7, mean_scale=2.0)
    res = dmd_distill(m, "independent", DMDConfig(lr=0.5, iterations=5000, tol=1e-10))
    g = res.generator
    assert abs(g.b[0] - m.mu0[0]) < 1e-3
    assert abs(abs(g.A[0, 0]) - 1.7) < 1e-3
    assert len(res.log_rows()) == len(res.cov_error)


def test_kl_decreases_during_training(small):
    cfg = DMDConfig(iterations=50)
    # warped noise makes the diffused laws singular, so the KL needs mixed noise
    res = dmd_distill(small, "mixed", cfg, beta=0.9)
    assert res.cov_error[-1] < res.cov_error[0]
    init = LinearGenerator(np.eye(small.dim), np.zeros(small.dim), 0.9)
    assert mean_reverse_kl(small, res.generator, cfg.levels()) < mean_reverse_kl(small, init, cfg.levels())


def test_divergence_aborts(small):
    with pytest.raises(NumericalError, match="diverged"):
        dmd_distill(small, "independent", DMDConfig(lr=500.0, iterations=50))


def test_bad_setups():
    mix = make_synthetic_model(2, 2, n_warps=1, motions=["shift:1,0", "shift:0,1"])
    with pytest.raises(ValueError):
        dmd_distill(mix)
    m = make_synthetic_model(2, 2, n_warps=1)
    with pytest.raises(ValueError):
        dmd_distill(m, "warped", init=LinearGenerator(np.eye(8), np.zeros(8), 0.0))
