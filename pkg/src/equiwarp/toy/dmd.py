"""Distribution-matching distillation of a linear one-step generator.

The generator is ``G(N) = A N + b`` with ``N ~ N(0, Sigma_N)``.  Both the
teacher (the model) and the student pushforward ``N(b, A Sigma_N A^T)`` are
Gaussian, so their posterior means at every noise level are closed form and
the expectation over ``N`` and the diffusion noise is taken exactly.

The update direction is the score-difference gradient

    grad = -E_t E[(D_teacher(x) - D_student(x)) dG/dtheta] / t^2,
    x = G(N) + t N_s,

which equals ``Sigma_N`` times the gradient of the time-averaged reverse KL
``KL(p_student,t || p_teacher,t)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .denoise import NumericalError, _posterior
from .model import SyntheticVideoModel, noise_cov, resolve_beta

__all__ = ["LinearGenerator", "DMDConfig", "DMDResult", "dmd_gradient", "reverse_kl",
           "mean_reverse_kl", "fd_kl_gradient", "dmd_distill"]


@dataclass
class LinearGenerator:
    A: np.ndarray
    b: np.ndarray
    beta: float

    def __call__(self, noise):
        return np.asarray(noise) @ self.A.T + self.b

    def covariance(self, sigma_n) -> np.ndarray:
        return self.A @ sigma_n @ self.A.T

    def copy(self):
        return LinearGenerator(self.A.copy(), self.b.copy(), self.beta)


@dataclass(frozen=True)
class DMDConfig:
    lr: float = 0.1
    iterations: int = 2000
    t_min: float = 0.5
    t_max: float = 20.0
    n_t: int = 8
    t_batch: int = 0      # 0 uses the whole grid every iteration
    seed: int = 0
    tol: float = 0.0      # stop once both errors fall below this

    def levels(self) -> np.ndarray:
        return np.geomspace(self.t_min, self.t_max, self.n_t) if self.n_t > 1 else np.array([self.t_min])


@dataclass
class DMDResult:
    generator: LinearGenerator
    mean_error: list = field(default_factory=list)
    cov_error: list = field(default_factory=list)

    def log_rows(self):
        return [{"iteration": i, "mean_error": m, "cov_error": c}
                for i, (m, c) in enumerate(zip(self.mean_error, self.cov_error))]


class _Teacher:
    def __init__(self, model, beta):
        self.mu = model.mean()
        self.cov = model.cov()
        self.noise = noise_cov(model, beta)
        self._cache = {}

    def at(self, t):
        if t not in self._cache:
            self._cache[t] = _posterior(self.mu, self.cov, self.noise, t)[:2]
        return self._cache[t]


def _grad_at(teacher, gen, t):
    wt, bt = teacher.at(t)
    ws, bs, _, _ = _posterior(gen.b, gen.covariance(teacher.noise), teacher.noise, t)
    delta = wt - ws
    c = bt - bs
    gb = -(delta @ gen.b + c) / (t * t)
    ga = -(delta @ gen.A @ teacher.noise) / (t * t)
    return ga, gb


def dmd_gradient(model: SyntheticVideoModel, gen: LinearGenerator, ts, teacher=None):
    """Exact expected update direction ``(dA, db)`` averaged over ``ts``."""
    teacher = teacher or _Teacher(model, gen.beta)
    ga, gb = np.zeros_like(gen.A), np.zeros_like(gen.b)
    for t in ts:
        a, b = _grad_at(teacher, gen, float(t))
        ga += a
        gb += b
    return ga / len(ts), gb / len(ts)


def reverse_kl(mean_p, cov_p, mean_q, cov_q) -> float:
    """``KL(N(mean_p, cov_p) || N(mean_q, cov_q))`` for nonsingular covariances."""
    n = len(mean_p)
    lq = np.linalg.cholesky(cov_q)
    lp = np.linalg.cholesky(cov_p)
    sol = np.linalg.solve(lq, lp)
    diff = np.linalg.solve(lq, mean_q - mean_p)
    logdet = 2.0 * (np.log(np.diag(lq)).sum() - np.log(np.diag(lp)).sum())
    return 0.5 * (np.sum(sol ** 2) + diff @ diff - n + logdet)


def mean_reverse_kl(model, gen: LinearGenerator, ts) -> float:
    """Time-averaged ``KL(p_student,t || p_teacher,t)`` over the diffused laws."""
    sn = noise_cov(model, gen.beta)
    s = gen.covariance(sn)
    mu, cv = model.mean(), model.cov()
    return float(np.mean([reverse_kl(gen.b, s + t * t * sn, mu, cv + t * t * sn) for t in ts]))


def fd_kl_gradient(model, gen: LinearGenerator, ts, eps=1e-5):
    """Central finite differences of :func:`mean_reverse_kl` in every entry of A and b."""
    def f(a, b):
        return mean_reverse_kl(model, LinearGenerator(a, b, gen.beta), ts)

    ga = np.zeros_like(gen.A)
    for idx in np.ndindex(*gen.A.shape):
        up, dn = gen.A.copy(), gen.A.copy()
        up[idx] += eps
        dn[idx] -= eps
        ga[idx] = (f(up, gen.b) - f(dn, gen.b)) / (2 * eps)
    gb = np.zeros_like(gen.b)
    for i in range(gen.b.size):
        up, dn = gen.b.copy(), gen.b.copy()
        up[i] += eps
        dn[i] -= eps
        gb[i] = (f(gen.A, up) - f(gen.A, dn)) / (2 * eps)
    return ga, gb


def dmd_distill(model: SyntheticVideoModel, noise_mode="warped", config: DMDConfig = DMDConfig(),
                beta=None, init: LinearGenerator = None) -> DMDResult:
    """Gradient descent on the generator with the score-difference update.

    Each iteration uses the whole t-grid, or ``t_batch`` levels drawn from it.
    The log holds ``||b - mu_V||`` and ``||A Sigma_N A^T - Sigma_V||_F`` before
    every update and once after the last.
    """
    bt = resolve_beta(noise_mode, beta)
    if model.n_motions != 1:
        raise ValueError("distillation needs a single-motion teacher")
    teacher = _Teacher(model, bt)
    gen = init.copy() if init is not None else LinearGenerator(np.eye(model.dim), np.zeros(model.dim), bt)
    if gen.beta != bt:
        raise ValueError("initial generator uses a different noise mode")
    grid = config.levels()
    rng = np.random.default_rng([config.seed, 31])
    res = DMDResult(gen)

    def log():
        me = float(np.linalg.norm(gen.b - teacher.mu))
        ce = float(np.linalg.norm(gen.covariance(teacher.noise) - teacher.cov))
        res.mean_error.append(me)
        res.cov_error.append(ce)
        return me, ce

    _, c0 = log()
    for _ in range(config.iterations):
        if 0 < config.t_batch < len(grid):
            ts = rng.choice(grid, config.t_batch, replace=False)
        else:
            ts = grid
        ga, gb = dmd_gradient(model, gen, ts, teacher)
        gen.A -= config.lr * ga
        gen.b -= config.lr * gb
        me, ce = log()
        if not (math.isfinite(me) and math.isfinite(ce)) or (c0 > 0 and ce > 10 * c0):
            raise NumericalError(f"distillation diverged: covariance error {ce:.3g} "
                                 f"vs initial {c0:.3g}; lower the step size")
        if me < config.tol and ce < config.tol:
            break
    return res
