"""Posterior-mean denoisers for the toy model: analytic and ridge-fitted."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..parallel import map_chunks
from .model import (SyntheticVideoModel, draw_videos, chunk_rng, noise_cov,
                    resolve_beta, sample_noise)

__all__ = ["NumericalError", "AnalyticDenoiser", "LinearDenoiser", "TrainConfig",
           "analytic_denoiser", "fit_linear_denoiser", "equivariance_error",
           "psd_pinv", "operator_error"]

PINV_RCOND = 1e-11
LIKELIHOOD_FLOOR = 1e-9


class NumericalError(ArithmeticError):
    pass


def psd_pinv(a, rcond=PINV_RCOND):
    """Pseudo-inverse of a symmetric PSD matrix via eigendecomposition.

    Returns ``(pinv, eigenvalues, eigenvectors)``.  Eigenvalues below
    ``rcond * max`` are treated as exact zeros, which is what the warped-noise
    systems need: their null spaces are structural, not numerical.
    """
    if not np.isfinite(a).all():
        raise NumericalError("matrix contains non-finite entries")
    lam, q = np.linalg.eigh(a)
    top = lam.max()
    if top <= 0:
        raise NumericalError("matrix has no positive eigenvalue")
    inv = np.where(lam > rcond * top, 1.0 / np.where(lam > 0, lam, 1.0), 0.0)
    return (q * inv) @ q.T, lam, q


def _posterior(mu, cov, noise, t):
    """``(W, b)`` with ``E[V | V_t] = W V_t + b`` and ``V_t = V + t N``."""
    a = cov + t * t * noise
    pinv, lam, q = psd_pinv(a)
    w = cov @ pinv
    return w, mu - w @ mu, lam, q


class AnalyticDenoiser:
    """Exact ``E[V | V_t]`` for any ``t > 0``.

    For a single-motion model this is linear; for a motion mixture it is the
    responsibility-weighted average of the per-motion posterior means.
    """

    provenance = "analytic"

    def __init__(self, model: SyntheticVideoModel, beta):
        self.model = model
        self.beta = float(beta)
        self._cache = {}
        self._noise = [noise_cov(model, self.beta, m) for m in range(model.n_motions)]
        self._mean = [model.mean(m) for m in range(model.n_motions)]
        self._cov = [model.cov(m) for m in range(model.n_motions)]

    def component(self, t, motion=0):
        key = (float(t), motion)
        if key not in self._cache:
            if not t > 0:
                raise ValueError("t must be > 0")
            w, b, lam, q = _posterior(self._mean[motion], self._cov[motion], self._noise[motion], t)
            floor = np.maximum(lam, LIKELIHOOD_FLOOR * lam.max())
            prec = (q / floor) @ q.T
            self._cache[key] = (w, b, prec, float(np.log(floor).sum()))
        return self._cache[key]

    def matrices(self, t):
        if self.model.n_motions != 1:
            raise ValueError("a motion mixture has no single linear denoiser")
        w, b, _, _ = self.component(t)
        return w, b

    def responsibilities(self, x, t) -> np.ndarray:
        x = np.atleast_2d(x)
        ll = []
        for m in range(self.model.n_motions):
            _, _, prec, logdet = self.component(t, m)
            r = x - self._mean[m]
            ll.append(-0.5 * np.einsum("ij,jk,ik->i", r, prec, r) - 0.5 * logdet)
        ll = np.array(ll)
        ll -= ll.max(axis=0)
        w = np.exp(ll)
        return w / w.sum(axis=0)

    def __call__(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        if self.model.n_motions == 1:
            w, b = self.matrices(t)
            return x @ w.T + b
        x2 = np.atleast_2d(x)
        resp = self.responsibilities(x2, t)
        out = np.zeros_like(x2)
        for m in range(self.model.n_motions):
            w, b, _, _ = self.component(t, m)
            out += resp[m][:, None] * (x2 @ w.T + b)
        return out.reshape(x.shape)


@dataclass
class LinearDenoiser:
    """Family ``D(x, t) = W_t x + b_t`` on a grid of noise levels.

    Between grid levels ``W`` and ``b`` are interpolated linearly in ``log t``.
    """

    ts: np.ndarray
    W: np.ndarray        # (n_t, D, D)
    b: np.ndarray        # (n_t, D)
    provenance: str
    beta: float
    meta: dict = field(default_factory=dict)

    @property
    def noise_mode(self) -> str:
        if self.beta == 0.0:
            return "independent"
        return "warped" if self.beta == 1.0 else f"mixed({self.beta:g})"

    def at(self, t):
        ts = self.ts
        lo, hi = ts[0] * (1 - 1e-12), ts[-1] * (1 + 1e-12)
        if not lo <= t <= hi:
            raise ValueError(f"denoiser unavailable at t={t}: grid covers [{ts[0]}, {ts[-1]}]")
        if len(ts) == 1:
            return self.W[0], self.b[0]
        lt = np.log(ts)
        j = int(np.clip(np.searchsorted(lt, math.log(t)) - 1, 0, len(ts) - 2))
        f = (math.log(t) - lt[j]) / (lt[j + 1] - lt[j])
        f = min(max(f, 0.0), 1.0)
        return (self.W[j] + f * (self.W[j + 1] - self.W[j]),
                self.b[j] + f * (self.b[j + 1] - self.b[j]))

    def matrices(self, t):
        return self.at(t)

    def __call__(self, x, t):
        w, b = self.at(t)
        return np.asarray(x) @ w.T + b


def analytic_denoiser(model, noise_mode="warped", beta=None, t=1.0) -> LinearDenoiser:
    """One-level linear denoiser holding the exact posterior mean at ``t``."""
    bt = resolve_beta(noise_mode, beta)
    w, b = AnalyticDenoiser(model, bt).matrices(t)
    return LinearDenoiser(np.array([float(t)]), w[None], b[None], "analytic", bt)


@dataclass(frozen=True)
class TrainConfig:
    """Noise levels form a geometric grid over ``[t_min, t_max]``.

    ``ridge`` is relative: the penalty is ``ridge * trace(Cov X) / D``.
    """

    t_min: float = 0.02
    t_max: float = 80.0
    n_levels: int = 16
    n_samples: int = 100_000
    ridge: float = 1e-6
    seed: int = 0
    chunk: int = 10_000

    def __post_init__(self):
        if not 0 < self.t_min <= self.t_max:
            raise ValueError("need 0 < t_min <= t_max")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.n_levels < 1 or self.n_samples < 2:
            raise ValueError("need n_levels >= 1 and n_samples >= 2")

    def levels(self) -> np.ndarray:
        if self.n_levels == 1:
            return np.array([self.t_min])
        return np.geomspace(self.t_min, self.t_max, self.n_levels)


def _moments(model, beta, cfg, workers):
    """First and second moments of clean videos V and noises N.

    Videos are shifted by the model mean before accumulating so that the
    later covariance subtraction does not cancel catastrophically.
    """
    shift = model.marginal_moments()[0]

    def work(c, lo, hi):
        rng = chunk_rng(cfg.seed, c, stream=11)
        v, m = draw_videos(model, rng, hi - lo, None)
        z = sample_noise(model, beta, m, rng)
        v -= shift
        return v.sum(0), z.sum(0), v.T @ v, v.T @ z, z.T @ z

    parts = map_chunks(work, cfg.n_samples, cfg.chunk, workers)
    sv, sn, vv, vn, nn = (sum(p[i] for p in parts) for i in range(5))
    k = cfg.n_samples
    return shift, sv / k, sn / k, vv / k, vn / k, nn / k


def fit_linear_denoiser(model, config: TrainConfig = TrainConfig(), noise_mode="warped",
                        beta=None, workers=1) -> LinearDenoiser:
    """Ridge regression of V on ``V_t = V + t N`` at each grid level.

    The same (V, N) pairs serve every level, so only their moments are kept.
    """
    bt = resolve_beta(noise_mode, beta)
    shift, mv, mn, vv, vn, nn = _moments(model, bt, config, workers)
    D = model.dim
    ws, bs = [], []
    for t in config.levels():
        mx = mv + t * mn
        cxx = vv + t * (vn + vn.T) + t * t * nn - np.outer(mx, mx)
        cvx = vv + t * vn - np.outer(mv, mx)
        lam = config.ridge * np.trace(cxx) / D
        a = cxx + lam * np.eye(D)
        if lam == 0.0:
            ev = np.linalg.eigvalsh(a)
            if ev[0] <= 1e-12 * ev[-1]:
                raise NumericalError(f"rank-deficient regression at t={t:g} "
                                     f"(condition {ev[-1] / max(ev[0], 1e-300):.3g}); use ridge > 0")
        try:
            w = cho_solve(cho_factor(a), cvx.T).T
        except np.linalg.LinAlgError:
            raise NumericalError(f"regression system not positive definite at t={t:g}") from None
        ws.append(w)
        bs.append(shift + mv - w @ (shift + mx))
    return LinearDenoiser(config.levels(), np.array(ws), np.array(bs), "fitted", bt,
                          {"n_samples": config.n_samples, "ridge": config.ridge})


def operator_error(w, w_ref) -> float:
    """Spectral-norm relative error ``||w - w_ref|| / ||w_ref||``."""
    return float(np.linalg.norm(w - w_ref, 2) / np.linalg.norm(w_ref, 2))


def equivariance_error(denoiser, model, t, n_probes=256, seed=0, beta=None, motion=0) -> np.ndarray:
    """Per-frame mean of ``||D^k - T_k D^0|| / ||D^k||`` over noisy probes.

    Probes are ``V + t N`` with ``V`` from the model and ``N`` from the
    denoiser's noise mode (or ``beta``).  Frame 0 is zero by definition.
    """
    bt = denoiser.beta if beta is None else beta
    rng = chunk_rng(seed, 0, stream=12)
    v, _ = draw_videos(model, rng, n_probes, motion)
    x = v + t * sample_noise(model, bt, np.full(n_probes, motion), rng)
    out = model.frames(denoiser(x, t)).reshape(n_probes, model.n_frames, model.d)
    T = model.motions[motion].T
    ref = out[:, 0]
    err = np.zeros(model.n_frames)
    for k in range(1, model.n_frames):
        diff = np.linalg.norm(out[:, k] - ref @ T[k].T, axis=1)
        err[k] = np.mean(diff / np.linalg.norm(out[:, k], axis=1))
    return err
