"""Probability-flow ODE sampling and the few-step diagnostics built on it."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import sqrtm

from ..metrics import cf_psnr
from ..noise_warp import NoiseVolume
from ..parallel import map_chunks
from .denoise import AnalyticDenoiser
from .model import SyntheticVideoModel, chunk_rng, noise_cov, sample_noise, sample_video

__all__ = ["SIGMA_MAX", "SIGMA_MIN", "TrajectoryRecord", "sigma_schedule", "pf_ode_sample",
           "trajectory_straightness", "generate", "noise_video_distance", "frechet_distance",
           "sampler_error_vs_steps", "beta_sweep", "composite_scores",
           "linear_sampler_map", "gaussian_frechet"]

SIGMA_MAX = 80.0
SIGMA_MIN = 0.02
_CHUNK = 50


def sigma_schedule(n_steps, sigma_max=SIGMA_MAX, sigma_min=SIGMA_MIN) -> np.ndarray:
    """Log-spaced levels from ``sigma_max`` to ``sigma_min`` plus a final 0."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not 0 < sigma_min <= sigma_max:
        raise ValueError("need 0 < sigma_min <= sigma_max")
    if n_steps == 1:
        return np.array([sigma_max, 0.0])
    s = sigma_max * (sigma_min / sigma_max) ** (np.arange(n_steps) / (n_steps - 1))
    return np.append(s, 0.0)


@dataclass
class TrajectoryRecord:
    """States ``(n_levels, n, D)`` visited at ``sigmas`` (strictly decreasing, ending at 0)."""

    sigmas: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.sigmas) != len(self.states):
            raise ValueError("one state per noise level required")
        if np.any(np.diff(self.sigmas) >= 0) or self.sigmas[-1] != 0:
            raise ValueError("sigmas must strictly decrease to 0")


def pf_ode_sample(denoiser, noise, n_steps, sigma_max=SIGMA_MAX, sigma_min=SIGMA_MIN, record=True):
    """Euler integration of ``dx/dsigma = (x - D(x, sigma)) / sigma`` from ``sigma_max * noise``.

    ``noise`` is ``(D,)``, ``(n, D)`` or a NoiseVolume (flattened).  Returns
    the terminal state(s) and, if ``record``, the TrajectoryRecord.
    """
    if isinstance(noise, NoiseVolume):
        noise = noise.flat()
    noise = np.asarray(noise, dtype=np.float64)
    sig = sigma_schedule(n_steps, sigma_max, sigma_min)
    x = sig[0] * noise
    states = [x]
    for i in range(n_steps):
        d = denoiser(x, sig[i])
        x = x + (sig[i + 1] - sig[i]) / sig[i] * (x - d)
        if record:
            states.append(x)
    if not np.isfinite(x).all():
        raise FloatingPointError("PF-ODE produced non-finite states")
    traj = None
    if record:
        st = np.array(states)
        if st.ndim == 2:
            st = st[:, None, :]
        traj = TrajectoryRecord(sig, st, {"n_steps": n_steps, "sigma_max": sigma_max,
                                          "sigma_min": sigma_min})
    return x, traj


def trajectory_straightness(traj: TrajectoryRecord):
    """Chord over path length per trajectory; 1 is perfectly straight."""
    st = traj.states
    if st.shape[0] < 2:
        raise ValueError("need at least two states")
    chord = np.linalg.norm(st[-1] - st[0], axis=-1)
    length = np.linalg.norm(np.diff(st, axis=0), axis=-1).sum(axis=0)
    if np.any(length == 0):
        raise ValueError("zero path length")
    s = chord / length
    return float(s[0]) if s.size == 1 else s


def generate(model: SyntheticVideoModel, beta, n, seed, steps, denoiser=None,
             sigma_max=SIGMA_MAX, sigma_min=SIGMA_MIN, workers=1):
    """Sample motion-matched noise and solve the PF-ODE for every step count.

    The same noise feeds each entry of ``steps``.  Returns
    ``(noise, motions, {n_steps: (terminal, straightness)})``.
    """
    den = AnalyticDenoiser(model, beta) if denoiser is None else denoiser
    if isinstance(den, AnalyticDenoiser):
        # warm the cache serially so threads only read it
        for ns in steps:
            for s in sigma_schedule(ns, sigma_max, sigma_min)[:-1]:
                for m in range(model.n_motions):
                    den.component(s, m)

    def work(c, lo, hi):
        rng = chunk_rng(seed, c, stream=21)
        m = rng.integers(0, model.n_motions, hi - lo)
        z = sample_noise(model, beta, m, rng)
        res = {}
        for ns in steps:
            x, tr = pf_ode_sample(den, z, ns, sigma_max, sigma_min)
            res[ns] = (x, np.atleast_1d(trajectory_straightness(tr)))
        return z, m, res

    parts = map_chunks(work, n, _CHUNK, workers)
    z = np.concatenate([p[0] for p in parts])
    m = np.concatenate([p[1] for p in parts])
    out = {ns: (np.concatenate([p[2][ns][0] for p in parts]),
                np.concatenate([p[2][ns][1] for p in parts])) for ns in steps}
    return z, m, out


def noise_video_distance(model, beta, n_samples=200, seed=0, n_steps=32, workers=1) -> float:
    """``E||N - V||^2 / ((K+1) d)`` where V is the PF-ODE video generated from N."""
    z, _, out = generate(model, beta, n_samples, seed, [n_steps], workers=workers)
    v = out[n_steps][0]
    return float(np.mean(np.sum((z - v) ** 2, axis=1)) / model.dim)


def frechet_distance(samples, mean, cov) -> float:
    """Fréchet distance between the sample Gaussian fit and ``N(mean, cov)``."""
    return gaussian_frechet(samples.mean(axis=0), np.cov(samples, rowvar=False), mean, cov)


def _mean_cf_psnr(model, videos, motions, peak):
    frames = model.frames(videos)
    vals = [cf_psnr(frames[i], model.motions[m].flows, "coverage", peak).mean
            for i, m in enumerate(motions)]
    return float(np.mean(vals)) if vals else float("nan")


def sampler_error_vs_steps(model, betas, steps, n_seeds=100, seed=0, ref_steps=256,
                           sigma_max=SIGMA_MAX, sigma_min=SIGMA_MIN, peak=1.0, workers=1):
    """Per (beta, n_steps): mean terminal L2 error to the ``ref_steps`` solve from
    the same noise, mean straightness and mean cf-PSNR of the generated videos."""
    rows = []
    for beta in betas:
        want = sorted(set(steps) | {ref_steps})
        _, m, out = generate(model, beta, n_seeds, seed, want, None, sigma_max, sigma_min, workers)
        ref = out[ref_steps][0]
        for ns in steps:
            x, st = out[ns]
            rows.append({"beta": float(beta), "n_steps": int(ns),
                         "error": float(np.mean(np.linalg.norm(x - ref, axis=1))),
                         "straightness": float(np.mean(st)),
                         "cf_psnr": _mean_cf_psnr(model, x, m, peak)})
    return rows


def linear_sampler_map(denoiser, n_steps, dim, sigma_max=SIGMA_MAX, sigma_min=SIGMA_MIN):
    """``(L, c)`` with terminal state ``L @ noise + c`` for a linear denoiser."""
    sig = sigma_schedule(n_steps, sigma_max, sigma_min)
    eye = np.eye(dim)
    L = sig[0] * eye
    c = np.zeros(dim)
    for i in range(n_steps):
        w, b = denoiser.matrices(sig[i])
        h = (sig[i + 1] - sig[i]) / sig[i]
        r = (1.0 + h) * eye - h * w
        L = r @ L
        c = r @ c - h * b
    return L, c


def gaussian_frechet(mean_a, cov_a, mean_b, cov_b) -> float:
    root = sqrtm(cov_a @ cov_b).real
    return float(np.sum((mean_a - mean_b) ** 2) + np.trace(cov_a + cov_b - 2.0 * root))


def composite_scores(values, higher_is_better):
    """Min-max normalise across a sweep so the best entry scores 1, the worst 0."""
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min()
    if span == 0:
        return np.ones_like(v)
    s = (v - v.min()) / span
    return s if higher_is_better else 1.0 - s


def beta_sweep(model, betas, n_steps=32, n_samples=500, seed=0, peak=1.0,
               sigma_max=SIGMA_MAX, sigma_min=SIGMA_MIN, workers=1):
    """Sample quality against temporal consistency as beta varies.

    Quality is the Fréchet distance between the generated distribution and
    the model's true moments, exact for single-motion models (the sampler is
    then linear) and estimated from samples otherwise.  Consistency is the
    gap between the mean cf-PSNR of generated videos and that of videos drawn
    from the model itself, so frozen over-consistent output is penalised as
    well as flicker.  The composite averages both min-max scores.
    """
    mu, cov = model.marginal_moments()
    data, dm = sample_video(model, seed, n_samples, return_motion=True)
    cf_ref = _mean_cf_psnr(model, data, dm, peak)
    rows = []
    for beta in betas:
        den = AnalyticDenoiser(model, beta)
        _, m, out = generate(model, beta, n_samples, seed, [n_steps], den, sigma_max, sigma_min, workers)
        x = out[n_steps][0]
        if model.n_motions == 1:
            L, c = linear_sampler_map(den, n_steps, model.dim, sigma_max, sigma_min)
            fd = gaussian_frechet(c, L @ noise_cov(model, beta) @ L.T, mu, cov)
        else:
            fd = frechet_distance(x, mu, cov)
        cf = _mean_cf_psnr(model, x, m, peak)
        rows.append({"beta": float(beta), "frechet": fd, "cf_psnr": cf,
                     "cf_psnr_data": cf_ref, "cf_gap": abs(cf - cf_ref)})
    q = composite_scores([r["frechet"] for r in rows], higher_is_better=False)
    c = composite_scores([r["cf_gap"] for r in rows], higher_is_better=False)
    for r, a, b in zip(rows, q, c):
        r["composite"] = float((a + b) / 2.0)
    return rows
