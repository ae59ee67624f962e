"""Exactly-warped Gaussian video model.

Frame 0 is ``V0 ~ N(mu0, Sigma0)`` over ``d = H*W`` pixels and frame k is
``T_k V0 + sigma_f * eps_k`` where ``T_k`` is a product of exact permutation
warps.  Videos are flat vectors of length ``(K+1)*d``, frame-major.

A model may carry several motions; a video then picks one uniformly at random
and its noise is warped with the same motion.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..flow import FlowField, make_synthetic_flow

__all__ = ["Motion", "SyntheticVideoModel", "make_synthetic_model", "sample_video",
           "sample_noise", "draw_videos", "noise_cov", "resolve_beta", "chunk_rng", "parse_warp"]


def resolve_beta(noise_mode, beta=None) -> float:
    """Map a noise mode to its mixing weight: independent 0, warped 1."""
    if noise_mode == "independent":
        return 0.0
    if noise_mode == "warped":
        return 1.0
    if noise_mode == "mixed":
        if beta is None or not 0.0 <= beta <= 1.0:
            raise ValueError("mixed noise needs beta in [0, 1]")
        return float(beta)
    raise ValueError(f"unknown noise mode {noise_mode!r}")


def chunk_rng(seed, chunk, stream=0):
    """Generator for one fixed-size chunk of a Monte-Carlo loop.

    Keying by chunk index keeps results independent of how chunks are
    distributed over workers.
    """
    return np.random.default_rng([int(seed), int(stream), int(chunk)])


def parse_warp(spec, width, height):
    """Return ``(permutation, flow)`` for an exact warp spec.

    ``"shift:dx,dy"`` is a cyclic integer shift, ``"rot90"`` a quarter turn
    about the image center (square frames only), ``"none"`` the identity.
    ``permutation[p]`` is the target pixel of source pixel ``p``.
    """
    ys, xs = np.mgrid[0:height, 0:width]
    if spec == "none":
        return np.arange(width * height), FlowField.zeros(width, height)
    if spec.startswith("shift:"):
        try:
            dx, dy = (float(v) for v in spec[6:].split(","))
        except ValueError:
            raise ValueError(f"bad shift spec {spec!r}") from None
        if dx != int(dx) or dy != int(dy):
            raise ValueError(f"non-exact warp {spec!r}: shifts must be integers")
        dx, dy = int(dx), int(dy)
        target = ((ys + dy) % height) * width + (xs + dx) % width
        return target.ravel(), make_synthetic_flow("translate", (dx, dy), width, height)
    if spec == "rot90":
        if width != height:
            raise ValueError("non-exact warp 'rot90': frames must be square")
        flow = make_synthetic_flow("rotate", math.pi / 2, width, height)
        tx = (xs + flow.u).astype(np.intp)
        ty = (ys + flow.v).astype(np.intp)
        return (ty * width + tx).ravel(), flow
    raise ValueError(f"non-exact warp {spec!r}: use 'shift:dx,dy', 'rot90' or 'none'")


@dataclass(frozen=True, eq=False)
class Motion:
    steps: tuple
    T: np.ndarray        # (K+1, d, d) cumulative warps, T[0] = I
    flows: tuple         # per-step FlowField realizing each warp

    @property
    def M(self) -> np.ndarray:
        return self.T.reshape(-1, self.T.shape[-1])


def _build_motion(steps, width, height):
    d = width * height
    T = [np.eye(d)]
    flows = []
    for spec in steps:
        perm, flow = parse_warp(spec, width, height)
        S = np.zeros((d, d))
        S[perm, np.arange(d)] = 1.0
        T.append(S @ T[-1])
        flows.append(flow)
    return Motion(tuple(steps), np.array(T), tuple(flows))


@dataclass(frozen=True, eq=False)
class SyntheticVideoModel:
    height: int
    width: int
    n_warps: int
    mu0: np.ndarray
    sigma0: np.ndarray
    motions: tuple
    sigma_f: float

    @property
    def d(self) -> int:
        return self.height * self.width

    @property
    def n_frames(self) -> int:
        return self.n_warps + 1

    @property
    def dim(self) -> int:
        return self.n_frames * self.d

    @property
    def n_motions(self) -> int:
        return len(self.motions)

    def frames(self, x) -> np.ndarray:
        """Reshape flat videos ``(..., dim)`` to ``(..., K+1, H, W)``."""
        x = np.asarray(x)
        return x.reshape(x.shape[:-1] + (self.n_frames, self.height, self.width))

    def mean(self, motion=0) -> np.ndarray:
        return self.motions[motion].M @ self.mu0

    def cov(self, motion=0) -> np.ndarray:
        M = self.motions[motion].M
        c = M @ self.sigma0 @ M.T
        idx = np.arange(self.d, self.dim)
        c[idx, idx] += self.sigma_f ** 2
        return c

    def marginal_moments(self):
        """Mean and covariance of the motion mixture."""
        means = [self.mean(m) for m in range(self.n_motions)]
        mu = np.mean(means, axis=0)
        cov = np.mean([self.cov(m) + np.outer(a - mu, a - mu)
                       for m, a in enumerate(means)], axis=0)
        return mu, cov


def _se_kernel(width, height, length_scale):
    ys, xs = np.mgrid[0:height, 0:width]
    p = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    d2 = ((p[:, None, :] - p[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2.0 * length_scale ** 2))


def make_synthetic_model(height=8, width=8, n_warps=4, cov_kind="smooth", sigma0=1.0,
                         length_scale=2.0, warps="shift:1,0", motions=None,
                         sigma_f=0.0, mean_scale=1.0, seed=0) -> SyntheticVideoModel:
    """Build a model.

    ``warps`` is one step spec (repeated ``n_warps`` times) or a list of
    ``n_warps`` specs.  ``motions``, when given, is a list of such values and
    turns the model into a uniform mixture over them.  The mean image is a
    smooth random field scaled by ``mean_scale``.
    """
    if n_warps < 0:
        raise ValueError("n_warps must be >= 0")
    if sigma_f < 0:
        raise ValueError("sigma_f must be >= 0")
    d = height * width
    kern = _se_kernel(width, height, length_scale) + 1e-8 * np.eye(d)
    if cov_kind == "isotropic":
        sig = sigma0 ** 2 * np.eye(d)
    elif cov_kind == "smooth":
        sig = sigma0 ** 2 * _se_kernel(width, height, length_scale) + 1e-8 * np.eye(d)
    else:
        raise ValueError(f"unknown covariance kind {cov_kind!r}")
    rng = np.random.default_rng(seed)
    mu0 = mean_scale * np.linalg.cholesky(kern) @ rng.standard_normal(d)

    specs = [warps] if motions is None else list(motions)
    built = []
    for spec in specs:
        steps = [spec] * n_warps if isinstance(spec, str) else list(spec)
        if len(steps) != n_warps:
            raise ValueError(f"expected {n_warps} warp steps, got {len(steps)}")
        built.append(_build_motion(steps, width, height))
    return SyntheticVideoModel(height, width, n_warps, mu0, sig, tuple(built), float(sigma_f))


def _apply_motions(model, motion_idx, frame0):
    out = np.empty((frame0.shape[0], model.dim))
    for m, mo in enumerate(model.motions):
        sel = motion_idx == m
        out[sel] = frame0[sel] @ mo.M.T
    return out


def draw_videos(model, rng, n, motion):
    m = rng.integers(0, model.n_motions, n) if motion is None else np.full(n, motion)
    L = np.linalg.cholesky(model.sigma0)
    v0 = model.mu0 + rng.standard_normal((n, model.d)) @ L.T
    v = _apply_motions(model, m, v0)
    if model.sigma_f > 0:
        v[:, model.d:] += model.sigma_f * rng.standard_normal((n, model.dim - model.d))
    return v, m


def sample_video(model: SyntheticVideoModel, seed, n, motion=None, return_motion=False):
    """Draw ``n`` flat videos; deterministic per seed."""
    v, m = draw_videos(model, np.random.default_rng([int(seed), 1]), n, motion)
    return (v, m) if return_motion else v


def sample_noise(model: SyntheticVideoModel, beta, motion_idx, rng) -> np.ndarray:
    """Motion-matched noise ``beta * M n0 + sqrt(1 - beta^2) * n_ind``."""
    motion_idx = np.asarray(motion_idx).reshape(-1)
    n = motion_idx.size
    base = rng.standard_normal((n, model.d))
    if model.n_warps == 0:
        return base  # a single frame has no lineage to mix: every mode is this draw
    out = beta * _apply_motions(model, motion_idx, base)
    if beta < 1.0:
        out += math.sqrt(1.0 - beta ** 2) * rng.standard_normal((n, model.dim))
    return out


def noise_cov(model_or_M, beta, motion=0) -> np.ndarray:
    """``beta^2 M M^T + (1 - beta^2) I``: block (j, k) is ``beta^2 T_j T_k^T``
    off the diagonal and ``I`` on it."""
    M = model_or_M.motions[motion].M if isinstance(model_or_M, SyntheticVideoModel) else model_or_M
    n = M.shape[0]
    return beta ** 2 * (M @ M.T) + (1.0 - beta ** 2) * np.eye(n)
