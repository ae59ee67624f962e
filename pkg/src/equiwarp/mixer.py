"""Variance-preserving blend of warped and per-frame independent noise."""

import math
from dataclasses import dataclass

import numpy as np

from .flow import FlowField, subpixel_centers, transport_points
from .noise_warp import DEFAULT_SUBDIV, NoiseVolume
from .rng import STREAM_MIX, counter_normal

__all__ = ["MixParams", "mix_noise", "lineage_pairs", "temporal_correlation", "DEFAULT_BETA"]

DEFAULT_BETA = 0.9


@dataclass(frozen=True)
class MixParams:
    beta: float = DEFAULT_BETA
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if int(self.seed) < 0:
            raise ValueError("seed must be non-negative")


def mix_noise(warped: NoiseVolume, params: MixParams) -> NoiseVolume:
    """``beta * warped + sqrt(1 - beta^2) * fresh`` with fresh noise drawn per frame.

    ``beta == 1`` returns an exact copy.  The recorded ``beta`` multiplies the
    input's, so it stays the lineage correlation coefficient.
    """
    meta = dict(warped.meta)
    meta["beta"] = float(meta.get("beta", 1.0)) * params.beta
    if params.beta == 1.0:
        return NoiseVolume(warped.frames.copy(), meta)
    f, h, w = warped.frames.shape
    fresh = counter_normal(int(params.seed), STREAM_MIX,
                           np.arange(f, dtype=np.uint64)[:, None],
                           np.arange(h * w, dtype=np.uint64)).reshape(f, h, w)
    meta["mix_seed"] = int(params.seed)
    out = params.beta * warped.frames + math.sqrt(1.0 - params.beta ** 2) * fresh
    return NoiseVolume(out, meta)


def lineage_pairs(flow: FlowField, subdiv=DEFAULT_SUBDIV):
    """Source/target flat pixel indices whose lineage is unbroken over one step.

    A pair qualifies when all ``subdiv**2`` particles of the source land in the
    same target and that target receives nothing else, so the target's noise
    is carried over unchanged.
    """
    s2 = subdiv * subdiv
    x, y, _ = subpixel_centers(flow.width, flow.height, subdiv)
    _, _, target = transport_points(flow, x, y)
    t = target.reshape(-1, s2)
    whole = (t == t[:, :1]).all(axis=1) & (t[:, 0] >= 0)
    kept = target[target >= 0]
    count = np.bincount(kept, minlength=flow.width * flow.height)
    src = np.flatnonzero(whole)
    dst = t[src, 0]
    ok = count[dst] == s2
    return src[ok], dst[ok]


def temporal_correlation(volume, flows, subdiv=None) -> np.ndarray:
    """Pearson correlation along unbroken lineage for each consecutive frame pair.

    ``volume`` may be one NoiseVolume or a sequence of volumes sharing the same
    flows, in which case samples are pooled across them.
    """
    vols = [volume] if isinstance(volume, NoiseVolume) else list(volume)
    if not vols:
        raise ValueError("no volumes given")
    if len(flows) != vols[0].n_frames - 1:
        raise ValueError(f"{len(flows)} flows for {vols[0].n_frames} frames")
    if subdiv is None:
        subdiv = int(vols[0].meta.get("subdiv", DEFAULT_SUBDIV))
    out = []
    for k, flow in enumerate(flows):
        src, dst = lineage_pairs(flow, subdiv)
        if src.size == 0:
            raise ValueError(f"no unbroken-lineage pixels between frames {k} and {k + 1}")
        a = np.concatenate([v.frames[k].reshape(-1)[src] for v in vols])
        b = np.concatenate([v.frames[k + 1].reshape(-1)[dst] for v in vols])
        if np.array_equal(a, b):
            out.append(1.0)
        else:
            out.append(float(np.corrcoef(a, b)[0, 1]))
    return np.array(out)
