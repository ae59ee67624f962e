"""Integral noise warping.

Each pixel's unit Gaussian is represented by ``s*s`` sub-pixel particles with
values i.i.d. N(0, 1/s^2).  Advection moves particle centers along the flow
and re-bins them; a pixel's noise value is the sum of its particles rescaled
by ``sqrt(s^2 / n_p)``.  Bins are disjoint, so every frame is exactly
N(0, I), while particles carried from frame to frame make consecutive frames
consistent along the flow.

Particle geometry never depends on the seed, only on the flows.  The
functions here therefore accept a batch of seeds and carry particle values of
shape ``(B, P)`` through a single transport computation.
"""

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .flow import FlowField, subpixel_centers, transport_points
from .rng import STREAM_INDEPENDENT, STREAM_WARP, counter_normal

__all__ = [
    "ParticleGrid", "NoiseVolume", "EmptyPixelError", "DEFAULT_SUBDIV",
    "init_particles", "advect_particles", "aggregate",
    "generate_warped_sequence", "warped_frames", "independent_frames",
    "temporal_subsample", "flow_lineage_id",
]

DEFAULT_SUBDIV = 4


class EmptyPixelError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ParticleGrid:
    """Particles sorted by pixel index.

    ``values`` has shape ``(P,)`` for one seed or ``(B, P)`` for a batch; all
    other per-particle arrays have shape ``(P,)``.  ``weight`` is carried for
    mass-weighted variants and is always 1 here.
    """

    width: int
    height: int
    subdiv: int
    seed: object
    frame: int
    x: np.ndarray
    y: np.ndarray
    pixel: np.ndarray
    values: np.ndarray
    weight: np.ndarray

    @property
    def n_particles(self) -> int:
        return self.pixel.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.pixel, minlength=self.width * self.height)

    def particles_at(self, px, py, batch=None):
        """Values of the particles binned at pixel ``(px, py)``."""
        p = py * self.width + px
        lo, hi = np.searchsorted(self.pixel, [p, p + 1])
        vals = self.values if batch is None else self.values[batch]
        return vals[..., lo:hi]


@dataclass(eq=False)
class NoiseVolume:
    """``frames`` has shape (F, H, W); ``meta`` records provenance."""

    frames: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (F, H, W), got shape {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def flat(self) -> np.ndarray:
        return self.frames.reshape(-1)


def _seed_array(seed):
    s = np.asarray(seed)
    if s.dtype.kind not in "iu":
        raise TypeError("seed must be an integer or an integer array")
    return s


def _fresh_values(seed, frame, pixel_slots, subdiv):
    """Fresh N(0, 1/s^2) values keyed by (seed, frame, pixel * s^2 + j)."""
    seeds = _seed_array(seed)
    counters = pixel_slots
    if seeds.ndim == 1:
        seeds = seeds[:, None]
    return counter_normal(seeds, STREAM_WARP, frame, counters) / subdiv


def init_particles(width, height, subdiv=DEFAULT_SUBDIV, seed=0) -> ParticleGrid:
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be >= 1")
    s = int(subdiv)
    if s < 1:
        raise ValueError("subdiv must be >= 1")
    x, y, pixel = subpixel_centers(width, height, s)
    slots = np.arange(pixel.size, dtype=np.uint64)
    values = _fresh_values(seed, 0, slots, s)
    if np.ndim(seed) == 0:
        values = values.reshape(-1)
    return ParticleGrid(width, height, s, seed, 0, x, y, pixel, values, np.ones(pixel.size))


def advect_particles(grid: ParticleGrid, flow: FlowField, seed=None, frame_index=None) -> ParticleGrid:
    """Move particles along ``flow``, drop off-image ones, refill holes.

    Holes (target pixels receiving no particle) get ``s*s`` fresh particles at
    their sub-pixel centers, drawn from the stream keyed by
    ``(seed, frame_index, pixel, particle)``.  Within a pixel, carried
    particles keep their previous relative order.
    """
    if flow.shape != (grid.height, grid.width):
        raise ValueError(f"dimension mismatch: grid {(grid.height, grid.width)} vs flow {flow.shape}")
    seed = grid.seed if seed is None else seed
    frame_index = grid.frame + 1 if frame_index is None else int(frame_index)
    s = grid.subdiv
    nx, ny, target = transport_points(flow, grid.x, grid.y)
    keep = np.flatnonzero(target >= 0)
    order = keep[np.argsort(target[keep], kind="stable")]
    kept_pixel = target[order]

    npix = grid.width * grid.height
    holes = np.flatnonzero(np.bincount(kept_pixel, minlength=npix) == 0)
    hx, hy, hpix = subpixel_centers(grid.width, grid.height, s)
    fresh_idx = (holes[:, None] * s * s + np.arange(s * s)).ravel()
    fresh_pixel = hpix[fresh_idx]
    fresh_vals = _fresh_values(seed, frame_index, fresh_idx.astype(np.uint64), s)
    if np.ndim(seed) == 0:
        fresh_vals = fresh_vals.reshape(-1)

    pixel = np.concatenate([kept_pixel, fresh_pixel])
    merge = np.argsort(pixel, kind="stable")
    x = np.concatenate([nx[order], hx[fresh_idx]])[merge]
    y = np.concatenate([ny[order], hy[fresh_idx]])[merge]
    values = np.concatenate([grid.values[..., order], fresh_vals], axis=-1)[..., merge]
    weight = np.concatenate([grid.weight[order], np.ones(fresh_idx.size)])[merge]
    return ParticleGrid(grid.width, grid.height, s, seed, frame_index,
                        x, y, pixel[merge], values, weight)


def aggregate(grid: ParticleGrid, rescale=True) -> np.ndarray:
    """Noise image(s): per-pixel particle sum times ``sqrt(s^2 / n_p)``.

    Returns shape (H, W), or (B, H, W) for batched values.  ``rescale=False``
    skips the variance correction and exists only for diagnostics.
    """
    counts = grid.counts()
    if (counts == 0).any():
        raise EmptyPixelError(f"{int((counts == 0).sum())} pixels hold no particles")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    sums = np.add.reduceat(grid.values, starts, axis=-1)
    if rescale:
        sums = sums * (grid.subdiv / np.sqrt(counts))
    return sums.reshape(grid.values.shape[:-1] + (grid.height, grid.width))


def flow_lineage_id(flows) -> str:
    h = hashlib.sha1()
    for f in flows:
        h.update(np.asarray(f.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(f.u, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(f.v, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def _check_flows(flows, width, height):
    for f in flows:
        if f.shape != (height, width):
            raise ValueError(f"flow shape {f.shape} does not match {(height, width)}")


def warped_frames(flows, width, height, subdiv=DEFAULT_SUBDIV, seeds=0, rescale=True) -> np.ndarray:
    """Warped noise frames for one seed (F, H, W) or a batch (B, F, H, W)."""
    _check_flows(flows, width, height)
    grid = init_particles(width, height, subdiv, seeds)
    frames = [aggregate(grid, rescale)]
    for k, f in enumerate(flows):
        grid = advect_particles(grid, f, seeds, k + 1)
        frames.append(aggregate(grid, rescale))
    return np.stack(frames, axis=-3)


def independent_frames(n_frames, width, height, seeds=0) -> np.ndarray:
    """Temporally independent unit noise through the same particle engine."""
    flat = np.arange(width * height, dtype=np.uint64)
    seeds_arr = _seed_array(seeds)
    out = [counter_normal(seeds_arr[..., None] if seeds_arr.ndim else seeds_arr,
                          STREAM_INDEPENDENT, k, flat) for k in range(n_frames)]
    return np.stack(out, axis=-2).reshape(seeds_arr.shape + (n_frames, height, width))


def generate_warped_sequence(flows, width, height, subdiv=DEFAULT_SUBDIV, seed=0) -> NoiseVolume:
    frames = warped_frames(flows, width, height, subdiv, seed)
    meta = {"seed": int(seed), "subdiv": int(subdiv), "beta": 1.0,
            "lineage": flow_lineage_id(flows), "stride": 1}
    return NoiseVolume(frames, meta)


def temporal_subsample(volume: NoiseVolume, k: int) -> NoiseVolume:
    """Keep frame 0 and every k-th frame after it."""
    if k < 1:
        raise ValueError("subsampling factor must be >= 1")
    meta = dict(volume.meta)
    meta["stride"] = int(meta.get("stride", 1)) * int(k)
    return replace(volume, frames=volume.frames[::k].copy(), meta=meta)
