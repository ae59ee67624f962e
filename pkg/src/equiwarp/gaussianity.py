"""Statistical checks that noise frames are i.i.d. N(0, 1) per pixel.

Statistics are taken across seeds: a *sampler* maps an array of seeds to a
batch of volumes ``(B, F, H, W)`` generated with fixed flows, so every pixel
of every frame has ``n_seeds`` independent realizations.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .parallel import map_chunks
from .noise_warp import DEFAULT_SUBDIV, independent_frames, warped_frames
from .rng import STREAM_CALIBRATION, counter_normal

__all__ = ["StatsReport", "ks_statistic", "ks_critical_value", "gaussianity_report",
           "warped_sampler", "independent_sampler", "POOLED_VARIANCE_BAND"]

POOLED_VARIANCE_BAND = (0.97, 1.03)
_CALIBRATION_REPS = 2000


def ks_statistic(samples) -> np.ndarray:
    """One-sample KS statistic against N(0, 1) along the last axis."""
    x = np.sort(np.asarray(samples, dtype=np.float64), axis=-1)
    n = x.shape[-1]
    cdf = ndtr(x)
    i = np.arange(1, n + 1)
    d_plus = (i / n - cdf).max(axis=-1)
    d_minus = (cdf - (i - 1) / n).max(axis=-1)
    return np.maximum(d_plus, d_minus)


_critical_cache = {}


def ks_critical_value(n, alpha, reps=_CALIBRATION_REPS, seed=0) -> float:
    """Monte-Carlo ``1 - alpha`` quantile of the KS statistic for ``n`` draws."""
    key = (int(n), float(alpha), int(reps), int(seed))
    if key not in _critical_cache:
        ds = []
        chunk = max(1, min(reps, 2 ** 22 // max(n, 1)))
        for start in range(0, reps, chunk):
            r = np.arange(start, min(start + chunk, reps), dtype=np.uint64)
            z = counter_normal(seed, STREAM_CALIBRATION, r[:, None], np.arange(n, dtype=np.uint64))
            ds.append(ks_statistic(z))
        _critical_cache[key] = float(np.quantile(np.concatenate(ds), 1.0 - alpha))
    return _critical_cache[key]


@dataclass
class StatsReport:
    n_seeds: int
    alpha: float
    ks_critical: float
    mean_z: np.ndarray            # standardized grand mean per frame
    pooled_variance: np.ndarray   # average per-pixel variance per frame
    mean_outlier_frac: np.ndarray  # pixels whose mean falls outside the alpha band
    var_outlier_frac: np.ndarray   # pixels whose variance falls outside the chi2 band
    ks_pass_frac: np.ndarray      # fraction of seeds with KS below critical value
    spatial_corr: np.ndarray      # mean |corr| over fixed neighbour pairs
    outlier_limit: float
    corr_limit: float
    mean_limit: float

    @property
    def n_frames(self) -> int:
        return self.pooled_variance.size

    def frame_checks(self) -> dict:
        lo, hi = POOLED_VARIANCE_BAND
        return {
            "mean": np.abs(self.mean_z) <= self.mean_limit,
            "mean_pixels": self.mean_outlier_frac <= self.outlier_limit,
            "variance": (self.pooled_variance >= lo) & (self.pooled_variance <= hi),
            "variance_pixels": self.var_outlier_frac <= self.outlier_limit,
            "ks": self.ks_pass_frac >= 1.0 - 2.0 * self.alpha,
            "spatial_corr": self.spatial_corr <= self.corr_limit,
        }

    def frame_ok(self) -> np.ndarray:
        return np.logical_and.reduce(list(self.frame_checks().values()))

    def failures(self) -> list:
        return [(name, int(k)) for name, ok in self.frame_checks().items()
                for k in np.flatnonzero(~ok)]

    @property
    def passed(self) -> bool:
        return bool(self.frame_ok().all())

    @property
    def overall_ks_pass_frac(self) -> float:
        return float(self.ks_pass_frac.mean())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "mean_z", "pooled_variance", "mean_outlier_frac",
                    "var_outlier_frac", "ks_pass_frac", "spatial_corr", "ok"])
        ok = self.frame_ok()
        for k in range(self.n_frames):
            w.writerow([k, f"{self.mean_z[k]:.6f}", f"{self.pooled_variance[k]:.6f}",
                        f"{self.mean_outlier_frac[k]:.6f}", f"{self.var_outlier_frac[k]:.6f}",
                        f"{self.ks_pass_frac[k]:.6f}", f"{self.spatial_corr[k]:.6f}", int(ok[k])])
        return buf.getvalue()


def warped_sampler(flows, width, height, subdiv=DEFAULT_SUBDIV, rescale=True):
    def sample(seeds):
        return warped_frames(flows, width, height, subdiv, seeds, rescale=rescale)
    return sample


def independent_sampler(n_frames, width, height):
    def sample(seeds):
        return independent_frames(n_frames, width, height, seeds)
    return sample


def _neighbour_pairs(h, w, max_pairs=64):
    pairs = []
    step = max(1, int(math.sqrt(h * w / max_pairs)))
    for y in range(0, h, step):
        for x in range(0, w, step):
            if x + 1 < w:
                pairs.append((y * w + x, y * w + x + 1))
            if y + 1 < h:
                pairs.append((y * w + x, (y + 1) * w + x))
    return np.array(pairs[:max_pairs], dtype=np.intp).reshape(-1, 2)


def gaussianity_report(sampler, n_seeds=1000, alpha=0.01, base_seed=0, batch=50,
                       workers=1) -> StatsReport:
    """Test per-frame marginal N(0, 1) over ``n_seeds`` sampled volumes.

    Per frame: grand mean, average per-pixel variance (must lie in
    ``POOLED_VARIANCE_BAND``), fraction of pixels whose mean or variance falls
    outside its two-sided ``alpha`` band (must not exceed ``alpha`` by more
    than three binomial standard deviations), pooled-pixel KS statistic per
    seed against a Monte-Carlo critical value (at least ``1 - 2 alpha`` of
    seeds must pass), and mean absolute correlation between fixed neighbour
    pixel pairs.
    """
    if n_seeds < 2:
        raise ValueError("need at least two seeds")
    seeds = np.arange(base_seed, base_seed + n_seeds, dtype=np.int64)
    probe = np.asarray(sampler(seeds[:1]), dtype=np.float64)
    _, f, h, w = probe.shape
    pairs = _neighbour_pairs(h, w)
    crit = ks_critical_value(h * w, alpha)

    def work(_, lo, hi):
        fr = np.asarray(sampler(seeds[lo:hi]), dtype=np.float64)
        flat = fr.reshape(hi - lo, f, h * w)
        cross = (flat[:, :, pairs[:, 0]] * flat[:, :, pairs[:, 1]]).sum(axis=0)
        return (flat.sum(axis=0), (flat ** 2).sum(axis=0),
                (ks_statistic(flat) < crit).sum(axis=0), cross)

    parts = map_chunks(work, n_seeds, batch, workers)
    s1, s2, ks_pass, cross = (sum(p[i] for p in parts) for i in range(4))
    n = n_seeds
    npix = s1.shape[1]
    mean = s1 / n
    var = (s2 - n * mean ** 2) / (n - 1)

    z_a = stats.norm.ppf(1.0 - alpha / 2.0)
    mean_z = mean.sum(axis=1) / npix * math.sqrt(n * npix)
    mean_out = (np.abs(mean) * math.sqrt(n) > z_a).mean(axis=1)
    lo_q = stats.chi2.ppf(alpha / 2.0, n - 1) / (n - 1)
    hi_q = stats.chi2.ppf(1.0 - alpha / 2.0, n - 1) / (n - 1)
    var_out = ((var < lo_q) | (var > hi_q)).mean(axis=1)
    outlier_limit = alpha + 3.0 * math.sqrt(alpha * (1.0 - alpha) / npix)

    if len(pairs):
        sd = np.sqrt(var)
        cov = cross / n - mean[:, pairs[:, 0]] * mean[:, pairs[:, 1]]
        corr = cov * n / (n - 1) / (sd[:, pairs[:, 0]] * sd[:, pairs[:, 1]])
        spatial = np.abs(corr).mean(axis=1)
        m = len(pairs)
    else:
        spatial = np.zeros(s1.shape[0])
        m = 1
    z1 = stats.norm.ppf(1.0 - alpha)
    corr_limit = (math.sqrt(2.0 / math.pi) + z1 * math.sqrt((1.0 - 2.0 / math.pi) / m)) / math.sqrt(n)

    return StatsReport(n, alpha, crit, mean_z, var.mean(axis=1), mean_out, var_out,
                       ks_pass / n, spatial, outlier_limit, corr_limit, z_a)
