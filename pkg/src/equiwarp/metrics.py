"""PSNR, SSIM and cross-frame PSNR."""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .flow import FlowField, warp_frame

__all__ = ["PSNR_CAP", "MetricReport", "psnr", "ssim", "cf_psnr", "source_in_image"]

PSNR_CAP = 99.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    return a, b


def _psnr_from_mse(mse, peak):
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def psnr(a, b, peak=1.0) -> float:
    """Peak signal-to-noise ratio in dB, saturating at ``PSNR_CAP``."""
    if peak <= 0:
        raise ValueError("peak must be > 0")
    a, b = _pair(a, b)
    return _psnr_from_mse(float(np.mean((a - b) ** 2)), peak)


def ssim(a, b, window=7, k1=0.01, k2=0.03, peak=1.0) -> float:
    """Mean SSIM over all fully contained ``window x window`` uniform windows.

    Local statistics use population (biased) variances.
    """
    a, b = _pair(a, b)
    if window % 2 == 0 or window < 1:
        raise ValueError("window must be a positive odd integer")
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than window {window}")
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    filt = lambda z: uniform_filter(z, size=window, mode="constant")
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
         / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    r = window // 2
    return float(s[r:s.shape[0] - r, r:s.shape[1] - r].mean())


@dataclass
class MetricReport:
    values: np.ndarray
    masked_fraction: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def saturated(self) -> np.ndarray:
        return self.values >= PSNR_CAP

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame_index", "value", "masked_fraction"])
        for k, (v, m) in enumerate(zip(self.values, self.masked_fraction)):
            w.writerow([k, f"{v:.6f}", f"{m:.6f}"])
        return buf.getvalue()


def source_in_image(flow: FlowField) -> np.ndarray:
    """Pixels whose backward sample ``q - flow(q)`` needs no border clamping."""
    ys, xs = np.mgrid[0:flow.height, 0:flow.width]
    sx, sy = xs - flow.u, ys - flow.v
    eps = 1e-9
    return ((sx >= -eps) & (sx <= flow.width - 1 + eps)
            & (sy >= -eps) & (sy <= flow.height - 1 + eps))


def cf_psnr(video, flows, mask_policy="coverage", peak=1.0) -> MetricReport:
    """PSNR between frame k warped by ``flows[k]`` and frame k+1.

    ``mask_policy="coverage"`` drops pixels whose warp source lies off-image.
    """
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 3:
        raise ValueError("video must be (F, H, W)")
    if len(flows) != video.shape[0] - 1:
        raise ValueError(f"{len(flows)} flows for {video.shape[0]} frames")
    if mask_policy not in ("none", "coverage"):
        raise ValueError(f"unknown mask policy {mask_policy!r}")
    values, masked = [], []
    for k, flow in enumerate(flows):
        err = (warp_frame(video[k], flow) - video[k + 1]) ** 2
        if mask_policy == "coverage":
            keep = source_in_image(flow)
            if not keep.any():
                raise ValueError(f"pair {k}: every pixel is masked")
            err = err[keep]
            masked.append(1.0 - keep.mean())
        else:
            masked.append(0.0)
        values.append(_psnr_from_mse(float(err.mean()), peak))
    return MetricReport(np.array(values), np.array(masked))
