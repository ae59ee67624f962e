"""Flow-warped Gaussian noise for video diffusion, with a closed-form toy world
for checking denoiser equivariance, few-step sampling and distillation."""

__version__ = "0.1.0"

from .flow import (CoverageMap, FloFormatError, FlowField, compose_flow, coverage_map,
                   make_synthetic_flow, read_flo, warp_frame, write_flo)
from .gaussianity import StatsReport, gaussianity_report
from .metrics import MetricReport, cf_psnr, psnr, ssim
from .mixer import MixParams, mix_noise, temporal_correlation
from .noise_warp import (NoiseVolume, ParticleGrid, advect_particles, aggregate,
                         generate_warped_sequence, init_particles, temporal_subsample)
