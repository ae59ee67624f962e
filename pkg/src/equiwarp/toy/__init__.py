"""Exactly-warped Gaussian video world with closed-form denoisers."""

from .denoise import (AnalyticDenoiser, LinearDenoiser, NumericalError, TrainConfig,
                      analytic_denoiser, equivariance_error, fit_linear_denoiser,
                      operator_error)
from .dmd import DMDConfig, LinearGenerator, dmd_distill
from .model import (SyntheticVideoModel, make_synthetic_model, noise_cov, resolve_beta,
                    sample_noise, sample_video)
from .sampling import (TrajectoryRecord, beta_sweep, frechet_distance, noise_video_distance,
                       pf_ode_sample, sampler_error_vs_steps, sigma_schedule,
                       trajectory_straightness)
