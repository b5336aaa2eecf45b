"""Diffusion-prior restoration of 3D volumes.

A numpy/scipy implementation of annealed decoupled posterior sampling for
volumetric inverse problems: joint super-resolution and bias-field
correction, mask-constrained inpainting, and refinement of an existing
estimate, plus the supporting pieces (forward operators with exact
adjoints, an EDM-style denoiser prior with its trainer, a synthetic
degradation pipeline, image-quality metrics, and NIfTI-1 I/O).
"""

from .biasfield import (
    BiasBasis,
    BiasField,
    alpha_schedule,
    basis_build,
    bias_eval,
    bias_objective,
    bias_objective_grad,
    bias_update,
    monomial_exponents,
)
from .errors import DegenerateInputError, FormatError, NumericError, TrainingDivergedError
from .grid import (
    GridMap,
    Rng,
    Volume,
    make_volume,
    normalize_minmax,
    resample_trilinear,
)
from .linops import (
    FWHM_PER_SIGMA,
    LinearOperator,
    Mask,
    SliceProfile,
    downsample_dims,
    gaussian_kernel,
    op_align,
    op_blur,
    op_downsample,
    op_project,
    op_select,
)
from .metrics import MetricReport, gmsd_2p5d, mae, metric_report, psnr, ssim_2p5d
from .nifti import NiftiHeader, read_header, read_nifti, write_nifti
from .prior import (
    Denoiser,
    GmmPrior,
    NoiseSchedule,
    denoiser_score,
    edm_scalings,
    estimate_x0,
    gmm_logpdf,
    gmm_score,
    sample_prior,
    schedule_poly7,
)
from .solver import (
    InpaintingTask,
    RefinementTask,
    RestorationTask,
    SolveReport,
    SolverConfig,
    StepRecord,
    daps_solve,
    inpaint,
    langevin_x0,
    likelihood_grad,
    refine,
    restore,
)
from .synth import PHANTOM_KINDS, DegradeConfig, Phantom, degrade, fourier_lowpass, make_phantom
from .trainer import TrainConfig, TrainState, adam_step, clip_global_norm, edm_loss, edm_loss_and_grad, train

__version__ = "0.1.0"

__all__ = [
    "BiasBasis",
    "BiasField",
    "DegenerateInputError",
    "DegradeConfig",
    "Denoiser",
    "FWHM_PER_SIGMA",
    "FormatError",
    "GmmPrior",
    "GridMap",
    "InpaintingTask",
    "LinearOperator",
    "Mask",
    "MetricReport",
    "NiftiHeader",
    "NoiseSchedule",
    "NumericError",
    "PHANTOM_KINDS",
    "Phantom",
    "RefinementTask",
    "RestorationTask",
    "Rng",
    "SliceProfile",
    "SolveReport",
    "SolverConfig",
    "StepRecord",
    "TrainConfig",
    "TrainState",
    "TrainingDivergedError",
    "Volume",
    "adam_step",
    "alpha_schedule",
    "basis_build",
    "bias_eval",
    "bias_objective",
    "bias_objective_grad",
    "bias_update",
    "clip_global_norm",
    "daps_solve",
    "degrade",
    "denoiser_score",
    "downsample_dims",
    "edm_loss",
    "edm_loss_and_grad",
    "edm_scalings",
    "estimate_x0",
    "fourier_lowpass",
    "gaussian_kernel",
    "gmm_logpdf",
    "gmm_score",
    "gmsd_2p5d",
    "inpaint",
    "langevin_x0",
    "likelihood_grad",
    "mae",
    "make_phantom",
    "make_volume",
    "metric_report",
    "monomial_exponents",
    "normalize_minmax",
    "op_align",
    "op_blur",
    "op_downsample",
    "op_project",
    "op_select",
    "psnr",
    "read_header",
    "read_nifti",
    "refine",
    "resample_trilinear",
    "restore",
    "sample_prior",
    "schedule_poly7",
    "ssim_2p5d",
    "train",
    "write_nifti",
]
