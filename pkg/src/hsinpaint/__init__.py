"""Hyperspectral inpainting: ADMM with a patch sparse-coding prior and a
low-rank (singular value thresholding) or untrained-network prior."""

from .core import (HsiCube, HsiError, MaskCube, PatchScheme, PatchSet,
                   apply_mask, compute_coverage, dematricize, devectorize,
                   extract_patches, matricize, scatter_patches, vectorize)
from .degrade import DegradeSpec, SynthSpec, degrade, synth_cube
from .dictionary import Dictionary, analytic_dictionary, learn_ksvd
from .dip import Adam, DipNet, WmvStopper, dip_step, dip_update, forward
from .lowrank import SvtConfig, nuclear_norm, svt
from .metrics import QualityReport, mpsnr, mssim, quality_report
from .solver import (SolverConfig, SolverState, config_for_algo, init_state,
                     multiplier_update, objective, solve, solve_lrs_pnp,
                     solve_lrs_pnp_dip, x_update)
from .sparse import (NonLocalMeans, SoftThreshold, coding_objective, grad_f,
                     nlm_denoise, pnp_ista_solve, soft_threshold)

__all__ = [
    "HsiCube", "HsiError", "MaskCube", "PatchScheme", "PatchSet",
    "apply_mask", "compute_coverage", "dematricize", "devectorize",
    "extract_patches", "matricize", "scatter_patches", "vectorize",
    "DegradeSpec", "SynthSpec", "degrade", "synth_cube",
    "Dictionary", "analytic_dictionary", "learn_ksvd",
    "Adam", "DipNet", "WmvStopper", "dip_step", "dip_update", "forward",
    "SvtConfig", "nuclear_norm", "svt",
    "QualityReport", "mpsnr", "mssim", "quality_report",
    "SolverConfig", "SolverState", "config_for_algo", "init_state",
    "multiplier_update", "objective", "solve", "solve_lrs_pnp",
    "solve_lrs_pnp_dip", "x_update",
    "NonLocalMeans", "SoftThreshold", "coding_objective", "grad_f",
    "nlm_denoise", "pnp_ista_solve", "soft_threshold",
]

__version__ = "0.1.0"
