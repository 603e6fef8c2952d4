"""Field-dependent PSF calibration from a circle-grid chart."""
from .errors import (CalibrationFailed, DegenerateKernel, DivergentRestoration, EmptyRoi,
                     InvalidInput, NoBimodalStructure, NoEdgeFound, NonFiniteLoss, PsfCalError,
                     SingularSystem)
from .metrics import kernel_psnr, kernel_ssim, mtf_from_psf, slanted_edge_sfr
from .optics_sim import AberrationSpec, NoiseSpec, PsfField
from .optim import OptimConfig, calibrate_field, calibrate_patch, grad_check

__version__ = "0.1.0"

__all__ = [
    "AberrationSpec", "CalibrationFailed", "DegenerateKernel", "DivergentRestoration", "EmptyRoi",
    "InvalidInput", "NoBimodalStructure", "NoEdgeFound", "NonFiniteLoss", "OptimConfig", "PsfCalError",
    "PsfField", "SingularSystem", "calibrate_field", "calibrate_patch", "grad_check", "kernel_psnr",
    "kernel_ssim", "mtf_from_psf", "slanted_edge_sfr",
]
