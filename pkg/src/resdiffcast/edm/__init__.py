"""EDM-preconditioned residual denoising: coefficients, sampler, denoisers,
training and checkpoints."""

from .precond import (EdmCoeffs, SigmaSchedule, precondition_coeffs, sample_sigma,
                      sigma_from_noise, wrap_denoise)
from .sampling import heun_sample
from .denoisers import (Denoiser, LinearDenoiser, OracleDenoiser, ShrinkageDenoiser,
                        TinyConvDenoiser, ZeroDenoiser)
from .training import (Adam, ProbeBatch, fit, grad_check, loss_and_grads, probe_loss,
                       train_step)
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "EdmCoeffs", "SigmaSchedule", "precondition_coeffs", "sample_sigma",
    "sigma_from_noise", "wrap_denoise", "heun_sample", "Denoiser", "LinearDenoiser",
    "OracleDenoiser", "ShrinkageDenoiser", "TinyConvDenoiser", "ZeroDenoiser",
    "Adam", "ProbeBatch", "fit", "grad_check", "loss_and_grads", "probe_loss", "train_step",
    "load_checkpoint", "save_checkpoint",
]
