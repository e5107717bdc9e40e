"""Monaural speech dereverberation with a dilated-TCN masking autoencoder."""

from .autodiff import Tensor, backward, finite_difference_check, no_grad
from .model import DereverbModel, ModelConfig, count_parameters, receptive_field
from .acoustics import AudioClip, RIRSpec, generate_rir, reverberate, estimate_rt60
from .training import sisdr, sisdr_loss, delta_sisdr, fit, evaluate

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "finite_difference_check",
    "no_grad",
    "DereverbModel",
    "ModelConfig",
    "count_parameters",
    "receptive_field",
    "AudioClip",
    "RIRSpec",
    "generate_rir",
    "reverberate",
    "estimate_rt60",
    "sisdr",
    "sisdr_loss",
    "delta_sisdr",
    "fit",
    "evaluate",
    "__version__",
]
