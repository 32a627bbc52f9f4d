from .conditioning import ConditionEmbedding, ConditionEncoder, condition_batch, sinusoidal_encoding
from .network import Denoiser
from .sampling import ddim_sample, ddim_timesteps
from .schedule import NoiseSchedule, forward_sample, make_schedule
from .synthesizer import DiffusionSynthesizer, conditioned_region_contrast, fidelity_rate
from .training import diffusion_loss, train_denoiser

__all__ = [
    "ConditionEmbedding",
    "ConditionEncoder",
    "condition_batch",
    "sinusoidal_encoding",
    "Denoiser",
    "ddim_sample",
    "ddim_timesteps",
    "NoiseSchedule",
    "forward_sample",
    "make_schedule",
    "DiffusionSynthesizer",
    "conditioned_region_contrast",
    "fidelity_rate",
    "diffusion_loss",
    "train_denoiser",
]
