from .schedule import NoiseSchedule, forward_sample
from .backends import (
    DenoiserHyper,
    GaussianMixture,
    isotropic_prior,
    LearnedDenoiser,
    MixtureDenoiser,
    mixture_from_law,
    simple_loss,
    time_embedding,
    train_denoiser,
)
from .sampler import ReverseMoments, draw, initial_noise, reverse_moments, unguided_sample


__all__ = [
    "DenoiserHyper",
    "GaussianMixture",
    "LearnedDenoiser",
    "MixtureDenoiser",
    "NoiseSchedule",
    "ReverseMoments",
    "draw",
    "forward_sample",
    "isotropic_prior",
    "initial_noise",
    "mixture_from_law",
    "reverse_moments",
    "simple_loss",
    "time_embedding",
    "train_denoiser",
    "unguided_sample",
]
