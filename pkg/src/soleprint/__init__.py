"""Bayesian spatial point-process model of accidental marks on shoe soles."""
from .core import FULL, VARIANTS, GlobalParams, ModelVariant, PriorConfig, Shoe
from .estimators import AccidentalModel, ContactModel, KDEModel, UniformModel
from .generative import SimConfig, sample_prior, simulate_dataset
from .grid import CoarseMap, ContactSurface, Kernel, KernelParams, default_coarse_map, kernel_from_params
from .heldout import geo_mean_metric, heldout_density
from .io import VERSION as __version__
from .mcmc import ChainConfig, PosteriorDraws, run_chain
from .rmp import MatchPredicateConfig, random_match_probability

__all__ = [
    "AccidentalModel", "ChainConfig", "CoarseMap", "ContactModel", "ContactSurface", "FULL", "GlobalParams",
    "KDEModel", "Kernel", "KernelParams", "MatchPredicateConfig", "ModelVariant", "PosteriorDraws",
    "PriorConfig", "Shoe", "SimConfig", "UniformModel", "VARIANTS", "default_coarse_map", "geo_mean_metric",
    "heldout_density", "kernel_from_params", "random_match_probability", "run_chain", "sample_prior",
    "simulate_dataset",
]
