"""Periodic-boundary diffusion for particle self-assembly.

A generative pipeline over periodic particle systems: a reference MD
engine produces self-assembled configurations of an oscillating pair
potential; a periodic graph-convolution denoiser learns them under a
wrapped-noise diffusion process; statistical verifiers pin down the
distributional identities the method rests on.
"""

from .box import (
    NeighborGraph,
    PeriodicBox,
    knn_graph,
    min_image,
    pbc_distance,
    wrap_within,
)
from .diffusion import (
    DiffusionSchedule,
    TrainConfig,
    forward_noise,
    posterior_mean,
    posterior_var,
    sample,
    train,
)
from .io import Conformation, augment, load_conformation, save_conformation
from .md import MDConfig, run_anneal
from .network import (
    DenoiserConfig,
    DenoiserParams,
    DivergenceError,
    GlobalFeatures,
    init_params,
    loss_and_gradients,
    n_parameters,
    predict_noise,
)
from .potential import OPPParams, opp_energy, opp_force, tabulate
from .rdf import RDFVector, compute_rdf, first_peak_bin, rdf_mse

__version__ = "0.1.0"

__all__ = [
    "Conformation",
    "DenoiserConfig",
    "DenoiserParams",
    "DiffusionSchedule",
    "DivergenceError",
    "GlobalFeatures",
    "MDConfig",
    "NeighborGraph",
    "OPPParams",
    "PeriodicBox",
    "RDFVector",
    "TrainConfig",
    "augment",
    "compute_rdf",
    "first_peak_bin",
    "forward_noise",
    "init_params",
    "knn_graph",
    "load_conformation",
    "loss_and_gradients",
    "min_image",
    "n_parameters",
    "opp_energy",
    "opp_force",
    "pbc_distance",
    "posterior_mean",
    "posterior_var",
    "predict_noise",
    "rdf_mse",
    "run_anneal",
    "sample",
    "save_conformation",
    "tabulate",
    "train",
    "wrap_within",
    "__version__",
]
