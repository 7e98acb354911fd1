"""One-bit compressed sensing with generative priors."""

from .core import (
    DegenerateInputError,
    InvalidArgumentError,
    NumericError,
    ParseError,
    RngStream,
    TrainingError,
    derive_stream,
    sample_gaussian,
)
from .model import MlpGenerator, forward, lipschitz_bound, load_model, save_model, vjp
from .recon import GenOpts, ReconResult, biht, gen_pgd, reconstruct_gen, reconstruct_gen_noise_aware, yp_convex
from .sensing import MeasurementEnsemble, NoiseConfig, OneBitObservation, make_ensemble, perturb_matrix, quantize

__version__ = "0.1.0"
