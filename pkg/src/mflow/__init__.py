"""Normalizing flows for sampling data that lives on low-dimensional manifolds.

A flow trained on noise-inflated samples defines a density whose ridge
traces the manifold. Samples are moved onto the ridge by likelihood
maximization, or replaced by points on a surface reconstructed from
likelihood-gradient normals.
"""

__version__ = "0.1.0"

from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EncoderArchitecture, EncoderModel, build_encoder, encode, encoder_param_grads
from .errors import (ConvergenceError, FormatError, InvalidArgument, MflowError, NumericError,
                     ReconstructionError)
from .flow import FlowArchitecture, FlowModel, build_flow
from .geometry import OrientedPointSet, ScalarField, TriangleMesh
from .metrics import MetricsReport, chamfer, emd, evaluate, f1, oracle_metrics
from .projector import LLMConfig, llm_loss, llm_project, llm_project_batch
from .synth import SynthManifold, normalize_cloud, sample_manifold, subsample
from .trainer import (AdamState, NoiseSchedule, TrainConfig, adam_step, noise_sigma_at, train,
                      validate_noise_scale)

__all__ = [
    "__version__",
    "load_checkpoint", "save_checkpoint",
    "EncoderArchitecture", "EncoderModel", "build_encoder", "encode", "encoder_param_grads",
    "ConvergenceError", "FormatError", "InvalidArgument", "MflowError", "NumericError",
    "ReconstructionError",
    "FlowArchitecture", "FlowModel", "build_flow",
    "OrientedPointSet", "ScalarField", "TriangleMesh",
    "MetricsReport", "chamfer", "emd", "evaluate", "f1", "oracle_metrics",
    "LLMConfig", "llm_loss", "llm_project", "llm_project_batch",
    "SynthManifold", "normalize_cloud", "sample_manifold", "subsample",
    "AdamState", "NoiseSchedule", "TrainConfig", "adam_step", "noise_sigma_at", "train",
    "validate_noise_scale",
]
