"""Open-vocabulary attention maps for text-to-image denoisers.

Capture a denoising trace once, then probe it with any attribution prompt:
project the prompt's tokens through the captured key weights, aggregate the
resulting attention into per-token heatmaps, binarize them into pseudo-masks,
and optionally train attribution tokens against a single annotation. On top
of that sit dataset generation, filtering, evaluation, a CLI and an HTTP
service.
"""
from .backends import DenoiserBackend, available_backends, get_backend
from .backends.toy import ToyDenoiser, toy_denoiser_spec
from .errors import OvamError
from .heatmaps import (
    MEAN_OVER_SLICES,
    RAW_SUM,
    OvamHeatmap,
    SelectionConfig,
    attention_matrix,
    compute_ovam,
    project_attribution_keys,
    resize_bilinear,
    synthesis_heatmaps,
)
from .masks import (
    BinarizationParams,
    BinaryMask,
    binarize,
    fuse_self_attention,
    make_pseudo_mask,
)
from .metrics import evaluate_dataset, iou
from .optimizer import (
    OptimizationResult,
    OptimizerConfig,
    TrainingPair,
    bce_loss,
    gradient,
    optimize_tokens,
)
from .tokens import init_attribution_tokens, load_token_file, save_token_file
from .trace import BlockSpec, DenoisingTrace, TokenEmbeddingMatrix
from .trace_io import load_trace, save_trace

__version__ = "0.1.0"

__all__ = [
    "BinarizationParams",
    "BinaryMask",
    "BlockSpec",
    "DenoiserBackend",
    "DenoisingTrace",
    "MEAN_OVER_SLICES",
    "OptimizationResult",
    "OptimizerConfig",
    "OvamError",
    "OvamHeatmap",
    "RAW_SUM",
    "SelectionConfig",
    "TokenEmbeddingMatrix",
    "ToyDenoiser",
    "TrainingPair",
    "attention_matrix",
    "available_backends",
    "bce_loss",
    "binarize",
    "compute_ovam",
    "evaluate_dataset",
    "fuse_self_attention",
    "get_backend",
    "gradient",
    "init_attribution_tokens",
    "iou",
    "load_token_file",
    "load_trace",
    "make_pseudo_mask",
    "optimize_tokens",
    "project_attribution_keys",
    "resize_bilinear",
    "save_token_file",
    "save_trace",
    "synthesis_heatmaps",
    "toy_denoiser_spec",
    "__version__",
]
