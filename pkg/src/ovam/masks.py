"""From heatmaps to binary pseudo-masks.

The pipeline order is fixed: aggregate the token's heatmap at latent
resolution, optionally damp it with the fused self-attention map
(elementwise product), upscale the combined map to image resolution with
bilinear interpolation, apply the peak-relative threshold there, then
optionally refine with a pluggable dense-CRF step. Thresholding after the
upscale keeps masks aligned with image-resolution annotations; a flag keeps
latent-resolution thresholding available for ablations.
"""
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, DimensionMismatchError
from .heatmaps import MEAN_OVER_SLICES, SelectionConfig, compute_ovam
from .kernels import get_kernel


@dataclass(frozen=True)
class BinarizationParams:
    """Mask hyperparameters.

    ``tau`` is the peak-relative threshold; ``alpha`` the lower bound of the
    rescaled self-attention map (1 disables damping entirely). Defaults
    differ by token kind: plain prompt tokens binarize well at
    tau=0.4/alpha=0.85, optimized tokens concentrate attention and use
    tau=0.8/alpha=0.95.
    """

    tau: float = 0.4
    alpha: float = 0.85
    use_self_attention: bool = True
    use_crf: bool = True

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ConfigurationError(f"tau must be in (0, 1], got {self.tau}")
        if not 0 < self.alpha <= 1:
            raise ConfigurationError(f"alpha must be in (0, 1], got {self.alpha}")

    @classmethod
    def for_prompt(cls, **overrides):
        return replace(cls(tau=0.4, alpha=0.85), **overrides)

    @classmethod
    def for_optimized_token(cls, **overrides):
        return replace(cls(tau=0.8, alpha=0.95), **overrides)


@dataclass(frozen=True)
class BinaryMask:
    grid: np.ndarray  # bool [h, w]
    class_label: str
    area_fraction: float

    @classmethod
    def from_grid(cls, grid, class_label):
        grid = np.asarray(grid, dtype=bool)
        grid.flags.writeable = False
        area = int(np.count_nonzero(grid)) / grid.size
        return cls(grid=grid, class_label=class_label, area_fraction=area)


def fuse_self_attention(trace, alpha):
    """Collapse captured self-attention into one damping map in [alpha, 1].

    Each (query-pixel, key-pixel, head) matrix is reduced to attention
    *received* per pixel (sum over query pixels), summed over blocks,
    timesteps and heads, then min-max rescaled onto [alpha, 1]. A constant
    raw map carries no grouping information and maps to all ones.
    """
    if not 0 < alpha <= 1:
        raise ConfigurationError(f"alpha must be in (0, 1], got {alpha}")
    self_blocks = [b for b in trace.self_blocks() if b.reduction == 1]
    if not self_blocks:
        raise ConfigurationError("trace holds no full-resolution self-attention")
    h, w = trace.latent_h, trace.latent_w
    fused = np.zeros(h * w, dtype=np.float64)
    seen = False
    for block in self_blocks:
        for t in sorted(trace.timesteps):
            sa = trace.self_attn.get((block.block_id, t))
            if sa is None:
                continue
            seen = True
            received = np.asarray(sa, dtype=np.float64).sum(axis=0)  # [n_pix, heads]
            for head in range(block.heads):
                fused += received[:, head]
    if not seen:
        raise ConfigurationError("trace holds no self-attention timesteps")
    fused = fused.reshape(h, w)
    lo, hi = fused.min(), fused.max()
    if hi == lo:
        return np.ones((h, w), dtype=np.float64)
    # endpoints attained exactly: t is exactly 0 at the min and 1 at the max,
    # and alpha + (1 - alpha) is exact for alpha >= 0.5
    t = (fused - lo) / (hi - lo)
    return alpha + t * (1.0 - alpha)


def binarize_map(combined, tau):
    """Peak-relative threshold: pixel true iff value >= tau * max.

    An all-zero (or non-positive) map yields an all-false mask.
    """
    if not 0 < tau <= 1:
        raise ConfigurationError(f"tau must be in (0, 1], got {tau}")
    arr = np.asarray(combined, dtype=np.float64)
    peak = arr.max()
    if peak <= 0:
        return np.zeros(arr.shape, dtype=bool)
    return arr >= tau * peak


def binarize(heatmap_channel, damping, tau, class_label=""):
    """Combine a heatmap with an optional damping map and threshold it."""
    heat = np.asarray(heatmap_channel, dtype=np.float64)
    if damping is not None:
        damping = np.asarray(damping, dtype=np.float64)
        if damping.shape != heat.shape:
            raise DimensionMismatchError(
                f"damping shape {damping.shape} does not match heatmap {heat.shape}")
        heat = heat * damping
    return BinaryMask.from_grid(binarize_map(heat, tau), class_label)


def _nearest_upscale(grid, out_h, out_w):
    h, w = grid.shape
    ys = np.rint(np.arange(out_h) * ((h - 1) / (out_h - 1) if out_h > 1 else 0)).astype(int)
    xs = np.rint(np.arange(out_w) * ((w - 1) / (out_w - 1) if out_w > 1 else 0)).astype(int)
    return grid[ys][:, xs]


def make_pseudo_mask(trace, tokens, token_index, params, sel=None,
                     refiner=None, class_label=None, threshold_at_latent=False):
    """Full pipeline from trace + attribution tokens to an image-resolution mask.

    Args:
      trace: DenoisingTrace.
      tokens: TokenEmbeddingMatrix (attribution prompt or optimized token file).
      token_index: token row whose map to binarize; a sequence of indices
        averages the listed channels (multi-word class names).
      params: BinarizationParams.
      sel: SelectionConfig for aggregation (defaults to everything).
      refiner: MaskRefiner; defaults to the built-in dense-CRF refiner when
        params.use_crf is set.
      threshold_at_latent: ablation flag; threshold before upscaling and
        nearest-upscale the boolean grid instead.
    """
    heat = compute_ovam(trace, tokens, sel, normalization=MEAN_OVER_SLICES)
    if isinstance(token_index, (int, np.integer)):
        indices = [int(token_index)]
    else:
        indices = [int(i) for i in token_index]
    combined = heat.maps[indices].mean(axis=0)
    if params.use_self_attention:
        combined = combined * fuse_self_attention(trace, params.alpha)
    if class_label is None:
        class_label = str(tokens.token_labels[indices[0]])

    if threshold_at_latent:
        grid = _nearest_upscale(binarize_map(combined, params.tau),
                                trace.image_h, trace.image_w)
    else:
        upscaled = get_kernel().resize_bilinear(combined, trace.image_h, trace.image_w)
        grid = binarize_map(upscaled, params.tau)

    if params.use_crf:
        if refiner is None:
            from .crf import DenseCrfRefiner
            refiner = DenseCrfRefiner()
        grid = refiner.refine(trace.image, grid)
        if grid.shape != (trace.image_h, trace.image_w):
            raise DimensionMismatchError("refiner changed the mask dimensions")
    return BinaryMask.from_grid(grid, class_label)


def save_mask(mask, path, params=None, extra=None):
    """Write an 8-bit PNG (0 background, 255 class) plus a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask.grid, 255, 0).astype(np.uint8), mode="L").save(path)
    sidecar = {
        "class": mask.class_label,
        "area_fraction": mask.area_fraction,
    }
    if params is not None:
        sidecar.update({
            "tau": params.tau,
            "alpha": params.alpha,
            "self_attention": params.use_self_attention,
            "crf": params.use_crf,
        })
    if extra:
        sidecar.update(extra)
    path.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_mask(path, class_label=""):
    """Read a mask PNG written by :func:`save_mask` (any nonzero is true)."""
    grid = np.asarray(Image.open(path).convert("L")) > 0
    return BinaryMask.from_grid(grid, class_label)
