"""Gradient-descent training of attribution tokens against annotated masks.

Only the attribution token rows move; traces (queries, key weights) are
frozen inputs. The objective per training pair is binary cross-entropy
between each token's heatmap (mean-normalized, upscaled to the annotation
resolution) and that token's ground-truth channel; the total loss is the
mean over pixels, summed over tokens, summed over pairs. The gradient is
hand-derived through the resize, the slice mean, the token softmax and the
key projection, and is checked against finite differences in the test suite.

The schedule is plain full-batch gradient descent: a constant learning rate
multiplied by a decay factor every fixed number of steps. Loss curves can
spike at high learning rates; no clipping is applied, and the best embedding
seen is what gets returned.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, DivergenceError
from .heatmaps import (
    MEAN_OVER_SLICES,
    SelectionConfig,
    project_attribution_keys,
    project_keys_adjoint,
)
from .kernels import get_kernel
from .trace import TokenEmbeddingMatrix

BCE_EPS = 1e-7

DEFAULT_LEARNING_RATE = 100.0
DEFAULT_DECAY_FACTOR = 0.7
DEFAULT_DECAY_EVERY = 120
DEFAULT_EPOCHS = 500


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    decay_factor: float = DEFAULT_DECAY_FACTOR
    decay_every: int = DEFAULT_DECAY_EVERY
    epochs: int = DEFAULT_EPOCHS
    heatmap_normalization: str = MEAN_OVER_SLICES
    selection: SelectionConfig = field(default_factory=SelectionConfig)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.heatmap_normalization != MEAN_OVER_SLICES:
            raise ValueError(
                "optimization heatmaps are fixed to mean_over_slices "
                "normalization (cross-entropy needs values in [0, 1])")


@dataclass(frozen=True)
class TrainingPair:
    """One trace plus its per-token binary annotation.

    ``ground_truth`` is [n_tokens, image_h, image_w] with {0,1} values, one
    channel per attribution token row.
    """

    trace: object
    ground_truth: np.ndarray

    def __post_init__(self):
        gt = np.asarray(self.ground_truth, dtype=np.float64)
        if gt.ndim != 3:
            raise DimensionMismatchError(
                f"ground truth must be [n_tokens, h, w], got {gt.shape}")
        if gt.shape[1:] != (self.trace.image_h, self.trace.image_w):
            raise DimensionMismatchError(
                f"ground truth spatial dims {gt.shape[1:]} do not match the "
                f"image ({self.trace.image_h}, {self.trace.image_w})")
        if not np.isin(gt, (0.0, 1.0)).all():
            raise ValueError("ground-truth channels must be {0,1}-valued")
        gt.flags.writeable = False
        object.__setattr__(self, "ground_truth", gt)


@dataclass(frozen=True)
class OptimizationResult:
    best_tokens: TokenEmbeddingMatrix
    best_loss: float
    loss_history: tuple
    best_epoch: int


def bce_loss(probs, ground_truth):
    """Sum over tokens of the mean per-pixel binary cross-entropy.

    ``probs`` must already be in [0, 1] (mean-over-slices heatmaps resized to
    the ground-truth resolution); values are clamped to [eps, 1 - eps] before
    the logs so the loss is finite everywhere.
    """
    p = np.asarray(getattr(probs, "maps", probs), dtype=np.float64)
    g = np.asarray(ground_truth, dtype=np.float64)
    if p.shape != g.shape:
        raise DimensionMismatchError(
            f"prediction shape {p.shape} does not match ground truth {g.shape}")
    if p.min() < -1e-9 or p.max() > 1 + 1e-9:
        raise ValueError("predictions must lie in [0, 1]; "
                         "did you pass a raw_sum heatmap?")
    clamped = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    per_pixel = -(g * np.log(clamped) + (1.0 - g) * np.log1p(-clamped))
    return float(per_pixel.reshape(p.shape[0], -1).mean(axis=1).sum())


def _bce_grad(probs, ground_truth):
    """d(bce_loss)/d(probs); zero where the clamp is active."""
    p = np.asarray(probs, dtype=np.float64)
    g = np.asarray(ground_truth, dtype=np.float64)
    inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    grad = np.zeros_like(p)
    n_px = p.shape[1] * p.shape[2]
    grad[inside] = (p[inside] - g[inside]) / (p[inside] * (1.0 - p[inside])) / n_px
    return grad


def _pair_layout(trace, sel):
    """Resolved slice layout, shared by the forward and backward passes."""
    blocks = sel.resolve_blocks(trace)
    timesteps = sel.resolve_timesteps(trace)
    heads = {b.block_id: sel.resolve_heads(b) for b in blocks}
    slices = sum(len(heads[b.block_id]) for b in blocks) * len(timesteps)
    return blocks, timesteps, heads, slices


def _forward_pair(trace, rows, sel):
    """Mean heatmaps at latent resolution plus image-resolution probabilities."""
    kern = get_kernel()
    blocks, timesteps, heads, slices = _pair_layout(trace, sel)
    n_tok = rows.shape[0]
    out_w, out_h = sel.resolve_output(trace)
    acc = np.zeros((n_tok, out_h, out_w), dtype=np.float64)
    keys = {}
    for block in blocks:
        keys[block.block_id] = project_attribution_keys(rows, trace.key_weights[block.block_id])
        grid_rows, grid_cols = block.grid_shape(trace.latent_w, trace.latent_h)
        for t in timesteps:
            attn = kern.attention_softmax(
                trace.queries[(block.block_id, t)], keys[block.block_id], block.head_dim)
            grid = attn.reshape(grid_rows, grid_cols, block.heads, n_tok)
            for h in heads[block.block_id]:
                for k in range(n_tok):
                    acc[k] += kern.resize_bilinear(grid[:, :, h, k], out_h, out_w)
    acc /= slices
    probs = np.stack([
        kern.resize_bilinear(acc[k], trace.image_h, trace.image_w)
        for k in range(n_tok)
    ])
    return probs, acc, keys, slices


def _pair_loss_and_grad(trace, rows, gt, sel, want_grad=True):
    kern = get_kernel()
    probs, acc, keys, slices = _forward_pair(trace, rows, sel)
    loss = bce_loss(probs, gt)
    if not want_grad:
        return loss, None
    n_tok = rows.shape[0]
    out_h, out_w = acc.shape[1], acc.shape[2]
    dprobs = _bce_grad(probs, gt)
    dacc = np.stack([
        kern.resize_bilinear_adjoint(dprobs[k], out_h, out_w)
        for k in range(n_tok)
    ]) / slices

    grad_rows = np.zeros_like(rows)
    blocks, timesteps, heads, _ = _pair_layout(trace, sel)
    for block in blocks:
        grid_rows, grid_cols = block.grid_shape(trace.latent_w, trace.latent_h)
        # The scatter back to this block's grid is identical for every
        # (timestep, head) slice, so compute it once per token.
        dslice = np.stack([
            kern.resize_bilinear_adjoint(dacc[k], grid_rows, grid_cols).reshape(-1)
            for k in range(n_tok)
        ])  # [n_tok, n_pix]
        dattn = np.zeros((grid_rows * grid_cols, block.heads, n_tok))
        for h in heads[block.block_id]:
            dattn[:, h, :] = dslice.T
        dkeys = np.zeros((n_tok, block.heads, block.head_dim))
        for t in timesteps:
            attn = kern.attention_softmax(
                trace.queries[(block.block_id, t)], keys[block.block_id], block.head_dim)
            dkeys += kern.attention_grad_keys(
                trace.queries[(block.block_id, t)], attn, dattn, block.head_dim)
        grad_rows += project_keys_adjoint(dkeys, trace.key_weights[block.block_id])
    return loss, grad_rows


def _check_pairs(pairs, matrix):
    if not pairs:
        raise ValueError("at least one training pair is required")
    for pair in pairs:
        if pair.ground_truth.shape[0] != matrix.n_tokens:
            raise DimensionMismatchError(
                f"pair has {pair.ground_truth.shape[0]} ground-truth channels "
                f"for {matrix.n_tokens} tokens")
        if pair.trace.embed_dim != matrix.embed_dim:
            raise DimensionMismatchError(
                f"trace embed_dim {pair.trace.embed_dim} does not match "
                f"token width {matrix.embed_dim}")


def evaluate_loss(pairs, matrix, cfg=None):
    """Objective value at ``matrix`` without taking a step."""
    cfg = cfg or OptimizerConfig()
    _check_pairs(pairs, matrix)
    rows = np.asarray(matrix.tokens, dtype=np.float64)
    return sum(
        _pair_loss_and_grad(p.trace, rows, p.ground_truth, cfg.selection,
                            want_grad=False)[0]
        for p in pairs
    )


def gradient(pairs, matrix, cfg=None):
    """Exact objective gradient with respect to the token rows."""
    cfg = cfg or OptimizerConfig()
    _check_pairs(pairs, matrix)
    rows = np.asarray(matrix.tokens, dtype=np.float64)
    total = np.zeros_like(rows)
    for pair in pairs:
        _, g = _pair_loss_and_grad(pair.trace, rows, pair.ground_truth, cfg.selection)
        total += g
    return total


def optimize_tokens(pairs, init, cfg=None, progress=None):
    """Full-batch gradient descent on the token rows.

    Args:
      pairs: TrainingPair sequence (all sharing init's token count).
      init: TokenEmbeddingMatrix starting point.
      cfg: OptimizerConfig; defaults follow the standard schedule
        (lr 100, x0.7 every 120 steps, 500 epochs).
      progress: optional callback ``(epoch, loss, lr)`` per epoch.

    Returns:
      OptimizationResult with the best-seen embedding; ``best_loss`` is
      reproducible by re-evaluating ``best_tokens``.

    Raises:
      DivergenceError: when the loss turns NaN/Inf; the carried
        ``partial_result`` holds the best state before divergence.
    """
    cfg = cfg or OptimizerConfig()
    _check_pairs(pairs, init)
    rows = np.asarray(init.tokens, dtype=np.float64).copy()
    lr = cfg.learning_rate
    history = []
    best_loss = math.inf
    best_rows = rows.copy()
    best_epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        loss = 0.0
        grad_rows = np.zeros_like(rows)
        for pair in pairs:
            pair_loss, pair_grad = _pair_loss_and_grad(
                pair.trace, rows, pair.ground_truth, cfg.selection)
            loss += pair_loss
            grad_rows += pair_grad
        if not math.isfinite(loss):
            partial = OptimizationResult(
                best_tokens=TokenEmbeddingMatrix(best_rows, init.token_labels),
                best_loss=best_loss,
                loss_history=tuple(history),
                best_epoch=best_epoch,
            )
            raise DivergenceError(
                f"loss became non-finite at epoch {epoch}", partial_result=partial)
        history.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_rows = rows.copy()
            best_epoch = epoch
        if progress is not None:
            progress(epoch, loss, lr)
        rows -= lr * grad_rows
        if epoch % cfg.decay_every == 0:
            lr *= cfg.decay_factor

    return OptimizationResult(
        best_tokens=TokenEmbeddingMatrix(best_rows, init.token_labels),
        best_loss=best_loss,
        loss_history=tuple(history),
        best_epoch=best_epoch,
    )
