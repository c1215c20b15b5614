"""Capture contract for one denoising run.

A :class:`DenoisingTrace` holds everything a denoiser backend exports from a
single image generation: per-(block, timestep) pixel queries, per-block key
projection weights, full-resolution self-attention aggregates, the decoded
image and the run metadata. Traces are immutable once built; every array is
marked read-only so downstream stages (heatmaps, optimization) cannot disturb
the captured state.

Array conventions (all row-major):
  * spatial grids are indexed [row, col] = [y, x];
  * flattened pixel axes enumerate (y, x) in C order;
  * queries[block_id, t]      -> [ceil(H/r) * ceil(W/r), heads, head_dim]
  * key_weights[block_id]     -> [heads, head_dim, embed_dim], applied to an
                                 embedding row e as K[h, d] = sum_e W[h, d, e] * e
  * self_attn[block_id, t]    -> [H * W, H * W, heads], each (query-pixel,
                                 head) row a distribution over key pixels.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, PartialTraceError, TraceFormatError

SELF_ATTN_ROW_SUM_TOL = 1e-5


@dataclass(frozen=True)
class BlockSpec:
    """One attention block of the denoiser.

    ``reduction`` divides the latent side: the block sees a
    ceil(H/reduction) x ceil(W/reduction) grid.
    """

    block_id: str
    reduction: int
    heads: int
    head_dim: int
    kind: str  # "cross" or "self"

    def __post_init__(self):
        if self.reduction < 1:
            raise ValueError(f"reduction must be >= 1, got {self.reduction}")
        if self.heads < 1 or self.head_dim < 1:
            raise ValueError("heads and head_dim must be positive")
        if self.kind not in ("cross", "self"):
            raise ValueError(f"kind must be 'cross' or 'self', got {self.kind!r}")

    def grid_shape(self, latent_w, latent_h):
        """(rows, cols) of this block's spatial grid."""
        return (math.ceil(latent_h / self.reduction),
                math.ceil(latent_w / self.reduction))


@dataclass(frozen=True)
class TokenEmbeddingMatrix:
    """A stack of token embeddings, one row per token."""

    tokens: np.ndarray  # [n_tokens, embed_dim]
    token_labels: tuple

    def __post_init__(self):
        arr = np.asarray(self.tokens)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"tokens must be [n_tokens >= 1, embed_dim], got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("token embeddings must be finite")
        if len(self.token_labels) != arr.shape[0]:
            raise ValueError("one label per token row required")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "tokens", arr)
        object.__setattr__(self, "token_labels", tuple(self.token_labels))

    @property
    def n_tokens(self):
        return self.tokens.shape[0]

    @property
    def embed_dim(self):
        return self.tokens.shape[1]


def _freeze(arr):
    arr = np.asarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DenoisingTrace:
    """Everything captured from one generation. Immutable after validation."""

    latent_w: int
    latent_h: int
    blocks: tuple  # of BlockSpec
    queries: dict  # (block_id, t) -> [n_pix, heads, head_dim]
    key_weights: dict  # block_id -> [heads, head_dim, embed_dim]
    self_attn: dict  # (block_id, t) -> [H*W, H*W, heads]
    image: np.ndarray  # uint8 [H_img, W_img, 3]
    seed: int
    timesteps: tuple
    prompt_text: str
    embed_dim: int
    backend_id: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "timesteps", tuple(self.timesteps))
        object.__setattr__(self, "queries",
                           {k: _freeze(v) for k, v in self.queries.items()})
        object.__setattr__(self, "key_weights",
                           {k: _freeze(v) for k, v in self.key_weights.items()})
        object.__setattr__(self, "self_attn",
                           {k: _freeze(v) for k, v in self.self_attn.items()})
        object.__setattr__(self, "image", _freeze(self.image))
        self.validate()

    @property
    def image_h(self):
        return self.image.shape[0]

    @property
    def image_w(self):
        return self.image.shape[1]

    def cross_blocks(self):
        return tuple(b for b in self.blocks if b.kind == "cross")

    def self_blocks(self):
        return tuple(b for b in self.blocks if b.kind == "self")

    def block(self, block_id):
        for b in self.blocks:
            if b.block_id == block_id:
                return b
        raise KeyError(block_id)

    def validate(self):
        """Check the capture contract; raises TraceFormatError on violation."""
        ids = [b.block_id for b in self.blocks]
        if len(set(ids)) != len(ids):
            raise TraceFormatError(f"duplicate block ids: {ids}")
        missing = [
            (b.block_id, t)
            for b in self.cross_blocks()
            for t in self.timesteps
            if (b.block_id, t) not in self.queries
        ]
        if missing:
            raise PartialTraceError(missing)
        for b in self.cross_blocks():
            rows, cols = b.grid_shape(self.latent_w, self.latent_h)
            expected = (rows * cols, b.heads, b.head_dim)
            for t in self.timesteps:
                q = self.queries[(b.block_id, t)]
                if q.shape != expected:
                    raise DimensionMismatchError(
                        f"queries[{b.block_id!r}, {t}] shape {q.shape}, "
                        f"expected {expected}")
            w = self.key_weights.get(b.block_id)
            if w is None:
                raise TraceFormatError(f"missing key weights for {b.block_id!r}")
            if w.shape != (b.heads, b.head_dim, self.embed_dim):
                raise DimensionMismatchError(
                    f"key_weights[{b.block_id!r}] shape {w.shape}, expected "
                    f"{(b.heads, b.head_dim, self.embed_dim)}")
        n_full = self.latent_w * self.latent_h
        for (block_id, t), sa in self.self_attn.items():
            b = self.block(block_id)
            if b.reduction != 1:
                raise TraceFormatError(
                    f"self-attention stored for reduced block {block_id!r}; "
                    "only full-resolution blocks are captured")
            if sa.shape != (n_full, n_full, b.heads):
                raise DimensionMismatchError(
                    f"self_attn[{block_id!r}, {t}] shape {sa.shape}, expected "
                    f"{(n_full, n_full, b.heads)}")
            sums = np.asarray(sa, dtype=np.float64).sum(axis=1)
            if np.abs(sums - 1.0).max() > SELF_ATTN_ROW_SUM_TOL:
                raise TraceFormatError(
                    f"self_attn[{block_id!r}, {t}] rows do not sum to 1")
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise TraceFormatError(f"image must be [H, W, 3], got {self.image.shape}")
