"""Open-vocabulary attention heatmaps.

Given a captured trace and any token embedding matrix (the *attribution*
tokens, which need not match the generation prompt), this module projects the
tokens through each block's key weights, forms per-pixel attention over the
attribution tokens, and aggregates the per-(block, timestep, head) slices
into one map per token at a common resolution.

Attention for a slice is ``softmax(Q K'^T / sqrt(head_dim))`` over the token
axis, so a token's map always depends on which other tokens sit in the same
matrix. Normalization is over exactly the provided rows; padding the matrix
to the encoder's full token budget would change the maps and is intentionally
not done.

Aggregation order is fixed (blocks in trace order, then timesteps ascending,
then heads ascending) so float sums are reproducible run to run.
"""
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    EmptySelectionError,
    NumericInputError,
)
from .kernels import get_kernel

RAW_SUM = "raw_sum"
MEAN_OVER_SLICES = "mean_over_slices"

TIMESTEP_MODES = ("all", "single", "early", "late")


@dataclass(frozen=True)
class SelectionConfig:
    """Which (block, timestep, head) slices to aggregate.

    ``blocks``/``heads`` default to everything in the trace. Timestep modes:
    ``all``; ``single`` (t == pivot); ``early`` (t <= pivot); ``late``
    (t >= pivot). ``output_size`` is (width, height) of the aggregated maps
    and defaults to the latent resolution.
    """

    blocks: tuple | None = None
    timestep_mode: str = "all"
    timestep_pivot: int | None = None
    heads: tuple | None = None
    output_size: tuple | None = None

    def __post_init__(self):
        if self.timestep_mode not in TIMESTEP_MODES:
            raise ConfigurationError(
                f"timestep_mode must be one of {TIMESTEP_MODES}, got {self.timestep_mode!r}")
        if self.timestep_mode != "all" and self.timestep_pivot is None:
            raise ConfigurationError(
                f"timestep_mode {self.timestep_mode!r} needs timestep_pivot")
        if self.blocks is not None:
            object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.heads is not None:
            object.__setattr__(self, "heads", tuple(self.heads))

    def resolve_blocks(self, trace):
        cross = trace.cross_blocks()
        if self.blocks is None:
            selected = cross
        else:
            known = {b.block_id for b in cross}
            missing = [b for b in self.blocks if b not in known]
            if missing:
                raise ConfigurationError(
                    f"selection names unknown cross blocks {missing}; "
                    f"trace has {sorted(known)}")
            selected = tuple(b for b in cross if b.block_id in self.blocks)
        if not selected:
            raise EmptySelectionError("block selection is empty")
        return selected

    def resolve_timesteps(self, trace):
        ts = sorted(trace.timesteps)
        if self.timestep_mode == "single":
            picked = [t for t in ts if t == self.timestep_pivot]
        elif self.timestep_mode == "early":
            picked = [t for t in ts if t <= self.timestep_pivot]
        elif self.timestep_mode == "late":
            picked = [t for t in ts if t >= self.timestep_pivot]
        else:
            picked = ts
        if not picked:
            raise EmptySelectionError(
                f"timestep selection {self.timestep_mode}:{self.timestep_pivot} "
                f"matches none of {ts}")
        return tuple(picked)

    def resolve_heads(self, block):
        if self.heads is None:
            return tuple(range(block.heads))
        bad = [h for h in self.heads if h < 0 or h >= block.heads]
        if bad:
            raise ConfigurationError(
                f"head indices {bad} out of range for block "
                f"{block.block_id!r} with {block.heads} heads")
        picked = tuple(sorted(set(self.heads)))
        if not picked:
            raise EmptySelectionError("head selection is empty")
        return picked

    def resolve_output(self, trace):
        if self.output_size is None:
            return trace.latent_w, trace.latent_h
        w, h = self.output_size
        if w < 1 or h < 1:
            raise ConfigurationError(f"output_size must be positive, got {self.output_size}")
        return int(w), int(h)


@dataclass(frozen=True)
class OvamHeatmap:
    """Per-token aggregated attention maps.

    ``maps`` has shape [n_tokens, height, width]; entries are non-negative.
    With ``raw_sum`` normalization values lie in [0, slice_count], with
    ``mean_over_slices`` in [0, 1].
    """

    maps: np.ndarray
    token_labels: tuple
    normalization: str
    slice_count: int
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "token_labels", tuple(self.token_labels))
        arr = np.asarray(self.maps)
        arr.flags.writeable = False
        object.__setattr__(self, "maps", arr)

    def channel(self, token_index):
        return self.maps[token_index]


def _require_finite(name, arr):
    if not np.isfinite(arr).all():
        raise NumericInputError(f"{name} contains NaN or Inf")


def project_attribution_keys(tokens, key_weights):
    """Project token embeddings through one block's key weights.

    Args:
      tokens: TokenEmbeddingMatrix or array [n_tokens, embed_dim].
      key_weights: array [heads, head_dim, embed_dim].

    Returns:
      float64 array [n_tokens, heads, head_dim].
    """
    rows = np.asarray(getattr(tokens, "tokens", tokens), dtype=np.float64)
    w = np.asarray(key_weights, dtype=np.float64)
    if rows.ndim != 2 or w.ndim != 3:
        raise DimensionMismatchError(
            f"expected tokens [n, embed] and weights [heads, head_dim, embed], "
            f"got {rows.shape} and {w.shape}")
    if rows.shape[1] != w.shape[2]:
        raise DimensionMismatchError(
            f"embedding width {rows.shape[1]} does not match key-weight "
            f"width {w.shape[2]}")
    return np.einsum("ne,hde->nhd", rows, w)


def project_keys_adjoint(grad_keys, key_weights):
    """Backprop through :func:`project_attribution_keys`: key-space gradient
    [n, heads, head_dim] to embedding-space gradient [n, embed_dim]."""
    return np.einsum("nhd,hde->ne", np.asarray(grad_keys, dtype=np.float64),
                     np.asarray(key_weights, dtype=np.float64))


def attention_matrix(queries, keys, head_dim=None):
    """Per-pixel softmax attention over tokens (validated public entry).

    Args:
      queries: array [n_pix, heads, head_dim].
      keys: array [n_tokens, heads, head_dim].
      head_dim: optional explicit scaling dim; defaults to queries.shape[2].

    Returns:
      float64 array [n_pix, heads, n_tokens]; rows sum to 1.
    """
    q = np.asarray(queries)
    k = np.asarray(keys)
    if q.ndim != 3 or k.ndim != 3 or q.shape[1:] != k.shape[1:]:
        raise DimensionMismatchError(
            f"queries {q.shape} and keys {k.shape} must share (heads, head_dim)")
    _require_finite("queries", q)
    _require_finite("keys", k)
    return get_kernel().attention_softmax(q, k, head_dim or q.shape[2])


def resize_bilinear(src, target):
    """Corner-aligned bilinear resize of a 2-D map to (width, height)."""
    w, h = target
    if w < 1 or h < 1:
        raise ValueError(f"target dims must be positive, got {target}")
    src = np.asarray(src)
    if src.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D map, got shape {src.shape}")
    return get_kernel().resize_bilinear(src, int(h), int(w))


def _aggregate(trace, keys_by_block, n_tokens, sel):
    """Shared slice loop: blocks -> timesteps -> heads, fixed order."""
    kern = get_kernel()
    out_w, out_h = sel.resolve_output(trace)
    blocks = sel.resolve_blocks(trace)
    timesteps = sel.resolve_timesteps(trace)
    acc = np.zeros((n_tokens, out_h, out_w), dtype=np.float64)
    slices = 0
    for block in blocks:
        rows, cols = block.grid_shape(trace.latent_w, trace.latent_h)
        keys = keys_by_block[block.block_id]
        heads = sel.resolve_heads(block)
        for t in timesteps:
            attn = attention_matrix(trace.queries[(block.block_id, t)], keys,
                                    block.head_dim)
            grid = attn.reshape(rows, cols, block.heads, n_tokens)
            for h in heads:
                for k in range(n_tokens):
                    acc[k] += kern.resize_bilinear(grid[:, :, h, k], out_h, out_w)
                slices += 1
    return acc, slices, out_w, out_h


def compute_ovam(trace, tokens, sel=None, normalization=RAW_SUM):
    """Aggregate attention for attribution tokens into per-token heatmaps.

    Args:
      trace: DenoisingTrace.
      tokens: TokenEmbeddingMatrix of attribution tokens.
      sel: SelectionConfig (defaults to all blocks/timesteps/heads at latent
        resolution).
      normalization: ``raw_sum`` keeps the plain slice sum;
        ``mean_over_slices`` divides by the number of aggregated slices so
        values stay in [0, 1].

    Returns:
      OvamHeatmap.
    """
    if normalization not in (RAW_SUM, MEAN_OVER_SLICES):
        raise ConfigurationError(f"unknown normalization {normalization!r}")
    sel = sel or SelectionConfig()
    rows = np.asarray(tokens.tokens, dtype=np.float64)
    if rows.shape[1] != trace.embed_dim:
        raise DimensionMismatchError(
            f"token embedding width {rows.shape[1]} does not match trace "
            f"embed_dim {trace.embed_dim}")
    _require_finite("attribution tokens", rows)
    keys_by_block = {
        b.block_id: project_attribution_keys(rows, trace.key_weights[b.block_id])
        for b in sel.resolve_blocks(trace)
    }
    acc, slices, out_w, out_h = _aggregate(trace, keys_by_block, rows.shape[0], sel)
    if normalization == MEAN_OVER_SLICES:
        acc /= slices
    return OvamHeatmap(
        maps=acc,
        token_labels=tokens.token_labels,
        normalization=normalization,
        slice_count=slices,
        width=out_w,
        height=out_h,
    )


def synthesis_heatmaps(trace, encoder, sel=None, normalization=RAW_SUM):
    """Aggregate the cross-attention the denoiser itself used for synthesis.

    Keys come from the generation prompt's own embedding, which is what
    prompt-bound extraction methods record during generation. Attribution
    with the generation embedding as token matrix reproduces this exactly.
    """
    return compute_ovam(trace, encoder.encode_text(trace.prompt_text), sel,
                        normalization)


def heatmap_stats(map2d, tau):
    """Peak value and the pixel fraction at or above ``tau * peak``.

    An all-zero map reports area 0 (matching mask binarization, where a zero
    map yields an empty mask).
    """
    arr = np.asarray(map2d, dtype=np.float64)
    peak = float(arr.max()) if arr.size else 0.0
    if peak <= 0.0:
        return {"max": peak, "area_at_tau": 0.0}
    area = float(np.count_nonzero(arr >= tau * peak)) / arr.size
    return {"max": peak, "area_at_tau": area}


# False-color palette: linear ramp through fixed anchors (dark violet body,
# bright tail), sampled into a 256-entry LUT.
_PALETTE_ANCHORS = (
    (0.00, (0, 0, 4)),
    (0.25, (59, 15, 112)),
    (0.50, (182, 54, 121)),
    (0.75, (252, 137, 97)),
    (1.00, (252, 253, 191)),
)


def _palette_lut():
    lut = np.zeros((256, 3), dtype=np.uint8)
    positions = np.array([p for p, _ in _PALETTE_ANCHORS])
    colors = np.array([c for _, c in _PALETTE_ANCHORS], dtype=np.float64)
    t = np.linspace(0.0, 1.0, 256)
    for c in range(3):
        lut[:, c] = np.rint(np.interp(t, positions, colors[:, c])).astype(np.uint8)
    return lut


_LUT = _palette_lut()


def heatmap_to_rgb(map2d):
    """Map a non-negative 2-D map to false color, peak-normalized."""
    arr = np.asarray(map2d, dtype=np.float64)
    peak = arr.max()
    scaled = arr / peak if peak > 0 else np.zeros_like(arr)
    idx = np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8)
    return _LUT[idx]


def export_heatmap(heatmap, token_index, prefix):
    """Write one channel as ``<prefix>.f32`` + ``.json`` + false-color ``.png``.

    Returns a dict with the three paths.
    """
    import json
    from pathlib import Path

    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    channel = heatmap.channel(token_index)
    raster = prefix.with_suffix(".f32")
    raster.write_bytes(np.ascontiguousarray(channel, dtype="<f4").tobytes())
    meta = {
        "width": heatmap.width,
        "height": heatmap.height,
        "dtype": "float32",
        "endianness": "little",
        "layout": "row-major",
        "token_label": heatmap.token_labels[token_index],
        "normalization": heatmap.normalization,
        "slice_count": heatmap.slice_count,
    }
    meta_path = prefix.with_suffix(".json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    png_path = prefix.with_suffix(".png")
    Image.fromarray(heatmap_to_rgb(channel), mode="RGB").save(png_path)
    return {"raster": str(raster), "meta": str(meta_path), "png": str(png_path)}
