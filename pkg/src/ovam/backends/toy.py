"""Deterministic toy denoiser for desk-scale verification.

Everything the toy backend emits is a pure function of its inputs, defined by
the recipe below so an independent implementation can reproduce any array
bit-for-bit.

Pseudo-random stream
--------------------
``unit_stream(tag, n)`` yields n float32 values in [-1, 1):

  1. ``s = little-endian uint64 of the first 8 bytes of SHA-256(tag)``;
  2. value ``i`` (0-based) mixes the counter ``s + (i+1) * 0x9E3779B97F4A7C15``
     with the splitmix64 finalizer::

         z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
         z ^= z >> 27;  z *= 0x94D049BB133111EB
         z ^= z >> 31

     (all arithmetic mod 2**64);
  3. maps to a float via ``2 * ((z >> 11) * 2**-53) - 1`` and casts to
     float32. Arrays are filled from the stream in C (row-major) order.

Stream tags
-----------
  queries            ``q:<seed>:<block_id>:<t>``
  key weights        ``kw:<block_id>``           (model weights: seed-free)
  self-attn logits   ``sa:<seed>:<block_id>:<t>`` (softmax over the key axis)
  token embedding    ``tok:<token_text>``
  image base         ``img:<seed>``

Text encoding
-------------
The tokenizer lowercases the prompt and splits on whitespace; rows are
``<SoT>``, one per word, ``<EoT>``, each embedded by its ``tok:`` stream.
Queries do not depend on the prompt (the toy trades realism for an exactly
reproducible contract).

Image
-----
An 8x8x3 base in [0, 1) from ``img:<seed>`` is upscaled by ``image_scale``
(default 8, giving 64x64) with the same corner-aligned bilinear rule used
for heatmaps, then quantized with round-half-to-even to uint8. A scale of 1
keeps the decoded image on the latent grid, which optimizer fixtures use so
annotations need no fractional interpolation.
"""
import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import PromptTooLongError
from ..kernels import reference
from ..trace import BlockSpec, DenoisingTrace, TokenEmbeddingMatrix
from . import DenoiserBackend

SOT_LABEL = "<SoT>"
EOT_LABEL = "<EoT>"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def unit_stream(tag, count):
    """The documented counter-based stream: float32 values in [-1, 1)."""
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    seed = np.uint64(int.from_bytes(digest[:8], "little"))
    z = seed + np.arange(1, count + 1, dtype=np.uint64) * _GAMMA
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    u = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return (2.0 * u - 1.0).astype(np.float32)


def token_embedding(text, embed_dim):
    return unit_stream(f"tok:{text}", embed_dim)


@dataclass(frozen=True)
class ToySpec:
    """Published constants of the toy backend."""

    backend_id: str = "toy"
    latent_w: int = 8
    latent_h: int = 8
    image_w: int = 64
    image_h: int = 64
    embed_dim: int = 16
    head_dim: int = 8
    default_timesteps: int = 3
    max_tokens: int = 77
    blocks: tuple = (
        BlockSpec("cross_r1", reduction=1, heads=2, head_dim=8, kind="cross"),
        BlockSpec("cross_r2", reduction=2, heads=2, head_dim=8, kind="cross"),
        BlockSpec("self_r1", reduction=1, heads=2, head_dim=8, kind="self"),
    )


def toy_denoiser_spec():
    """Constants of the toy contract, for oracles and documentation."""
    return ToySpec()


class ToyDenoiser(DenoiserBackend):
    """Deterministic stand-in denoiser implementing the capture contract."""

    def __init__(self, image_scale=8):
        if image_scale < 1:
            raise ValueError(f"image_scale must be >= 1, got {image_scale}")
        self.spec = toy_denoiser_spec()
        self.image_scale = int(image_scale)
        self.backend_id = self.spec.backend_id
        self.embed_dim = self.spec.embed_dim
        self.max_tokens = self.spec.max_tokens
        self.default_timesteps = self.spec.default_timesteps

    def encode_text(self, prompt):
        words = prompt.lower().split()
        if len(words) + 2 > self.max_tokens:
            raise PromptTooLongError(
                f"prompt encodes to {len(words) + 2} tokens, "
                f"backend limit is {self.max_tokens}")
        labels = (SOT_LABEL, *words, EOT_LABEL)
        rows = np.stack([token_embedding(t, self.embed_dim) for t in labels])
        return TokenEmbeddingMatrix(tokens=rows, token_labels=labels)

    def generate_with_trace(self, prompt, seed, num_timesteps=None):
        spec = self.spec
        steps = spec.default_timesteps if num_timesteps is None else int(num_timesteps)
        if steps < 1:
            raise ValueError(f"num_timesteps must be >= 1, got {num_timesteps}")
        self.encode_text(prompt)  # validates prompt length
        timesteps = tuple(range(1, steps + 1))

        queries = {}
        key_weights = {}
        self_attn = {}
        for block in spec.blocks:
            rows, cols = block.grid_shape(spec.latent_w, spec.latent_h)
            n_pix = rows * cols
            if block.kind == "cross":
                key_weights[block.block_id] = unit_stream(
                    f"kw:{block.block_id}",
                    block.heads * block.head_dim * spec.embed_dim,
                ).reshape(block.heads, block.head_dim, spec.embed_dim)
                for t in timesteps:
                    queries[(block.block_id, t)] = unit_stream(
                        f"q:{seed}:{block.block_id}:{t}",
                        n_pix * block.heads * block.head_dim,
                    ).reshape(n_pix, block.heads, block.head_dim)
            else:
                for t in timesteps:
                    logits = unit_stream(
                        f"sa:{seed}:{block.block_id}:{t}",
                        n_pix * n_pix * block.heads,
                    ).reshape(n_pix, n_pix, block.heads).astype(np.float64)
                    logits -= logits.max(axis=1, keepdims=True)
                    np.exp(logits, out=logits)
                    logits /= logits.sum(axis=1, keepdims=True)
                    self_attn[(block.block_id, t)] = logits.astype(np.float32)

        return DenoisingTrace(
            latent_w=spec.latent_w,
            latent_h=spec.latent_h,
            blocks=spec.blocks,
            queries=queries,
            key_weights=key_weights,
            self_attn=self_attn,
            image=self._decode_image(seed),
            seed=seed,
            timesteps=timesteps,
            prompt_text=prompt,
            embed_dim=spec.embed_dim,
            backend_id=spec.backend_id,
            metadata={"cfg_branch": "none"},
        )

    def _decode_image(self, seed):
        spec = self.spec
        out_h = spec.latent_h * self.image_scale
        out_w = spec.latent_w * self.image_scale
        base = unit_stream(f"img:{seed}", spec.latent_h * spec.latent_w * 3)
        base = (base.reshape(spec.latent_h, spec.latent_w, 3).astype(np.float64) + 1.0) / 2.0
        channels = [
            reference.resize_bilinear(base[:, :, c], out_h, out_w)
            for c in range(3)
        ]
        image = np.stack(channels, axis=2) * 255.0
        return np.clip(np.rint(image), 0, 255).astype(np.uint8)
