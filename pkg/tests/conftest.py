import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from ovam.backends.toy import ToyDenoiser
from ovam.trace import BlockSpec, DenoisingTrace

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def backend():
    return ToyDenoiser()


@pytest.fixture(scope="session")
def trace0(backend):
    return backend.generate_with_trace("A photograph of a dog", seed=0)


@pytest.fixture(scope="session")
def tokens_dog(backend):
    return backend.encode_text("A photograph of a dog")


def build_custom_trace(latent_w=4, latent_h=4, image_scale=4, heads=2,
                       head_dim=3, embed_dim=5, timesteps=(1, 2), seed=0,
                       with_self=True, query_scale=1.0):
    """Hand-built trace for resolution- and shape-sensitive tests."""
    rng = np.random.default_rng(seed)
    blocks = [BlockSpec("c1", 1, heads, head_dim, "cross"),
              BlockSpec("c2", 2, heads, head_dim, "cross")]
    if with_self:
        blocks.append(BlockSpec("s1", 1, heads, head_dim, "self"))
    queries = {}
    key_weights = {}
    self_attn = {}
    n_full = latent_w * latent_h
    for b in blocks:
        rows, cols = b.grid_shape(latent_w, latent_h)
        if b.kind == "cross":
            key_weights[b.block_id] = rng.normal(
                size=(heads, head_dim, embed_dim)).astype(np.float32)
            for t in timesteps:
                queries[(b.block_id, t)] = (query_scale * rng.normal(
                    size=(rows * cols, heads, head_dim))).astype(np.float64)
        else:
            for t in timesteps:
                logits = rng.normal(size=(n_full, n_full, heads))
                logits -= logits.max(axis=1, keepdims=True)
                e = np.exp(logits)
                self_attn[(b.block_id, t)] = (
                    e / e.sum(axis=1, keepdims=True)).astype(np.float32)
    image = rng.integers(
        0, 256, size=(latent_h * image_scale, latent_w * image_scale, 3),
        dtype=np.uint8)
    return DenoisingTrace(
        latent_w=latent_w, latent_h=latent_h, blocks=tuple(blocks),
        queries=queries, key_weights=key_weights, self_attn=self_attn,
        image=image, seed=seed, timesteps=tuple(timesteps),
        prompt_text="custom", embed_dim=embed_dim, backend_id="custom",
    )


@pytest.fixture
def custom_trace():
    return build_custom_trace()
