"""Adapter contract for a Stable-Diffusion-class denoiser.

This module pins down what a real adapter must export so traces stay
interchangeable with the toy backend:

  * ``embed_dim`` 768 (CLIP ViT-L/14 text encoder), ``max_tokens`` 77,
    30 denoising steps by default;
  * one cross BlockSpec per UNet cross-attention resolution. For the 1.5-era
    UNet at 512x512 this means grids of 64, 32 and 16 (reductions 1, 2, 4
    against the 64x64 latent), 8 heads each;
  * per-block key-projection weights taken from the ``to_k`` linear layers,
    reshaped to [heads, head_dim, 768], so attribution prompts can be
    projected after generation without rerunning diffusion;
  * self-attention captured only at full latent resolution, aggregated to
    [H*W, H*W, heads] per (block, timestep);
  * with classifier-free guidance enabled the adapter captures the
    text-conditional branch and records ``metadata["cfg_branch"]``.

The adapter needs a GPU diffusion runtime (torch + diffusers) that this
package does not depend on; constructing it without one raises
BackendUnavailableError.
"""
from importlib import util as _importlib_util

from ..errors import BackendUnavailableError
from . import DenoiserBackend

REQUIRED_MODULES = ("torch", "diffusers")
DEFAULT_MODEL_ID = "runwayml/stable-diffusion-v1-5"


def runtime_missing():
    """Names of required modules that are not importable."""
    return tuple(m for m in REQUIRED_MODULES if _importlib_util.find_spec(m) is None)


class StableDiffusionBackend(DenoiserBackend):
    """Contract stub; instantiation requires the diffusion runtime."""

    backend_id = "sd15"
    embed_dim = 768
    max_tokens = 77
    default_timesteps = 30

    def __init__(self, model_id=DEFAULT_MODEL_ID):
        missing = runtime_missing()
        if missing:
            raise BackendUnavailableError(
                f"backend 'sd15' needs {', '.join(missing)}; install a GPU "
                "diffusion runtime or use the 'toy' backend")
        raise BackendUnavailableError(
            f"no adapter wired for {model_id!r}; implement DenoiserBackend "
            "against the capture contract in this module")

    def encode_text(self, prompt):
        raise NotImplementedError

    def generate_with_trace(self, prompt, seed, num_timesteps=None):
        raise NotImplementedError
