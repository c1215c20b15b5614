"""Denoiser backends.

A backend wraps one text-to-image denoiser build and exports exactly what
attribution needs: token embeddings, per-(block, timestep) pixel queries,
key-projection weights and full-resolution self-attention. Value/query
projections, latents and the sampler itself stay inside the backend.

Two backends ship here: a deterministic toy denoiser (``toy``) sized for
tests, and the adapter contract for a Stable-Diffusion-class model
(``sd15``), which requires an external diffusion runtime.
"""
from abc import ABC, abstractmethod

from ..errors import BackendUnavailableError


class DenoiserBackend(ABC):
    """Capture contract every backend implements.

    Required behavior:
      * ``encode_text`` and ``generate_with_trace`` are deterministic for
        fixed inputs on a fixed backend build.
      * Traces contain queries for every cross block at every timestep, and
        self-attention only for blocks at full latent resolution.
      * If the denoiser applies classifier-free guidance, the adapter must
        choose one branch to capture and record it as
        ``trace.metadata["cfg_branch"]``.
    """

    backend_id: str
    embed_dim: int
    max_tokens: int
    default_timesteps: int

    @abstractmethod
    def encode_text(self, prompt):
        """Encode a prompt into one embedding row per tokenizer token,
        including the start-of-text and end-of-text markers."""

    @abstractmethod
    def generate_with_trace(self, prompt, seed, num_timesteps=None):
        """Run one generation and return the captured DenoisingTrace."""


_REGISTRY = {}


def register_backend(name, factory):
    _REGISTRY[name] = factory


def available_backends():
    return sorted(_REGISTRY)


def get_backend(name):
    """Instantiate a registered backend by id.

    Raises BackendUnavailableError for unknown ids or backends whose runtime
    dependencies are missing.
    """
    if isinstance(name, DenoiserBackend):
        return name
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise BackendUnavailableError(
            f"unknown backend {name!r}, available: {available_backends()}"
        ) from None
    return factory()


from . import toy as _toy  # noqa: E402  (registration import)
from . import sd as _sd  # noqa: E402

register_backend("toy", _toy.ToyDenoiser)
register_backend("sd15", _sd.StableDiffusionBackend)
