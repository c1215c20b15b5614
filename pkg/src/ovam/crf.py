"""Pluggable mask refiners.

``make_pseudo_mask`` accepts any object with ``refine(image, grid) -> grid``
(dims preserved). The built-in dense-CRF refiner runs brute-force mean field
with two Potts pairwise kernels, a spatial Gaussian and a bilateral
(color + space) one, using symmetric kernel normalization. Weights and
widths default to the values commonly shipped with dense-CRF packages
(spatial 3/3, bilateral 10/80/13, 5 iterations), which are tuned for
natural-image resolutions; pass scaled-down widths for small fixtures.

The brute-force pass materializes the full pixel-affinity matrix, so it is
capped at ``max_pixels``; beyond that the refiner logs a warning and returns
the mask unchanged, matching the identity fallback used when no refiner
backend is available.
"""
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class IdentityRefiner:
    """No-op refiner; keeps pipelines runnable without a CRF backend."""

    def refine(self, image, grid):
        return np.asarray(grid, dtype=bool)


@dataclass(frozen=True)
class CrfParams:
    gaussian_weight: float = 3.0
    gaussian_sxy: float = 3.0
    bilateral_weight: float = 10.0
    bilateral_sxy: float = 80.0
    bilateral_srgb: float = 13.0
    iterations: int = 5
    unary_confidence: float = 0.9
    max_pixels: int = 6400


def _squared_distances(features):
    # |a-b|^2 via the gram matrix: avoids the [n, n, dims] broadcast temporary
    sq = (features * features).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (features @ features.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _normalized_kernel(k):
    # Symmetric normalization K~ = D^-1/2 K D^-1/2 keeps message magnitudes
    # comparable across image sizes, like the reference implementations.
    degree = k.sum(axis=1)
    degree[degree <= 0] = 1.0
    inv_sqrt = 1.0 / np.sqrt(degree)
    return k * inv_sqrt[:, None] * inv_sqrt[None, :]


class DenseCrfRefiner:
    """Brute-force dense-CRF mean field for binary masks."""

    def __init__(self, params=None):
        self.params = params or CrfParams()

    def refine(self, image, grid):
        p = self.params
        image = np.asarray(image, dtype=np.float64)
        grid = np.asarray(grid, dtype=bool)
        h, w = grid.shape
        if image.shape[:2] != (h, w):
            raise ValueError(
                f"image dims {image.shape[:2]} do not match mask dims {(h, w)}")
        n = h * w
        if n > p.max_pixels:
            log.warning(
                "dense CRF skipped: %d pixels exceeds the brute-force cap %d; "
                "returning the mask unchanged", n, p.max_pixels)
            return grid
        if not grid.any() or grid.all():
            return grid  # nothing for pairwise terms to rebalance

        ys, xs = np.mgrid[0:h, 0:w]
        pos = np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.float64)
        col = image.reshape(n, -1)[:, :3].astype(np.float64)

        d2_pos = _squared_distances(pos)
        d2_col = _squared_distances(col)

        k_gauss = np.exp(-d2_pos / (2.0 * p.gaussian_sxy**2))
        np.fill_diagonal(k_gauss, 0.0)
        k_bilat = np.exp(-d2_pos / (2.0 * p.bilateral_sxy**2)
                         - d2_col / (2.0 * p.bilateral_srgb**2))
        np.fill_diagonal(k_bilat, 0.0)
        kernel = (p.gaussian_weight * _normalized_kernel(k_gauss)
                  + p.bilateral_weight * _normalized_kernel(k_bilat))

        fg_prob = np.where(grid.ravel(), p.unary_confidence, 1.0 - p.unary_confidence)
        unary = np.stack([-np.log(1.0 - fg_prob), -np.log(fg_prob)])  # [bg, fg]

        q = np.exp(-unary)
        q /= q.sum(axis=0, keepdims=True)
        for _ in range(p.iterations):
            message = kernel @ q.T  # [n, 2]
            # Potts: a label is penalized by support for the other label.
            energy = unary + message.T[::-1]
            energy -= energy.min(axis=0, keepdims=True)
            q = np.exp(-energy)
            q /= q.sum(axis=0, keepdims=True)
        return (q[1] > q[0]).reshape(h, w)


REFINERS = {
    "identity": IdentityRefiner,
    "dense": DenseCrfRefiner,
}


def get_refiner(name, **kwargs):
    try:
        factory = REFINERS[name]
    except KeyError:
        raise ValueError(f"unknown refiner {name!r}, available: {sorted(REFINERS)}")
    return factory(**kwargs) if kwargs else factory()
