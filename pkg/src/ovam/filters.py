"""Dataset quality filters.

Two filters run after generation, in a fixed order recorded in the manifest:
an image-text similarity cut that drops the lowest-scoring fraction of each
class, then an area cut that drops masks covering almost nothing or almost
everything. Filters are pure: they return an updated copy of the manifest
and never touch files.
"""
import math
from pathlib import Path

from .dataset import DEFAULT_TEMPLATE, CLASSNAME_SLOT, normalize_template
from .errors import ScorerUnavailableError

DEFAULT_KEEP_FRACTION = 0.7
DEFAULT_AREA_LOW = 0.05
DEFAULT_AREA_HIGH = 0.95


class CallableScorer:
    """Adapter turning any ``f(image_path, text) -> float`` into a scorer."""

    def __init__(self, fn):
        self._fn = fn

    def score(self, image_path, text):
        return float(self._fn(image_path, text))


class ClipSimilarityScorer:
    """Cosine similarity between image and text embeddings of a CLIP model.

    Loads lazily through sentence-transformers; construction fails with
    ScorerUnavailableError when the runtime or weights are missing.
    """

    def __init__(self, model_name="clip-ViT-B-32"):
        try:
            from PIL import Image
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ScorerUnavailableError(
                f"CLIP scoring needs sentence-transformers: {exc}") from exc
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as exc:
            raise ScorerUnavailableError(
                f"could not load CLIP model {model_name!r}: {exc}") from exc
        self._image_cls = Image

    def score(self, image_path, text):
        import numpy as np

        with self._image_cls.open(image_path) as img:
            image_vec = self._model.encode([img.convert("RGB")])[0]
        text_vec = self._model.encode([text])[0]
        denom = (np.linalg.norm(image_vec) * np.linalg.norm(text_vec)) or 1.0
        return float(np.dot(image_vec, text_vec) / denom)


def clip_filter(manifest, scorer, keep_fraction=DEFAULT_KEEP_FRACTION,
                prompt_template=DEFAULT_TEMPLATE, root=None):
    """Drop the lowest-scoring floor((1 - keep_fraction) * n) entries per class.

    Every currently-kept entry is scored against the templated class text.
    Ties break toward dropping lower ids. Refuses to run without a scorer so
    a misconfigured pipeline can never silently keep everything.
    """
    if scorer is None:
        raise ScorerUnavailableError("clip_filter needs a configured scorer")
    if not 0 <= keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in [0, 1], got {keep_fraction}")
    template = normalize_template(prompt_template)
    root = Path(root) if root is not None else None

    # Rank over the full per-class population, not just surviving entries,
    # so the kept-set does not depend on which filter ran first; an entry
    # keeps the reason of whichever filter dropped it first.
    result = manifest.copy()
    by_class = {}
    for entry in result.entries:
        text = template.replace(CLASSNAME_SLOT, entry.class_name)
        path = entry.image_path if root is None else root / entry.image_path
        entry.clip_score = float(scorer.score(path, text))
        by_class.setdefault(entry.class_name, []).append(entry)

    for entries in by_class.values():
        n_drop = math.floor((1.0 - keep_fraction) * len(entries))
        ranked = sorted(entries, key=lambda e: (e.clip_score, e.id))
        for entry in ranked[:n_drop]:
            if entry.kept:
                entry.kept = False
                entry.drop_reason = "clip_bottom"

    result.filters.append({
        "kind": "clip",
        "keep_fraction": keep_fraction,
        "prompt_template": template,
    })
    result.check_conservation()
    return result


def area_filter(manifest, low=DEFAULT_AREA_LOW, high=DEFAULT_AREA_HIGH):
    """Drop kept entries whose mask area is outside the closed [low, high].

    Boundary values survive: the cut is strictly-less / strictly-greater.
    """
    if not 0 <= low <= high <= 1:
        raise ValueError(f"need 0 <= low <= high <= 1, got {low}, {high}")
    result = manifest.copy()
    for entry in result.entries:
        if not entry.kept:
            continue  # first drop reason wins; kept-set stays order-free
        if entry.area_fraction < low:
            entry.kept = False
            entry.drop_reason = "area_low"
        elif entry.area_fraction > high:
            entry.kept = False
            entry.drop_reason = "area_high"
    result.filters.append({"kind": "area", "low": low, "high": high})
    result.check_conservation()
    return result
