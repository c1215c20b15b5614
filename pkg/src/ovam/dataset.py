"""Synthetic segmentation-dataset generation.

Builds (class, prompt, seed) jobs from a template or a caption file, runs
generation + pseudo-masking per job, and records everything in a manifest:
newline-delimited JSON entries plus a ``dataset.json`` summary. Runs are
resumable (existing ids are skipped) and deterministic for fixed seeds, so
two runs of the same configuration produce byte-identical outputs.

Output layout under ``out_dir``::

    images/<id>.png   masks/<id>.png + <id>.json   lists/train.txt
    manifest.ndjson   dataset.json
"""
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError
from .masks import make_pseudo_mask, save_mask
from .tokens import load_token_file
from .trace import TokenEmbeddingMatrix

log = logging.getLogger(__name__)

CLASSNAME_SLOT = "<classname>"
DEFAULT_TEMPLATE = "A photograph of a <classname>"
DROP_REASONS = ("clip_bottom", "area_low", "area_high", "none")


def normalize_template(template):
    """Accept the angle-bracket slot in ASCII or typographic form."""
    return template.replace("⟨classname⟩", CLASSNAME_SLOT)


@dataclass(frozen=True)
class PromptSource:
    """Where prompts come from: a slot template or a caption file."""

    kind: str = "template"  # "template" or "captions"
    template: str = DEFAULT_TEMPLATE
    caption_file: str | None = None
    classes: tuple = ()
    per_class_count: int = 1
    seed_base: int = 0
    synonyms: dict = field(default_factory=dict)  # class -> extra match words

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "template", normalize_template(self.template))
        if self.kind not in ("template", "captions"):
            raise ConfigurationError(f"kind must be template|captions, got {self.kind!r}")
        if self.kind == "template" and self.template.count(CLASSNAME_SLOT) != 1:
            raise ConfigurationError(
                f"template must contain exactly one {CLASSNAME_SLOT} slot: "
                f"{self.template!r}")
        if self.kind == "captions" and not self.caption_file:
            raise ConfigurationError("caption mode needs caption_file")
        if not self.classes:
            raise ConfigurationError("at least one class is required")
        if self.per_class_count < 1:
            raise ConfigurationError("per_class_count must be >= 1")


@dataclass(frozen=True)
class PromptJob:
    class_name: str
    prompt: str
    seed: int


def _matches_class(caption, class_name, synonyms):
    words = [class_name] + list(synonyms.get(class_name, ()))
    lowered = caption.lower()
    return any(re.search(rf"\b{re.escape(w.lower())}\b", lowered) for w in words)


def build_prompts(src):
    """Expand a PromptSource into concrete (class, prompt, seed) jobs.

    Seeds are assigned sequentially from ``seed_base`` in job order. In
    caption mode each class gets the captions mentioning it (or a registered
    synonym); classes with no matching caption are reported and skipped.
    """
    jobs = []
    seed = src.seed_base
    if src.kind == "template":
        for cls in src.classes:
            prompt = src.template.replace(CLASSNAME_SLOT, cls)
            for _ in range(src.per_class_count):
                jobs.append(PromptJob(cls, prompt, seed))
                seed += 1
        return jobs

    captions = []
    with open(src.caption_file, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                captions.append(json.loads(line)["caption"])
    for cls in src.classes:
        matched = [c for c in captions if _matches_class(c, cls, src.synonyms)]
        if not matched:
            log.warning("class %r matches no caption; skipped", cls)
            continue
        for caption in matched[: src.per_class_count]:
            jobs.append(PromptJob(cls, caption, seed))
            seed += 1
    return jobs


@dataclass
class ManifestEntry:
    id: str
    class_name: str
    prompt: str
    seed: int
    image_path: str
    mask_path: str
    area_fraction: float
    clip_score: float | None = None
    kept: bool = True
    drop_reason: str = "none"


@dataclass
class DatasetManifest:
    """Entries plus the filter history; failures are kept out of the entry
    list so ``kept == (drop_reason == "none")`` always holds."""

    entries: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    filters: list = field(default_factory=list)

    def kept_entries(self):
        return [e for e in self.entries if e.kept]

    def by_class(self):
        grouped = {}
        for e in self.entries:
            grouped.setdefault(e.class_name, []).append(e)
        return grouped

    def check_conservation(self):
        kept = sum(1 for e in self.entries if e.kept)
        dropped = sum(1 for e in self.entries if not e.kept)
        assert kept + dropped == len(self.entries)
        for e in self.entries:
            assert e.kept == (e.drop_reason == "none"), e

    def copy(self):
        return DatasetManifest(
            entries=[replace(e) for e in self.entries],
            failures=[dict(f) for f in self.failures],
            filters=[dict(f) for f in self.filters],
        )


def manifest_path(out_dir):
    return Path(out_dir) / "manifest.ndjson"


def _entry_line(entry):
    return json.dumps(asdict(entry), sort_keys=True)


def save_manifest(manifest, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [_entry_line(e) for e in manifest.entries]
    manifest_path(out_dir).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8")
    write_summary(manifest, out_dir)
    return manifest_path(out_dir)


def load_manifest(out_dir):
    path = manifest_path(out_dir)
    manifest = DatasetManifest()
    if path.is_file():
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                manifest.entries.append(ManifestEntry(**json.loads(line)))
    summary = Path(out_dir) / "dataset.json"
    if summary.is_file():
        data = json.loads(summary.read_text(encoding="utf-8"))
        manifest.filters = data.get("filters", [])
        manifest.failures = data.get("failures", [])
    return manifest


def write_summary(manifest, out_dir):
    counts = {}
    kept_counts = {}
    for e in manifest.entries:
        counts[e.class_name] = counts.get(e.class_name, 0) + 1
        if e.kept:
            kept_counts[e.class_name] = kept_counts.get(e.class_name, 0) + 1
    summary = {
        "total": len(manifest.entries),
        "kept": sum(1 for e in manifest.entries if e.kept),
        "per_class": counts,
        "kept_per_class": kept_counts,
        "filters": manifest.filters,
        "failures": manifest.failures,
    }
    path = Path(out_dir) / "dataset.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def write_lists(manifest, out_dir):
    lists_dir = Path(out_dir) / "lists"
    lists_dir.mkdir(parents=True, exist_ok=True)
    ids = [e.id for e in manifest.entries if e.kept]
    (lists_dir / "train.txt").write_text(
        "".join(i + "\n" for i in ids), encoding="utf-8")
    return lists_dir / "train.txt"


def class_token_indices(token_labels, class_name):
    """Row indices of the last contiguous run of the class words."""
    words = class_name.lower().split()
    labels = [str(lbl).lower() for lbl in token_labels]
    found = None
    for start in range(len(labels) - len(words) + 1):
        if labels[start:start + len(words)] == words:
            found = list(range(start, start + len(words)))
    if found is None:
        raise ConfigurationError(
            f"class {class_name!r} not present in tokens {token_labels}")
    return found


def resolve_class_tokens(backend, class_name, token_source, attribution_template):
    """Attribution tokens and channel indices for one class.

    token_source may be None / the class name (plain prompt attribution), a
    token-file path, or a TokenEmbeddingMatrix. Token files use channel 1
    (row 0 is the background row).
    """
    if isinstance(token_source, TokenEmbeddingMatrix):
        return token_source, [min(1, token_source.n_tokens - 1)]
    if token_source is None or str(token_source) == class_name:
        template = normalize_template(attribution_template)
        prompt = template.replace(CLASSNAME_SLOT, class_name)
        tokens = backend.encode_text(prompt)
        return tokens, class_token_indices(tokens.token_labels, class_name)
    matrix, _ = load_token_file(token_source)
    return matrix, [min(1, matrix.n_tokens - 1)]


def _run_job(backend, job, tokens, indices, params, out_dir, sel,
             num_timesteps, refiner):
    entry_id = f"{job.class_name.replace(' ', '_')}_{job.seed:06d}"
    trace = backend.generate_with_trace(job.prompt, job.seed, num_timesteps)
    image_rel = f"images/{entry_id}.png"
    mask_rel = f"masks/{entry_id}.png"
    image_path = Path(out_dir) / image_rel
    image_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(trace.image), mode="RGB").save(image_path)
    mask = make_pseudo_mask(trace, tokens, indices, params, sel=sel,
                            refiner=refiner, class_label=job.class_name)
    save_mask(mask, Path(out_dir) / mask_rel, params,
              extra={"prompt": job.prompt, "seed": job.seed})
    return ManifestEntry(
        id=entry_id,
        class_name=job.class_name,
        prompt=job.prompt,
        seed=job.seed,
        image_path=image_rel,
        mask_path=mask_rel,
        area_fraction=mask.area_fraction,
    )


def generate_dataset(backend, jobs, tokens_by_class, params, out_dir,
                     attribution_template=DEFAULT_TEMPLATE, sel=None,
                     num_timesteps=None, refiner=None, workers=1):
    """Generate images + pseudo-masks for every job and write the manifest.

    Existing manifest ids are skipped, so an interrupted run resumes to the
    same final state. Per-job failures are recorded under ``failures`` and do
    not stop the run. Entries land in job order regardless of worker count.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(out_dir)
    done = {e.id for e in manifest.entries}

    resolved = {}
    for job in jobs:
        if job.class_name not in resolved:
            resolved[job.class_name] = resolve_class_tokens(
                backend, job.class_name, tokens_by_class.get(job.class_name),
                attribution_template)

    pending = []
    for job in jobs:
        entry_id = f"{job.class_name.replace(' ', '_')}_{job.seed:06d}"
        if entry_id not in done:
            pending.append(job)

    def run(job):
        tokens, indices = resolved[job.class_name]
        return _run_job(backend, job, tokens, indices, params, out_dir, sel,
                        num_timesteps, refiner)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(job, pool.submit(run, job)) for job in pending]
            outcomes = [(job, fut) for job, fut in futures]
    else:
        outcomes = [(job, None) for job in pending]

    for job, fut in outcomes:
        try:
            entry = fut.result() if fut is not None else run(job)
            manifest.entries.append(entry)
        except Exception as exc:  # per-item failure: record and continue
            log.warning("generation failed for %s/%s: %s",
                        job.class_name, job.seed, exc)
            manifest.failures.append({
                "id": f"{job.class_name.replace(' ', '_')}_{job.seed:06d}",
                "class_name": job.class_name,
                "prompt": job.prompt,
                "seed": job.seed,
                "error": str(exc),
            })

    manifest.check_conservation()
    save_manifest(manifest, out_dir)
    write_lists(manifest, out_dir)
    return manifest
