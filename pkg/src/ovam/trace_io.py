"""Trace directories: ``trace.json`` + raw float32 arrays + ``image.png``.

Layout of a trace directory::

    trace.json            metadata and the shape of every array
    q_<block>_<t>.f32     queries, row-major little-endian float32
    kw_<block>.f32        key-projection weights
    sa_<block>_<t>.f32    self-attention (full-resolution blocks only)
    image.png             decoded RGB image

Persisted traces let the optimizer and mask pipeline run without a live
denoiser.
"""
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import TraceFormatError
from .trace import BlockSpec, DenoisingTrace

FORMAT = "ovam-trace/1"


def _write_f32(path, arr):
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_f32(path, shape):
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise TraceFormatError(
            f"{path.name}: {data.size} values on disk, shape {shape} needs {expected}")
    return data.reshape(shape)


def save_trace(trace, directory):
    """Write a trace to a directory; returns the directory path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {}

    def emit(name, arr):
        arrays[name] = {"file": f"{name}.f32", "shape": list(arr.shape)}
        _write_f32(directory / f"{name}.f32", arr)

    for (block_id, t), q in sorted(trace.queries.items()):
        emit(f"q_{block_id}_{t}", q)
    for block_id, w in sorted(trace.key_weights.items()):
        emit(f"kw_{block_id}", w)
    for (block_id, t), sa in sorted(trace.self_attn.items()):
        emit(f"sa_{block_id}_{t}", sa)

    Image.fromarray(trace.image, mode="RGB").save(directory / "image.png")

    meta = {
        "format": FORMAT,
        "backend_id": trace.backend_id,
        "prompt": trace.prompt_text,
        "seed": trace.seed,
        "latent_w": trace.latent_w,
        "latent_h": trace.latent_h,
        "image_w": trace.image_w,
        "image_h": trace.image_h,
        "embed_dim": trace.embed_dim,
        "timesteps": list(trace.timesteps),
        "dtype": "float32",
        "endianness": "little",
        "metadata": trace.metadata,
        "blocks": [
            {
                "block_id": b.block_id,
                "kind": b.kind,
                "reduction": b.reduction,
                "heads": b.heads,
                "head_dim": b.head_dim,
            }
            for b in trace.blocks
        ],
        "arrays": arrays,
    }
    with open(directory / "trace.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_trace(directory):
    """Read a trace directory written by :func:`save_trace`."""
    directory = Path(directory)
    meta_path = directory / "trace.json"
    if not meta_path.is_file():
        raise TraceFormatError(f"{directory} has no trace.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format") != FORMAT:
        raise TraceFormatError(f"unsupported trace format {meta.get('format')!r}")

    blocks = tuple(
        BlockSpec(b["block_id"], b["reduction"], b["heads"], b["head_dim"], b["kind"])
        for b in meta["blocks"]
    )
    arrays = meta["arrays"]

    def read(name):
        entry = arrays[name]
        return _read_f32(directory / entry["file"], entry["shape"])

    queries = {}
    key_weights = {}
    self_attn = {}
    timesteps = tuple(meta["timesteps"])
    for b in blocks:
        if b.kind == "cross":
            key_weights[b.block_id] = read(f"kw_{b.block_id}")
            for t in timesteps:
                queries[(b.block_id, t)] = read(f"q_{b.block_id}_{t}")
        else:
            for t in timesteps:
                name = f"sa_{b.block_id}_{t}"
                if name in arrays:
                    self_attn[(b.block_id, t)] = read(name)

    image = np.asarray(Image.open(directory / "image.png").convert("RGB"))
    return DenoisingTrace(
        latent_w=meta["latent_w"],
        latent_h=meta["latent_h"],
        blocks=blocks,
        queries=queries,
        key_weights=key_weights,
        self_attn=self_attn,
        image=image,
        seed=meta["seed"],
        timesteps=timesteps,
        prompt_text=meta["prompt"],
        embed_dim=meta["embed_dim"],
        backend_id=meta["backend_id"],
        metadata=meta.get("metadata", {}),
    )
