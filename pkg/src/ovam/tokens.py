"""Attribution-token utilities: initialization and the token-file format.

A token file is a directory holding ``token.json`` (label, embedding width,
backend id, training metadata) and ``token.f32`` (row-major little-endian
float32 rows). The CLI and the HTTP service both consume and produce it.
"""
import json
from pathlib import Path

import numpy as np

from .errors import TraceFormatError
from .trace import TokenEmbeddingMatrix

FORMAT = "ovam-token/1"


def init_attribution_tokens(classname, encoder):
    """Two-row starting point for optimization: [start-of-text, class].

    The start-of-text embedding seeds the background channel (it soaks up
    background attention); the class row is the classname's embedding, or the
    mean of its sub-token rows when the classname spans several tokens.
    """
    classname = classname.strip()
    if not classname:
        raise ValueError("classname must encode to at least one token")
    encoded = encoder.encode_text(classname)
    rows = np.asarray(encoded.tokens, dtype=np.float64)
    if rows.shape[0] < 3:
        raise ValueError(f"classname {classname!r} produced no tokens")
    class_row = rows[1:-1].mean(axis=0)
    return TokenEmbeddingMatrix(
        tokens=np.stack([rows[0], class_row]),
        token_labels=(encoded.token_labels[0], classname),
    )


def save_token_file(directory, matrix, backend_id, label, training=None):
    """Write a token directory; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = np.asarray(matrix.tokens)
    (directory / "token.f32").write_bytes(
        np.ascontiguousarray(rows, dtype="<f4").tobytes())
    meta = {
        "format": FORMAT,
        "label": label,
        "backend_id": backend_id,
        "embed_dim": int(rows.shape[1]),
        "n_tokens": int(rows.shape[0]),
        "token_labels": list(matrix.token_labels),
        "training": training or {},
    }
    if training and "best_loss" in training:
        meta["best_loss"] = training["best_loss"]
    with open(directory / "token.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_token_file(path):
    """Read a token directory (or its token.json); returns (matrix, meta)."""
    path = Path(path)
    if path.name == "token.json":
        path = path.parent
    meta_path = path / "token.json"
    if not meta_path.is_file():
        raise TraceFormatError(f"{path} has no token.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format") != FORMAT:
        raise TraceFormatError(f"unsupported token format {meta.get('format')!r}")
    data = np.frombuffer((path / "token.f32").read_bytes(), dtype="<f4")
    n, dim = meta["n_tokens"], meta["embed_dim"]
    if data.size != n * dim:
        raise TraceFormatError(
            f"token.f32 holds {data.size} values, expected {n * dim}")
    matrix = TokenEmbeddingMatrix(
        tokens=data.reshape(n, dim),
        token_labels=tuple(meta["token_labels"]),
    )
    return matrix, meta
