"""Pure numpy implementation of the numeric kernels.

This module is the reference semantics for the compiled extension in
``ovam.kernels._native``: both expose the same four functions and must agree
to float64 rounding. All kernels compute in float64 regardless of input dtype.

Conventions
-----------
* Attention weights are normalized over the *token* axis with a
  max-subtracted (numerically stable) softmax.
* Resizing is corner-aligned bilinear interpolation: output index ``i`` maps
  to source coordinate ``i * (src - 1) / (out - 1)``, or ``0.0`` when the
  output axis has a single sample. Resizing to the source shape is an exact
  copy, and constant maps stay constant.
"""
import math

import numpy as np

NAME = "python"


def attention_softmax(queries, keys, head_dim):
    """Per-pixel, per-head attention over tokens.

    Args:
      queries: array [n_pix, heads, head_dim].
      keys: array [n_tokens, heads, head_dim].
      head_dim: scaling dimension; logits are divided by sqrt(head_dim).

    Returns:
      float64 array [n_pix, heads, n_tokens]; each (pixel, head) row is a
      probability distribution over tokens.
    """
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    logits = np.einsum("phd,nhd->phn", q, k) / math.sqrt(head_dim)
    logits -= logits.max(axis=2, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=2, keepdims=True)
    return logits


def attention_grad_keys(queries, attn, grad_attn, head_dim):
    """Gradient of ``attention_softmax`` with respect to the keys.

    ``attn`` must be the forward output for ``queries`` and the keys being
    differentiated; ``grad_attn`` is the loss gradient at the output.
    Queries are treated as constants.

    Returns:
      float64 array [n_tokens, heads, head_dim].
    """
    q = np.asarray(queries, dtype=np.float64)
    a = np.asarray(attn, dtype=np.float64)
    da = np.asarray(grad_attn, dtype=np.float64)
    inner = np.sum(da * a, axis=2, keepdims=True)
    dz = a * (da - inner)
    return np.einsum("phn,phd->nhd", dz, q) / math.sqrt(head_dim)


def _axis_taps(src, out):
    """Interpolation taps for one axis: (low index, high index, high weight)."""
    if out == 1:
        lo = np.zeros(1, dtype=np.intp)
        return lo, lo.copy(), np.zeros(1, dtype=np.float64)
    pos = np.arange(out, dtype=np.float64) * ((src - 1) / (out - 1))
    lo = np.minimum(np.floor(pos).astype(np.intp), src - 1)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def resize_bilinear(src, out_h, out_w):
    """Corner-aligned bilinear resize of a 2-D map to (out_h, out_w)."""
    s = np.asarray(src, dtype=np.float64)
    ylo, yhi, wy = _axis_taps(s.shape[0], out_h)
    xlo, xhi, wx = _axis_taps(s.shape[1], out_w)
    top = s[ylo][:, xlo] * (1.0 - wx) + s[ylo][:, xhi] * wx
    bot = s[yhi][:, xlo] * (1.0 - wx) + s[yhi][:, xhi] * wx
    return top * (1.0 - wy)[:, None] + bot * wy[:, None]


def resize_bilinear_adjoint(grad, src_h, src_w):
    """Exact transpose of ``resize_bilinear``: scatter an output-grid
    gradient back onto the (src_h, src_w) source grid."""
    g = np.asarray(grad, dtype=np.float64)
    out_h, out_w = g.shape
    ylo, yhi, wy = _axis_taps(src_h, out_h)
    xlo, xhi, wx = _axis_taps(src_w, out_w)
    out = np.zeros((src_h, src_w), dtype=np.float64)
    for yi, yw in ((ylo, 1.0 - wy), (yhi, wy)):
        for xi, xw in ((xlo, 1.0 - wx), (xhi, wx)):
            np.add.at(out, (yi[:, None], xi[None, :]), g * (yw[:, None] * xw[None, :]))
    return out
