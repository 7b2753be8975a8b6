"""Shared helpers for the kernel backends."""

from __future__ import annotations

import numpy as np


def canonical_labels(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Renumber component labels to 1..n in raster order of first pixel.

    Both backends run this so their outputs are bit-identical regardless
    of how provisional labels were assigned.
    """
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    if nz.size == 0:
        return labels.astype(np.int32), 0
    first_seen, order = np.unique(flat[nz], return_index=True)
    # order of first appearance in raster scan
    rank = np.argsort(np.argsort(order))
    remap = np.zeros(int(first_seen.max()) + 1, dtype=np.int32)
    remap[first_seen] = rank.astype(np.int32) + 1
    out = np.zeros_like(flat, dtype=np.int32)
    out[nz] = remap[flat[nz]]
    return out.reshape(labels.shape), int(first_seen.size)


def resize_coords(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear source coordinates for one axis (pixel-center alignment).

    Maps destination pixel d to source coordinate (d + 0.5) * scale - 0.5,
    clamped to the valid range. Returns (i0, i1, frac).
    """
    scale = n_src / n_dst
    x = (np.arange(n_dst, dtype=np.float64) + 0.5) * scale - 0.5
    x = np.clip(x, 0.0, n_src - 1.0)
    i0 = np.floor(x).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, x - i0
