"""Pure-numpy kernel implementations (fallback backend)."""

from __future__ import annotations

import numpy as np

from .common import canonical_labels, resize_coords


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labeling by iterative minimum propagation.

    Returns (labels int32 of mask shape, component count); labels are
    1..n in raster order of each component's first pixel, 0 = background.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.where(mask, np.arange(1, h * w + 1, dtype=np.int64).reshape(h, w), 0)
    big = np.iinfo(np.int64).max
    while True:
        padded = np.full((h + 2, w + 2), big, dtype=np.int64)
        padded[1:-1, 1:-1] = np.where(mask, labels, big)
        neigh = np.minimum.reduce(
            [
                padded[0:-2, 0:-2], padded[0:-2, 1:-1], padded[0:-2, 2:],
                padded[1:-1, 0:-2], padded[1:-1, 1:-1], padded[1:-1, 2:],
                padded[2:, 0:-2], padded[2:, 1:-1], padded[2:, 2:],
            ]
        )
        new = np.where(mask, neigh, 0)
        if np.array_equal(new, labels):
            break
        labels = new
    return canonical_labels(labels)


def ncc_scan(image: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation score map over all template placements.

    score[y, x] = sum((P - mean P)(T - mean T)) / sqrt(var P * var T) for
    the window P at (y, x); windows or templates with ~zero variance score 0.
    Output shape: (h - th + 1, w - tw + 1).
    """
    image = np.asarray(image, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    th, tw = template.shape
    h, w = image.shape
    if th > h or tw > w:
        return np.zeros((0, 0), dtype=np.float64)
    n = th * tw
    t0 = template - template.mean()
    t_ss = float(np.sum(t0 * t0))

    windows = np.lib.stride_tricks.sliding_window_view(image, (th, tw))
    cross = np.einsum("ijkl,kl->ij", windows, t0, optimize=True)
    s1 = np.einsum("ijkl->ij", windows, optimize=True)
    s2 = np.einsum("ijkl,ijkl->ij", windows, windows, optimize=True)
    p_ss = s2 - s1 * s1 / n

    denom = np.sqrt(np.maximum(p_ss, 0.0) * t_ss)
    out = np.zeros_like(cross)
    good = denom > 1e-12
    out[good] = cross[good] / denom[good]
    return out


def resize_bilinear(image: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resample to (new_h, new_w); float64 output."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    j0, j1, fx = resize_coords(w, new_w)
    i0, i1, fy = resize_coords(h, new_h)
    fx = fx[None, :]
    fy = fy[:, None]
    top = image[np.ix_(i0, j0)] * (1 - fx) + image[np.ix_(i0, j1)] * fx
    bot = image[np.ix_(i1, j0)] * (1 - fx) + image[np.ix_(i1, j1)] * fx
    return top * (1 - fy) + bot * fy
