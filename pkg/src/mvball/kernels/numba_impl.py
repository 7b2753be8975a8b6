"""Numba-jitted kernel implementations (default backend)."""

from __future__ import annotations

import numpy as np
from numba import njit

from .common import canonical_labels, resize_coords


@njit(cache=True)
def _label_two_pass(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    parent = np.zeros(h * w + 2, dtype=np.int64)
    nxt = 1

    def find(parent, a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            best = 0
            # scanned neighbors: W, NW, N, NE
            for dy, dx in ((0, -1), (-1, -1), (-1, 0), (-1, 1)):
                ny, nx_ = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx_ < w and labels[ny, nx_] != 0:
                    r = find(parent, labels[ny, nx_])
                    if best == 0 or r < best:
                        best = r
            if best == 0:
                labels[y, x] = nxt
                parent[nxt] = nxt
                nxt += 1
            else:
                labels[y, x] = best
                for dy, dx in ((0, -1), (-1, -1), (-1, 0), (-1, 1)):
                    ny, nx_ = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx_ < w and labels[ny, nx_] != 0:
                        r = find(parent, labels[ny, nx_])
                        if r != best:
                            parent[r] = best
    for y in range(h):
        for x in range(w):
            if labels[y, x] != 0:
                labels[y, x] = find(parent, labels[y, x])
    return labels


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected two-pass union-find labeling; canonical 1..n output."""
    mask = np.ascontiguousarray(np.asarray(mask, dtype=bool))
    return canonical_labels(_label_two_pass(mask))


@njit(cache=True)
def _ncc_loops(image, t0, t_ss):
    th, tw = t0.shape
    h, w = image.shape
    oh, ow = h - th + 1, w - tw + 1
    out = np.zeros((oh, ow), dtype=np.float64)
    n = th * tw
    for y in range(oh):
        for x in range(ow):
            s1 = 0.0
            s2 = 0.0
            cross = 0.0
            for i in range(th):
                for j in range(tw):
                    p = image[y + i, x + j]
                    s1 += p
                    s2 += p * p
                    cross += p * t0[i, j]
            p_ss = s2 - s1 * s1 / n
            if p_ss < 0.0:
                p_ss = 0.0
            denom = np.sqrt(p_ss * t_ss)
            if denom > 1e-12:
                out[y, x] = cross / denom
    return out


def ncc_scan(image: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation score map (see numpy_impl.ncc_scan)."""
    image = np.ascontiguousarray(np.asarray(image, dtype=np.float64))
    template = np.asarray(template, dtype=np.float64)
    th, tw = template.shape
    h, w = image.shape
    if th > h or tw > w:
        return np.zeros((0, 0), dtype=np.float64)
    t0 = np.ascontiguousarray(template - template.mean())
    return _ncc_loops(image, t0, float(np.sum(t0 * t0)))


@njit(cache=True)
def _resize_loops(image, i0, i1, fy, j0, j1, fx):
    nh = i0.shape[0]
    nw = j0.shape[0]
    out = np.empty((nh, nw), dtype=np.float64)
    for y in range(nh):
        a, b, gy = i0[y], i1[y], fy[y]
        for x in range(nw):
            c, d, gx = j0[x], j1[x], fx[x]
            top = image[a, c] * (1 - gx) + image[a, d] * gx
            bot = image[b, c] * (1 - gx) + image[b, d] * gx
            out[y, x] = top * (1 - gy) + bot * gy
    return out


def resize_bilinear(image: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resample to (new_h, new_w); float64 output."""
    image = np.ascontiguousarray(np.asarray(image, dtype=np.float64))
    h, w = image.shape
    j0, j1, fx = resize_coords(w, new_w)
    i0, i1, fy = resize_coords(h, new_h)
    return _resize_loops(image, i0, i1, fy, j0, j1, fx)
