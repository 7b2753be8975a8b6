"""Kernel throughput benchmark: numba backend vs the pure-numpy fallback.

Run through ``mvball bench``. The numba path is warmed up first so JIT
compilation is excluded from the timings.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .kernels import numpy_impl

__all__ = ["run_kernel_bench", "render_bench_table"]


def _blob_mask(h: int, w: int, n_blobs: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    mask = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_blobs):
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        r = rng.integers(2, 9)
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return mask


def _time(fn, *args, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def run_kernel_bench(repeats: int = 3, seed: int = 0) -> list[dict]:
    """Time each kernel on representative inputs with both backends.

    Returns rows {kernel, numpy_ms, numba_ms, speedup}; numba entries are
    None when the numba backend is unavailable or disabled.
    """
    rng = np.random.default_rng(seed)
    mask = _blob_mask(400, 640, 40, seed)
    image = rng.uniform(0, 255, size=(160, 160))
    template = (np.hypot(*np.mgrid[-6:7, -6:7]) <= 6).astype(np.float64)
    big = rng.uniform(0, 255, size=(800, 1280))

    cases = [
        ("label_components 640x400", lambda impl: impl.label_components(mask)),
        ("ncc_scan 160x160 / 13x13", lambda impl: impl.ncc_scan(image, template)),
        ("resize_bilinear 1280x800 -> 640x400", lambda impl: impl.resize_bilinear(big, 640, 400)),
    ]

    numba_impl = None
    if kernels.BACKEND == "numba":
        from .kernels import numba_impl as _nb

        numba_impl = _nb
        for _, call in cases:  # warm up the JIT
            call(numba_impl)

    rows = []
    for name, call in cases:
        np_ms = _time(lambda: call(numpy_impl), repeats=repeats)
        nb_ms = _time(lambda: call(numba_impl), repeats=repeats) if numba_impl else None
        rows.append(
            {
                "kernel": name,
                "numpy_ms": np_ms,
                "numba_ms": nb_ms,
                "speedup": (np_ms / nb_ms) if nb_ms else None,
            }
        )
    return rows


def render_bench_table(rows: list[dict]) -> str:
    lines = [
        f"kernel backend: {kernels.BACKEND}",
        f"{'kernel':<40} {'numpy ms':>10} {'numba ms':>10} {'speedup':>9}",
    ]
    for r in rows:
        nb = f"{r['numba_ms']:.3f}" if r["numba_ms"] is not None else "-"
        sp = f"{r['speedup']:.1f}x" if r["speedup"] is not None else "-"
        lines.append(f"{r['kernel']:<40} {r['numpy_ms']:>10.3f} {nb:>10} {sp:>9}")
    return "\n".join(lines) + "\n"
