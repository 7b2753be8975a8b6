"""Grayscale frame operations and background-difference ROI proposal.

Frames are uint8 numpy arrays of shape (height, width), row-major,
intensities 0..255. Frames travel on disk as binary PGM (P5, maxval
255) named ``CxxxFxxxx.pgm`` — camera id 3-digit, frame number 4-digit
zero-padded. Each camera's background frame is the file whose frame
field equals the designated background index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .court import box_intersects_polygon

__all__ = [
    "PrefilterError",
    "DimensionMismatch",
    "RoiBox",
    "box_iou",
    "resize",
    "equalize_histogram",
    "BackgroundModel",
    "background_observe",
    "foreground_mask",
    "propose_rois",
    "read_pgm",
    "write_pgm",
    "frame_filename",
    "parse_frame_filename",
]

VAR_EPS = 1.0  # intensity^2 guard against zero variance


class PrefilterError(ValueError):
    pass


class DimensionMismatch(PrefilterError):
    """Frame dimensions do not match the background model."""


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned integer pixel box; (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise PrefilterError(f"box must have positive size, got {self}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def clipped(self, width: int, height: int) -> "RoiBox | None":
        """Intersection with the image rectangle, or None if empty."""
        x0 = max(self.x, 0)
        y0 = max(self.y, 0)
        x1 = min(self.x2, width)
        y1 = min(self.y2, height)
        if x1 <= x0 or y1 <= y0:
            return None
        return RoiBox(x0, y0, x1 - x0, y1 - y0)


def box_iou(a: RoiBox, b: RoiBox) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / float(a.area + b.area - inter)


def _check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise PrefilterError(f"frame must be 2-D, got shape {frame.shape}")
    return frame


def resize(frame: np.ndarray, new_width: int, new_height: int) -> np.ndarray:
    """Bilinear resize to (new_height, new_width); returns uint8."""
    if new_width <= 0 or new_height <= 0:
        raise PrefilterError("resize dimensions must be positive")
    out = kernels.resize_bilinear(_check_frame(frame), new_width, new_height)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def equalize_histogram(frame: np.ndarray) -> np.ndarray:
    """Classic CDF remap: out = round(255 * (cdf(p) - cdf_min) / (N - cdf_min)).

    A constant frame is returned unchanged (degenerate CDF).
    """
    frame = _check_frame(frame).astype(np.uint8)
    hist = np.bincount(frame.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = frame.size
    cdf_min = cdf[np.nonzero(hist)[0][0]]
    if cdf_min == n:
        return frame.copy()
    lut = np.rint(255.0 * (cdf - cdf_min) / (n - cdf_min)).clip(0, 255).astype(np.uint8)
    return lut[frame]


@dataclass
class BackgroundModel:
    """Per-pixel running Gaussian background (single adaptive component).

    Single-writer: frames must be observed in temporal order. The model is
    re-seeded from the incoming frame every ``refresh_period`` observations.
    """

    mean: np.ndarray  # float64 (h, w)
    variance: np.ndarray  # float64 (h, w), >= 0
    frames_seen: int = 0
    refresh_period: int = 200
    alpha: float = 0.02

    @classmethod
    def from_frame(cls, frame: np.ndarray, refresh_period: int = 200, alpha: float = 0.02) -> "BackgroundModel":
        frame = _check_frame(frame)
        return cls(
            mean=frame.astype(np.float64),
            variance=np.zeros(frame.shape, dtype=np.float64),
            frames_seen=0,
            refresh_period=refresh_period,
            alpha=alpha,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape


def background_observe(model: BackgroundModel, frame: np.ndarray) -> BackgroundModel:
    """Fold one frame into the model (in place; the model is returned).

    Exponential update with rate alpha:

        mean'     = (1 - a) * mean + a * frame
        variance' = (1 - a) * variance + a * (frame - mean)^2

    On the observation that completes a refresh period the model is
    re-seeded: mean = frame, variance = 0, counter back to 0.
    """
    frame = _check_frame(frame)
    if frame.shape != model.shape:
        raise DimensionMismatch(f"frame {frame.shape} vs model {model.shape}")
    model.frames_seen += 1
    if model.frames_seen >= model.refresh_period:
        model.mean = frame.astype(np.float64)
        model.variance = np.zeros(frame.shape, dtype=np.float64)
        model.frames_seen = 0
        return model
    f = frame.astype(np.float64)
    a = model.alpha
    diff = f - model.mean
    model.mean += a * diff
    model.variance = (1.0 - a) * model.variance + a * diff * diff
    return model


def foreground_mask(model: BackgroundModel, frame: np.ndarray, k_sigma: float = 3.0) -> np.ndarray:
    """Boolean mask of pixels deviating more than k_sigma standard
    deviations from the background mean (variance floored by VAR_EPS)."""
    frame = _check_frame(frame)
    if frame.shape != model.shape:
        raise DimensionMismatch(f"frame {frame.shape} vs model {model.shape}")
    dev = np.abs(frame.astype(np.float64) - model.mean)
    return dev > k_sigma * np.sqrt(model.variance + VAR_EPS)


def propose_rois(
    mask: np.ndarray,
    court_mask_polygon: np.ndarray | None = None,
    min_area: int = 9,
    pad: int = 8,
) -> list[RoiBox]:
    """Bounding boxes of 8-connected mask components, padded and filtered.

    Components smaller than ``min_area`` pixels are dropped; boxes are
    padded by ``pad`` px, clipped to the image, and (when a court polygon
    is given) required to intersect it. Sorted by component area
    descending, ties by (x, y).
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels, n = kernels.label_components(mask)
    if n == 0:
        return []
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    comp = flat[nz] - 1
    areas = np.bincount(comp, minlength=n)
    ys, xs = np.unravel_index(nz, (h, w))
    x_min = np.full(n, w, dtype=np.int64)
    x_max = np.full(n, -1, dtype=np.int64)
    y_min = np.full(n, h, dtype=np.int64)
    y_max = np.full(n, -1, dtype=np.int64)
    np.minimum.at(x_min, comp, xs)
    np.maximum.at(x_max, comp, xs)
    np.minimum.at(y_min, comp, ys)
    np.maximum.at(y_max, comp, ys)

    out: list[tuple[int, RoiBox]] = []
    for i in range(n):
        if areas[i] < min_area:
            continue
        box = RoiBox(
            int(x_min[i] - pad),
            int(y_min[i] - pad),
            int(x_max[i] - x_min[i] + 1 + 2 * pad),
            int(y_max[i] - y_min[i] + 1 + 2 * pad),
        ).clipped(w, h)
        if box is None:
            continue
        if court_mask_polygon is not None and not box_intersects_polygon(
            box.x, box.y, box.w, box.h, court_mask_polygon
        ):
            continue
        out.append((int(areas[i]), box))
    out.sort(key=lambda t: (-t[0], t[1].x, t[1].y))
    return [b for _, b in out]


# ---------------------------------------------------------------------------
# PGM I/O and frame naming

_FRAME_RE = re.compile(r"^C(\d{3})F(\d{4})\.pgm$")


def frame_filename(cam_id: int, frame_no: int) -> str:
    return f"C{cam_id:03d}F{frame_no:04d}.pgm"


def parse_frame_filename(name: str) -> tuple[int, int]:
    m = _FRAME_RE.match(name)
    if not m:
        raise PrefilterError(f"not a frame filename: {name!r}")
    return int(m.group(1)), int(m.group(2))


def write_pgm(path, frame: np.ndarray) -> None:
    frame = _check_frame(frame).astype(np.uint8)
    h, w = frame.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(frame.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise PrefilterError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval — whitespace separated, '#' comments
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    i += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise PrefilterError(f"{path}: expected maxval 255, got {maxval}")
    pixels = np.frombuffer(data[i : i + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise PrefilterError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).copy()
