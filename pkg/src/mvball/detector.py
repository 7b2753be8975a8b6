"""2D ball-detector contract and two reference implementations.

A detector is anything with

    detect(frame, rois, *, camera_id=None, frame_no=None) -> list[Detection]

where returned boxes intersect the union of the input ROIs and
confidences are in [0, 1]. ``TemplateDiscDetector`` matches bright-disc
templates by normalized cross-correlation (a stand-in for a learned
detector — downstream code only depends on the contract).
``OracleDetector`` replays ground truth through a configurable noise
model for closed-loop simulation; its randomness comes from one seeded
generator per camera stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .prefilter import RoiBox, box_iou

__all__ = [
    "Detection",
    "DetectorConfig",
    "NoiseModel",
    "nms",
    "best_detection",
    "disc_template",
    "disc_template_detect",
    "TemplateDiscDetector",
    "oracle_detect",
    "OracleDetector",
]


@dataclass(frozen=True)
class Detection:
    box: RoiBox
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class DetectorConfig:
    det_conf: float = 0.9  # confidence threshold
    iou_thd: float = 0.2  # suppression overlap threshold
    input_size: int = 160  # detector window side, px

    def __post_init__(self):
        if not (0.0 <= self.det_conf <= 1.0 and 0.0 <= self.iou_thd <= 1.0):
            raise ValueError("thresholds must be in [0, 1]")
        if self.input_size <= 0:
            raise ValueError("input_size must be positive")


@dataclass(frozen=True)
class NoiseModel:
    """Perturbation model for the oracle detector."""

    sigma_px: float = 0.0  # Gaussian jitter of the true box center
    p_miss: float = 0.0  # probability of dropping the true detection
    lambda_fp: float = 0.0  # Poisson rate of false positives per call
    fp_conf: tuple[float, float] = (0.9, 0.999)  # FP confidence range, below the true 1.0


def _det_order(d: Detection):
    # confidence descending, then smaller area, then lower x, then lower y
    return (-d.confidence, d.box.area, d.box.x, d.box.y)


def nms(detections: list[Detection], iou_thd: float) -> list[Detection]:
    """Greedy non-maximum suppression with deterministic tie-breaking."""
    kept: list[Detection] = []
    for det in sorted(detections, key=_det_order):
        if all(box_iou(det.box, k.box) <= iou_thd for k in kept):
            kept.append(det)
    return kept


def best_detection(detections: list[Detection], det_conf: float) -> Detection | None:
    """Highest-confidence detection at or above the threshold, or None."""
    eligible = [d for d in detections if d.confidence >= det_conf]
    if not eligible:
        return None
    return min(eligible, key=_det_order)


# ---------------------------------------------------------------------------
# Disc-template matcher

def disc_template(radius: int) -> np.ndarray:
    """Bright disc of the given pixel radius on a dark square, side 2r+1.

    Rim cells carry fractional coverage so the correlation stays high for
    discs rendered at subpixel centers.
    """
    side = 2 * radius + 1
    yy, xx = np.mgrid[0:side, 0:side]
    dist = np.hypot(yy - radius, xx - radius)
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def disc_template_detect(
    frame: np.ndarray,
    rois: list[RoiBox],
    config: DetectorConfig = DetectorConfig(),
    radius_range: tuple[int, int] = (3, 8),
) -> list[Detection]:
    """Scan each ROI with disc templates over the radius range.

    The best NCC peak per (ROI, radius) above det_conf becomes a
    Detection whose confidence is the correlation score clamped to
    [0, 1]; overlapping candidates are merged by NMS.
    """
    frame = np.asarray(frame)
    h, w = frame.shape
    candidates: list[Detection] = []
    for roi in rois:
        clipped = roi.clipped(w, h)
        if clipped is None:
            continue
        patch = frame[clipped.y : clipped.y2, clipped.x : clipped.x2].astype(np.float64)
        for radius in range(radius_range[0], radius_range[1] + 1):
            tmpl = disc_template(radius)
            scores = kernels.ncc_scan(patch, tmpl)
            if scores.size == 0:
                continue
            peak = np.unravel_index(np.argmax(scores), scores.shape)
            score = float(scores[peak])
            if score < config.det_conf:
                continue
            side = 2 * radius + 1
            box = RoiBox(clipped.x + int(peak[1]), clipped.y + int(peak[0]), side, side)
            candidates.append(Detection(box, min(max(score, 0.0), 1.0)))
    return nms(candidates, config.iou_thd)


class TemplateDiscDetector:
    """Detector-contract wrapper around disc_template_detect."""

    needs_frames = True

    def __init__(self, config: DetectorConfig = DetectorConfig(), radius_range: tuple[int, int] = (3, 8)):
        self.config = config
        self.radius_range = radius_range

    def detect(self, frame, rois, *, camera_id=None, frame_no=None) -> list[Detection]:
        if frame is None:
            raise ValueError("template detector requires pixel frames")
        return disc_template_detect(frame, rois, self.config, self.radius_range)


# ---------------------------------------------------------------------------
# Oracle detector

def _overlap(a: RoiBox, b: RoiBox) -> bool:
    return min(a.x2, b.x2) > max(a.x, b.x) and min(a.y2, b.y2) > max(a.y, b.y)


def _boxes_union_intersects(box: RoiBox, rois: list[RoiBox]) -> bool:
    return any(_overlap(box, r) for r in rois)


def oracle_detect(
    ground_truth_px: RoiBox | None,
    noise: NoiseModel,
    rois: list[RoiBox],
    rng: np.random.Generator,
    occluded: bool = False,
) -> list[Detection]:
    """Emit the true box through the noise model, plus false positives.

    The true box center is jittered by Gaussian noise sigma_px and the
    detection is dropped with probability p_miss (always dropped when the
    truth is occluded). Poisson(lambda_fp) false positives land uniformly
    in the ROIs with confidences drawn below the true detection's 1.0.
    """
    out: list[Detection] = []
    if ground_truth_px is not None and not occluded:
        dropped = noise.p_miss > 0.0 and rng.random() < noise.p_miss
        if not dropped:
            cx, cy = ground_truth_px.center()
            if noise.sigma_px > 0.0:
                jitter = rng.normal(0.0, noise.sigma_px, size=2)
                cx, cy = cx + jitter[0], cy + jitter[1]
            box = RoiBox(
                int(round(cx - ground_truth_px.w / 2.0)),
                int(round(cy - ground_truth_px.h / 2.0)),
                ground_truth_px.w,
                ground_truth_px.h,
            )
            if _boxes_union_intersects(box, rois):
                out.append(Detection(box, 1.0))
    if noise.lambda_fp > 0.0 and rois:
        n_fp = rng.poisson(noise.lambda_fp)
        fw = ground_truth_px.w if ground_truth_px is not None else 9
        fh = ground_truth_px.h if ground_truth_px is not None else 9
        for _ in range(int(n_fp)):
            roi = rois[int(rng.integers(len(rois)))]
            x = int(rng.integers(roi.x, max(roi.x + 1, roi.x2 - fw + 1)))
            y = int(rng.integers(roi.y, max(roi.y + 1, roi.y2 - fh + 1)))
            conf = float(rng.uniform(noise.fp_conf[0], noise.fp_conf[1]))
            out.append(Detection(RoiBox(x, y, fw, fh), conf))
    return out


class OracleDetector:
    """Contract adapter replaying per-camera ground truth through a noise model.

    ``truth`` maps (camera_id, frame_no) to (box | None, visible_flag);
    vis = 0 marks the truth as occluded for that camera. One RNG stream
    per camera, spawned from the seed.
    """

    needs_frames = False

    def __init__(self, truth: dict, noise: NoiseModel = NoiseModel(), seed: int = 0):
        self.truth = truth
        self.noise = noise
        self._seed = seed
        self._rngs: dict[int, np.random.Generator] = {}

    def _rng(self, camera_id: int) -> np.random.Generator:
        if camera_id not in self._rngs:
            ss = np.random.SeedSequence([self._seed, camera_id])
            self._rngs[camera_id] = np.random.default_rng(ss)
        return self._rngs[camera_id]

    def detect(self, frame, rois, *, camera_id=None, frame_no=None) -> list[Detection]:
        if camera_id is None or frame_no is None:
            raise ValueError("oracle detector needs camera_id and frame_no context")
        box, vis = self.truth.get((camera_id, frame_no), (None, 0))
        return oracle_detect(box, self.noise, rois, self._rng(camera_id), occluded=(vis == 0))
