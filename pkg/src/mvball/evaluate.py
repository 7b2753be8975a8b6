"""Detection and 3D metrics: matching, precision/recall, average precision.

Counts follow the (ballNum, gtNum, hitNum) convention: detections
emitted, visible ground-truth instances, and detections matched
one-to-one to a visible ground truth under the criterion. Precision is
hitNum/ballNum and recall hitNum/gtNum; under one-to-one matching these
coincide with TP/(TP+FP) and TP/(TP+FN). Undefined 0/0 rates are
reported as 0 and flagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .prefilter import RoiBox, box_iou

__all__ = [
    "EvalError",
    "FrameMisalignment",
    "GtRecord",
    "MatchCriterion",
    "Counts",
    "Report",
    "iou",
    "match_sequence",
    "precision_recall",
    "average_precision",
    "eval_3d",
    "parse_groundtruth",
    "render_groundtruth",
]


class EvalError(ValueError):
    pass


class FrameMisalignment(EvalError):
    """Detections and ground truth do not line up frame by frame."""


@dataclass(frozen=True)
class GtRecord:
    """One ground-truth row: frame number, box (None when the target has
    no recorded position), visibility flag."""

    frm_no: int
    box: RoiBox | None
    vis: int

    def __post_init__(self):
        if self.vis not in (0, 1):
            raise EvalError(f"vis must be 0 or 1, got {self.vis}")


@dataclass(frozen=True)
class MatchCriterion:
    """Hit criterion: IOU threshold, 2D center distance, or 3D distance."""

    kind: str  # "iou" | "center_px" | "dist3d_m"
    value: float

    def __post_init__(self):
        if self.kind not in ("iou", "center_px", "dist3d_m"):
            raise EvalError(f"unknown criterion kind {self.kind!r}")
        if self.kind == "iou" and not (0.0 < self.value <= 1.0):
            raise EvalError(f"iou threshold must be in (0, 1], got {self.value}")
        if self.kind != "iou" and self.value <= 0:
            raise EvalError(f"distance threshold must be positive, got {self.value}")

    @classmethod
    def iou_at(cls, tau: float) -> "MatchCriterion":
        return cls("iou", tau)

    @classmethod
    def center_dist_px(cls, d: float) -> "MatchCriterion":
        return cls("center_px", d)

    @classmethod
    def dist3d_m(cls, d: float) -> "MatchCriterion":
        return cls("dist3d_m", d)

    def label(self) -> str:
        if self.kind == "iou":
            return f"iou={self.value:g}"
        if self.kind == "center_px":
            return f"dist={self.value:g}"
        return f"dist3d={self.value:g}m"

    def box_hit(self, det: RoiBox, gt: RoiBox) -> bool:
        if self.kind == "iou":
            return box_iou(det, gt) >= self.value
        if self.kind == "center_px":
            (dx, dy), (gx, gy) = det.center(), gt.center()
            return math.hypot(dx - gx, dy - gy) <= self.value
        raise EvalError("3D criterion cannot match 2D boxes")


@dataclass
class Counts:
    ballNum: int = 0  # detections emitted
    gtNum: int = 0  # visible ground-truth instances
    hitNum: int = 0  # one-to-one matched detections

    def __post_init__(self):
        if self.hitNum > self.ballNum or self.hitNum > self.gtNum:
            raise EvalError(f"inconsistent counts {self}")

    def add(self, other: "Counts") -> "Counts":
        return Counts(self.ballNum + other.ballNum, self.gtNum + other.gtNum, self.hitNum + other.hitNum)


def iou(a: RoiBox, b: RoiBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    return box_iou(a, b)


def precision_recall(counts: Counts) -> tuple[float, float]:
    """(hitNum/ballNum, hitNum/gtNum) with 0 conventions for empty denominators."""
    p = counts.hitNum / counts.ballNum if counts.ballNum else 0.0
    r = counts.hitNum / counts.gtNum if counts.gtNum else 0.0
    return p, r


def _sorted_dets(dets):
    # confidence descending, ties by smaller area then x then y
    return sorted(dets, key=lambda t: (-t[1], t[0].area, t[0].x, t[0].y))


def match_sequence(
    dets_per_frame: dict[int, list[tuple[RoiBox, float]]],
    gts: list[GtRecord],
    criterion: MatchCriterion,
) -> Counts:
    """Greedy confidence-ordered one-to-one matching over a sequence.

    ``dets_per_frame`` maps frm_no to (box, confidence) pairs; ``gts``
    carries one record per frame. A detection is a hit iff the criterion
    holds against a not-yet-matched vis=1 ground truth of the same frame.
    vis=0 frames contribute detections to ballNum but nothing to gtNum
    or hitNum.
    """
    by_frame = {g.frm_no: g for g in gts}
    if len(by_frame) != len(gts):
        raise FrameMisalignment("duplicate frame numbers in ground truth")
    extra = set(dets_per_frame) - set(by_frame)
    if extra:
        raise FrameMisalignment(f"detections for frames without ground truth: {sorted(extra)[:5]}")

    counts = Counts()
    for g in gts:
        if g.vis == 1 and g.box is not None:
            counts.gtNum += 1
        dets = dets_per_frame.get(g.frm_no, [])
        counts.ballNum += len(dets)
        if g.vis != 1 or g.box is None:
            continue
        matched = False
        for box, _conf in _sorted_dets(dets):
            if not matched and criterion.box_hit(box, g.box):
                counts.hitNum += 1
                matched = True
    return counts


def average_precision(
    dets_per_frame: dict[int, list[tuple[RoiBox, float]]],
    gts: list[GtRecord],
    criterion: MatchCriterion,
) -> float:
    """Area under the precision-recall curve swept over confidence.

    Thresholds visit every distinct detection score in descending order;
    the curve is integrated by the trapezoid rule on recall. Greedy
    matching is prefix-stable, so the sweep is computed in one pass.
    """
    by_frame = {g.frm_no: g for g in gts}
    n_gt = sum(1 for g in gts if g.vis == 1 and g.box is not None)
    if n_gt == 0:
        return 0.0

    # flatten detections, matching greedily in global confidence order
    flat = []
    for frm, dets in dets_per_frame.items():
        if frm not in by_frame:
            raise FrameMisalignment(f"detection for frame {frm} without ground truth")
        for box, conf in dets:
            flat.append((frm, box, conf))
    if not flat:
        return 0.0
    flat.sort(key=lambda t: (-t[2], t[1].area, t[1].x, t[1].y, t[0]))

    taken: set[int] = set()
    is_hit = np.zeros(len(flat), dtype=bool)
    for k, (frm, box, _conf) in enumerate(flat):
        g = by_frame[frm]
        if frm in taken or g.vis != 1 or g.box is None:
            continue
        if criterion.box_hit(box, g.box):
            is_hit[k] = True
            taken.add(frm)

    confs = np.array([c for _, _, c in flat])
    tp = np.cumsum(is_hit)
    ball = np.arange(1, len(flat) + 1)
    # keep only the last entry of each distinct confidence level
    last = np.flatnonzero(np.diff(confs, append=-np.inf) != 0)
    precision = tp[last] / ball[last]
    recall = tp[last] / n_gt
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[precision[0]], precision])
    return float(np.trapezoid(precision, recall))


def eval_3d(outputs, truth3d: np.ndarray, d_m: float = 0.5) -> tuple[float, float]:
    """3D precision/recall at a metric distance threshold.

    ``outputs`` is the per-frame tracker output (objects with frame_no,
    status, point3d); ``truth3d`` is the (n, 3) true trajectory indexed
    by frame. A frame's estimate is a hit iff it lies within d_m of the
    truth; frames with status LOST have no estimate.
    """
    truth3d = np.asarray(truth3d, dtype=np.float64).reshape(-1, 3)
    frames = sorted(o.frame_no for o in outputs)
    if frames != list(range(len(truth3d))):
        raise FrameMisalignment(
            f"outputs cover frames {frames[:3]}..{frames[-3:] if frames else []} "
            f"but truth has {len(truth3d)} contiguous frames"
        )
    counts = Counts()
    counts.gtNum = len(truth3d)
    for o in outputs:
        if o.status == "LOST" or o.point3d is None:
            continue
        counts.ballNum += 1
        if np.linalg.norm(np.asarray(o.point3d) - truth3d[o.frame_no]) <= d_m:
            counts.hitNum += 1
    return precision_recall(counts)


# ---------------------------------------------------------------------------
# groundtruth.txt: rows "frm_no, x, y, w, h, vis" (zero-size box = no box)

def render_groundtruth(records: list[GtRecord]) -> str:
    lines = ["# frm_no, x, y, w, h, vis"]
    for g in records:
        if g.box is None:
            lines.append(f"{g.frm_no}, 0, 0, 0, 0, {g.vis}")
        else:
            lines.append(f"{g.frm_no}, {g.box.x}, {g.box.y}, {g.box.w}, {g.box.h}, {g.vis}")
    return "\n".join(lines) + "\n"


def parse_groundtruth(text: str) -> list[GtRecord]:
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 6:
            raise EvalError(f"groundtruth line {lineno}: expected 6 fields, got {len(parts)}")
        frm, x, y, w, h, vis = (int(p) for p in parts)
        box = RoiBox(x, y, w, h) if w > 0 and h > 0 else None
        records.append(GtRecord(frm, box, vis))
    return records


@dataclass
class Report:
    """Evaluation report: per-camera counts and rates per criterion,
    multi-camera 3D precision/recall, AP per criterion."""

    per_camera: dict = field(default_factory=dict)  # cam_id -> {label: (Counts, p, r)}
    ap: dict = field(default_factory=dict)  # cam_id -> {label: ap}
    three_d: tuple[float, float] | None = None
    undefined_rates: list = field(default_factory=list)  # (cam_id, label) with 0/0

    def add_camera(self, cam_id: int, criterion: MatchCriterion, counts: Counts, ap: float | None = None):
        p, r = precision_recall(counts)
        self.per_camera.setdefault(cam_id, {})[criterion.label()] = (counts, p, r)
        if ap is not None:
            self.ap.setdefault(cam_id, {})[criterion.label()] = ap
        if counts.ballNum == 0 or counts.gtNum == 0:
            self.undefined_rates.append((cam_id, criterion.label()))

    def criterion_labels(self) -> list[str]:
        labels: list[str] = []
        for crit_map in self.per_camera.values():
            for lbl in crit_map:
                if lbl not in labels:
                    labels.append(lbl)
        return labels

    def render_text(self) -> str:
        labels = self.criterion_labels()
        head = ["camera".ljust(8)] + [f"{lbl:>24}" for lbl in labels]
        lines = ["".join(head), "".join(["".ljust(8)] + [f"{'prec / recall':>24}" for _ in labels])]
        for cam_id in sorted(self.per_camera):
            row = [f"{cam_id:<8}"]
            for lbl in labels:
                entry = self.per_camera[cam_id].get(lbl)
                row.append(f"{'-':>24}" if entry is None else f"{entry[1]:>11.5f} /{entry[2]:>10.5f}")
            lines.append("".join(row))
        if self.three_d is not None:
            lines.append(f"3D (multi-camera): precision {self.three_d[0]:.5f} recall {self.three_d[1]:.5f}")
        if self.undefined_rates:
            lines.append(f"undefined 0/0 rates reported as 0 for: {self.undefined_rates}")
        return "\n".join(lines) + "\n"

    def render_kv(self) -> str:
        lines = []
        for cam_id in sorted(self.per_camera):
            for lbl, (counts, p, r) in self.per_camera[cam_id].items():
                lines.append(
                    f"cam={cam_id} crit={lbl} ballNum={counts.ballNum} gtNum={counts.gtNum} "
                    f"hitNum={counts.hitNum} precision={p:.6f} recall={r:.6f}"
                )
                if cam_id in self.ap and lbl in self.ap[cam_id]:
                    lines[-1] += f" ap={self.ap[cam_id][lbl]:.6f}"
        if self.three_d is not None:
            lines.append(f"cam=3d precision={self.three_d[0]:.6f} recall={self.three_d[1]:.6f}")
        return "\n".join(lines) + "\n"
