"""Per-frame orchestration: detect/track scheduling, ROI escalation,
trajectory smoothness gating, and the carry-forward fallback.

Per camera, ``lost_frames`` counts consecutive frames without an
accepted detection and drives a tiered ROI schedule: a tight ROI around
the last position while the count stays low, a widened ROI as it grows,
and full-image detection with prefilter proposals once the target has
been missing long enough. Sequence-level strategies:

    M1  detect every Nth frame, remaining frames unprocessed;
    M2  detect every Nth frame, track the frames in between while
        results hold, unprocessed otherwise;
    M3  detect the first frame, track afterwards, re-detect a frame
        whose tracking fails.

M1/M2 gaps are filled by linear interpolation of neighboring 3D points
before evaluation; M3 output is used as-is.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .court import CourtNotVisible, camera_court_mask
from .detector import DetectorConfig, best_detection, nms
from .fusion import (
    FusionError,
    LmSettings,
    Observation,
    refine_point_lm,
    reproject_and_refine,
    vote_consensus,
)
from .geometry import PointBehindCamera, Rig, in_image, project
from .prefilter import BackgroundModel, RoiBox, background_observe, foreground_mask, propose_rois

__all__ = [
    "TrackerError",
    "RigMismatch",
    "DatasetGap",
    "Strategy",
    "CameraTrackState",
    "FrameOutput",
    "TrajectoryBuffer",
    "DetectorCallStats",
    "Pipeline",
    "schedule_roi",
    "validate_smooth",
    "step",
    "run_sequence",
    "render_outputs",
    "parse_outputs",
]

MODE_FULL_IMAGE = "FULL_IMAGE"
MODE_ROI = "ROI"

KIND_DETECT = "detect"
KIND_TRACK = "track"
KIND_TRACK_REDETECT = "track_redetect"

STATUS_OK = "OK"
STATUS_CARRIED = "CARRIED_FORWARD"
STATUS_LOST = "LOST"


class TrackerError(ValueError):
    pass


class RigMismatch(TrackerError):
    """The frame map does not cover the rig."""


class DatasetGap(TrackerError):
    """Dataset frames are not contiguous."""


@dataclass(frozen=True)
class Strategy:
    variant: str  # M1 | M2 | M3
    detect_interval: int = 5

    def __post_init__(self):
        if self.variant not in ("M1", "M2", "M3"):
            raise TrackerError(f"unknown strategy variant {self.variant!r}")
        if self.detect_interval < 1:
            raise TrackerError("detect_interval must be >= 1")


@dataclass
class CameraTrackState:
    camera_id: int
    last_box: RoiBox | None = None
    lost_frames: int = 0  # consecutive frames without an accepted detection
    mode: str = MODE_FULL_IMAGE


@dataclass(frozen=True, eq=False)
class FrameOutput:
    frame_no: int
    status: str  # OK | CARRIED_FORWARD | LOST
    point3d: np.ndarray | None
    visible_cameras: tuple
    per_camera_2d: dict  # camera_id -> RoiBox

    def __post_init__(self):
        if self.status not in (STATUS_OK, STATUS_CARRIED, STATUS_LOST):
            raise TrackerError(f"bad status {self.status!r}")
        if (self.point3d is None) != (self.status == STATUS_LOST):
            raise TrackerError("point3d must be present iff status != LOST")
        if self.point3d is not None:
            object.__setattr__(self, "point3d", np.asarray(self.point3d, dtype=np.float64).reshape(3))
        vis = tuple(self.visible_cameras)
        if not set(vis) <= set(self.per_camera_2d):
            raise TrackerError("visible_cameras must be a subset of per_camera_2d keys")
        object.__setattr__(self, "visible_cameras", vis)


class TrajectoryBuffer:
    """Ring buffer of (frame_no, point) with physical motion bounds.

    Capacity defaults to 38 frames (~1.5 s at 25 fps). Frame numbers must
    be strictly increasing.
    """

    def __init__(self, capacity: int = 38, v_max: float = 45.0, a_max: float = 400.0, fps: float = 25.0):
        if capacity < 1 or v_max <= 0 or a_max <= 0 or fps <= 0:
            raise TrackerError("buffer parameters must be positive")
        self.capacity = capacity
        self.v_max = v_max
        self.a_max = a_max
        self.fps = fps
        self._buf: list[tuple[int, np.ndarray]] = []

    def __len__(self):
        return len(self._buf)

    def append(self, frame_no: int, point) -> None:
        if self._buf and frame_no <= self._buf[-1][0]:
            raise TrackerError(f"frame numbers must increase, got {frame_no} after {self._buf[-1][0]}")
        self._buf.append((frame_no, np.asarray(point, dtype=np.float64).reshape(3)))
        if len(self._buf) > self.capacity:
            self._buf.pop(0)

    def last(self, k: int = 1) -> list[tuple[int, np.ndarray]]:
        return self._buf[-k:]


def validate_smooth(buffer: TrajectoryBuffer, candidate, frame_no: int) -> bool:
    """True iff the candidate extends the buffered trajectory within the
    speed and acceleration bounds; vacuously true with < 2 points buffered."""
    if len(buffer) and frame_no <= buffer.last(1)[0][0]:
        raise TrackerError("candidate frame must be newer than the buffer")
    if len(buffer) < 2:
        return True
    (f1, p1), (f2, p2) = buffer.last(2)
    candidate = np.asarray(candidate, dtype=np.float64).reshape(3)
    dt2 = (frame_no - f2) / buffer.fps
    v2 = (candidate - p2) / dt2
    if np.linalg.norm(v2) > buffer.v_max:
        return False
    dt1 = (f2 - f1) / buffer.fps
    v1 = (p2 - p1) / dt1
    acc = np.linalg.norm(v2 - v1) / dt2
    return acc <= buffer.a_max


def schedule_roi(
    state: CameraTrackState,
    predicted_px,
    image_size: tuple[int, int],
    s1_factor: float = 4.0,
    s2_factor: float = 10.0,
) -> tuple[str, list[RoiBox]]:
    """Tiered ROI schedule driven by the consecutive-miss counter.

    lost_frames <= 2 gives a tight ROI (s1_factor x the last box side),
    2 < lost_frames <= 5 a widened one (s2_factor x), beyond that the
    full image. A predicted pixel from 3D reprojection overrides the
    last box as the ROI center. Without any last box the camera is in
    full-image mode.
    """
    w, h = image_size
    full = (MODE_FULL_IMAGE, [RoiBox(0, 0, w, h)])
    if state.last_box is None or state.lost_frames > 5:
        return full
    factor = s1_factor if state.lost_frames <= 2 else s2_factor
    side = max(1, int(round(factor * max(state.last_box.w, state.last_box.h))))
    if predicted_px is not None:
        cx, cy = float(predicted_px[0]), float(predicted_px[1])
    else:
        cx, cy = state.last_box.center()
    box = RoiBox(int(round(cx - side / 2.0)), int(round(cy - side / 2.0)), side, side).clipped(w, h)
    if box is None:
        return full
    return (MODE_ROI, [box])


@dataclass
class DetectorCallStats:
    """Detector invocation accounting for strategy comparisons.

    work_units normalizes each call by the detector window area
    (input_size^2), so a full-frame call costs proportionally more than
    a small tracking ROI.
    """

    full_image_calls: int = 0
    roi_calls: int = 0
    work_units: float = 0.0

    @property
    def total_calls(self) -> int:
        return self.full_image_calls + self.roi_calls


class Pipeline:
    """Mutable tracking state over a rig: per-camera schedules, background
    models, the trajectory buffer, and detector-call accounting.

    Single-writer: frames advance strictly in order via step().
    """

    def __init__(
        self,
        rig: Rig,
        detector,
        det_config: DetectorConfig = DetectorConfig(),
        dist_thd_m: float = 0.5,
        lm_settings: LmSettings = LmSettings(),
        fps: float = 25.0,
        v_max: float = 45.0,
        a_max: float = 400.0,
        buffer_capacity: int = 38,
        s1_factor: float = 4.0,
        s2_factor: float = 10.0,
        reproj_roi_radius_px: int = 24,
        court=None,
        k_sigma: float = 3.0,
        min_roi_area: int = 9,
        roi_pad: int = 8,
        bg_refresh_period: int = 200,
        bg_alpha: float = 0.02,
    ):
        self.rig = rig
        self.detector = detector
        self.det_config = det_config
        self.dist_thd_m = dist_thd_m
        self.lm_settings = lm_settings
        self.s1_factor = s1_factor
        self.s2_factor = s2_factor
        self.reproj_roi_radius_px = reproj_roi_radius_px
        self.k_sigma = k_sigma
        self.min_roi_area = min_roi_area
        self.roi_pad = roi_pad
        self.bg_refresh_period = bg_refresh_period
        self.bg_alpha = bg_alpha
        self.states = {c.cam_id: CameraTrackState(c.cam_id) for c in rig}
        self.buffer = TrajectoryBuffer(buffer_capacity, v_max, a_max, fps)
        self.stats = DetectorCallStats()
        self.backgrounds: dict[int, BackgroundModel] = {}
        self.court_masks: dict[int, np.ndarray | None] = {}
        if court is not None:
            for cam in rig:
                try:
                    self.court_masks[cam.cam_id] = camera_court_mask(court, cam)
                except CourtNotVisible:
                    self.court_masks[cam.cam_id] = None
        self.last_point: np.ndarray | None = None
        self.last_per2d: dict[int, RoiBox] = {}
        self.consec_failures = 0

    # -- detection plumbing ------------------------------------------------

    def needs_frames(self) -> bool:
        return bool(getattr(self.detector, "needs_frames", False))

    def seed_background(self, camera_id: int, frame: np.ndarray) -> None:
        self.backgrounds[camera_id] = BackgroundModel.from_frame(
            frame, self.bg_refresh_period, self.bg_alpha
        )

    def _full_image_rois(self, cam, frame) -> list[RoiBox]:
        w, h = cam.image_size
        if frame is None:
            return [RoiBox(0, 0, w, h)]
        model = self.backgrounds.get(cam.cam_id)
        if model is None:
            self.seed_background(cam.cam_id, frame)
            return [RoiBox(0, 0, w, h)]
        mask = foreground_mask(model, frame, self.k_sigma)
        rois = propose_rois(
            mask, self.court_masks.get(cam.cam_id), self.min_roi_area, self.roi_pad
        )
        return rois if rois else [RoiBox(0, 0, w, h)]

    def _detect(self, cam, frame, rois, frame_no, full_image: bool):
        if full_image:
            self.stats.full_image_calls += 1
        else:
            self.stats.roi_calls += 1
        window = float(self.det_config.input_size) ** 2
        self.stats.work_units += sum(r.area for r in rois) / window
        dets = self.detector.detect(frame, rois, camera_id=cam.cam_id, frame_no=frame_no)
        return nms(dets, self.det_config.iou_thd)


def _predicted_pixel(pipeline: Pipeline, cam):
    if pipeline.last_point is None:
        return None
    try:
        px, _ = project(cam, pipeline.last_point)
    except PointBehindCamera:
        return None
    return px if in_image(cam, px) else None


def _detect_all(pipeline: Pipeline, frames, frame_no: int, full: bool):
    best = {}
    for cam in pipeline.rig:
        frame = frames.get(cam.cam_id) if frames else None
        st = pipeline.states[cam.cam_id]
        if full:
            mode, rois = MODE_FULL_IMAGE, pipeline._full_image_rois(cam, frame)
        else:
            # the 3D prediction re-centers only cameras that lost their own
            # track; cameras holding a fresh detection keep following it
            predicted = _predicted_pixel(pipeline, cam) if st.lost_frames > 0 else None
            mode, rois = schedule_roi(
                st, predicted, cam.image_size,
                pipeline.s1_factor, pipeline.s2_factor,
            )
            if mode == MODE_FULL_IMAGE:
                rois = pipeline._full_image_rois(cam, frame)
        st.mode = mode
        dets = pipeline._detect(cam, frame, rois, frame_no, mode == MODE_FULL_IMAGE)
        b = best_detection(dets, pipeline.det_config.det_conf)
        if b is not None:
            best[cam.cam_id] = b
    return best


def _reconstruct(pipeline: Pipeline, best: dict):
    if len(best) < 2:
        return None, set()
    observations = [
        Observation(cid, np.array(det.box.center()), det.confidence)
        for cid, det in sorted(best.items())
    ]
    try:
        consensus, inliers, _out = vote_consensus(observations, pipeline.rig, pipeline.dist_thd_m)
        inlier_obs = [o for o in observations if o.camera_id in inliers]
        recon = refine_point_lm(consensus, inlier_obs, pipeline.rig, pipeline.lm_settings)
    except FusionError:
        return None, set()
    return recon, inliers


def step(pipeline: Pipeline, frames: dict | None, frame_no: int, kind: str = KIND_TRACK) -> FrameOutput:
    """Process one frame end to end.

    Stages: per-camera scheduling and detection, voting consensus over
    the best detections, LM refinement, the smoothness gate, then
    reprojection recovery of per-camera 2D. On reconstruction failure
    the previous region is carried forward, escalating to LOST after a
    buffer-length run of failures.
    """
    if frames is not None:
        missing = [c.cam_id for c in pipeline.rig if c.cam_id not in frames]
        if missing:
            raise RigMismatch(f"frames missing for cameras {missing}")
    elif pipeline.needs_frames():
        raise RigMismatch("this detector requires pixel frames for every camera")

    if frames is not None:
        for cam in pipeline.rig:
            model = pipeline.backgrounds.get(cam.cam_id)
            if model is None:
                pipeline.seed_background(cam.cam_id, frames[cam.cam_id])
            else:
                background_observe(model, frames[cam.cam_id])

    best = _detect_all(pipeline, frames, frame_no, full=(kind == KIND_DETECT))
    recon, inliers = _reconstruct(pipeline, best)
    if recon is None and kind == KIND_TRACK_REDETECT:
        best = _detect_all(pipeline, frames, frame_no, full=True)
        recon, inliers = _reconstruct(pipeline, best)

    if recon is not None and not validate_smooth(pipeline.buffer, recon.point, frame_no):
        recon = None

    if recon is None:
        for st in pipeline.states.values():
            st.lost_frames += 1
        pipeline.consec_failures += 1
        if pipeline.last_point is None or pipeline.consec_failures > pipeline.buffer.capacity:
            return FrameOutput(frame_no, STATUS_LOST, None, (), {})
        return FrameOutput(
            frame_no, STATUS_CARRIED, pipeline.last_point.copy(), (), dict(pipeline.last_per2d)
        )

    recovered = reproject_and_refine(
        recon,
        pipeline.rig,
        pipeline.detector,
        frames,
        pipeline.reproj_roi_radius_px,
        pipeline.det_config.det_conf,
        frame_no=frame_no,
    )
    per2d = {cid: det.box for cid, det in recovered.items()}
    for cid in inliers:
        if cid not in per2d:
            per2d[cid] = best[cid].box
    detected = set(per2d)

    # cameras that still saw nothing (occlusion, misses) get their 2D from
    # the reconstruction: the projected box at the consensus point
    side = int(round(np.median([b.w for b in per2d.values()]))) if per2d else 9
    for cam in pipeline.rig:
        if cam.cam_id in per2d:
            continue
        try:
            px, _ = project(cam, recon.point)
        except PointBehindCamera:
            continue
        if in_image(cam, px):
            per2d[cam.cam_id] = RoiBox(
                int(round(px[0] - side / 2.0)), int(round(px[1] - side / 2.0)), side, side
            )

    for cam in pipeline.rig:
        st = pipeline.states[cam.cam_id]
        if cam.cam_id in detected:
            st.last_box = per2d[cam.cam_id]
            st.lost_frames = 0
            st.mode = MODE_ROI
        else:
            st.lost_frames += 1
            if st.last_box is None:
                st.mode = MODE_FULL_IMAGE

    pipeline.buffer.append(frame_no, recon.point)
    pipeline.last_point = recon.point.copy()
    pipeline.last_per2d = dict(per2d)
    pipeline.consec_failures = 0
    return FrameOutput(frame_no, STATUS_OK, recon.point, tuple(sorted(detected)), per2d)


def _interpolate_gaps(outputs: list, n_frames: int) -> list:
    """Fill unprocessed frames by linear interpolation of the neighboring
    OK 3D points (constant extension at the edges); LOST if no OK frame
    exists at all."""
    ok = [(fn, o.point3d) for fn, o in enumerate(outputs) if o is not None and o.status == STATUS_OK]
    filled = []
    ok_frames = [f for f, _ in ok]
    for fn in range(n_frames):
        if outputs[fn] is not None:
            filled.append(outputs[fn])
            continue
        if not ok:
            filled.append(FrameOutput(fn, STATUS_LOST, None, (), {}))
            continue
        k = np.searchsorted(ok_frames, fn)
        if k == 0:
            p = ok[0][1]
        elif k == len(ok):
            p = ok[-1][1]
        else:
            (f0, p0), (f1, p1) = ok[k - 1], ok[k]
            t = (fn - f0) / (f1 - f0)
            p = (1 - t) * p0 + t * p1
        filled.append(FrameOutput(fn, STATUS_OK, p, (), {}))
    return filled


def run_sequence(
    pipeline: Pipeline, dataset, strategy: Strategy, frame_times_ms: list | None = None
) -> tuple[list, DetectorCallStats]:
    """Drive the pipeline over a dataset under a detect/track strategy.

    Returns one FrameOutput per frame (M1/M2 gaps interpolated) and the
    detector-call statistics. When ``frame_times_ms`` is a list, the wall
    time of each frame iteration is appended to it.
    """
    n = dataset.n_frames
    if n < 1:
        raise DatasetGap("dataset has no frames")
    nums = getattr(dataset, "frame_numbers", None)
    if nums is not None and list(nums) != list(range(n)):
        raise DatasetGap("dataset frames are not contiguous from 0")
    outputs: list = [None] * n
    have_result = False
    prev_failed = False
    interval = strategy.detect_interval

    for fn in range(n):
        t_start = time.perf_counter()
        frames = dataset.frames_for(fn)
        if strategy.variant == "M1":
            if fn % interval == 0:
                outputs[fn] = step(pipeline, frames, fn, KIND_DETECT)
        elif strategy.variant == "M2":
            if fn % interval == 0:
                out = step(pipeline, frames, fn, KIND_DETECT)
                outputs[fn] = out
                have_result = out.status == STATUS_OK
            elif have_result:
                out = step(pipeline, frames, fn, KIND_TRACK)
                outputs[fn] = out
                have_result = out.status == STATUS_OK
        else:  # M3
            if fn == 0 or prev_failed:
                out = step(pipeline, frames, fn, KIND_DETECT)
            else:
                out = step(pipeline, frames, fn, KIND_TRACK_REDETECT)
            outputs[fn] = out
            prev_failed = out.status != STATUS_OK
        if frame_times_ms is not None:
            frame_times_ms.append((time.perf_counter() - t_start) * 1000.0)

    if strategy.variant in ("M1", "M2"):
        outputs = _interpolate_gaps(outputs, n)
    return outputs, pipeline.stats


# ---------------------------------------------------------------------------
# Output records: one line per frame,
#   frm_no status x y z cam_count [cam_id u v w h]...

def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def render_outputs(outputs: list) -> str:
    lines = ["# frm_no status x y z cam_count [cam_id u v w h]..."]
    for o in outputs:
        if o.point3d is None:
            coords = ["nan", "nan", "nan"]
        else:
            coords = [_fmt(v) for v in o.point3d]
        parts = [str(o.frame_no), o.status] + coords + [str(len(o.per_camera_2d))]
        for cid in sorted(o.per_camera_2d):
            b = o.per_camera_2d[cid]
            parts += [str(cid), str(b.x), str(b.y), str(b.w), str(b.h)]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_outputs(text: str) -> list:
    outputs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 6:
            raise TrackerError(f"output line {lineno}: too few fields")
        frame_no = int(parts[0])
        status = parts[1]
        point = None
        if status != STATUS_LOST:
            point = np.array([float(parts[2]), float(parts[3]), float(parts[4])])
        cam_count = int(parts[5])
        if len(parts) != 6 + 5 * cam_count:
            raise TrackerError(f"output line {lineno}: expected {cam_count} camera entries")
        per2d = {}
        for k in range(cam_count):
            cid, x, y, w, h = (int(v) for v in parts[6 + 5 * k : 11 + 5 * k])
            per2d[cid] = RoiBox(x, y, w, h)
        visible = tuple(sorted(per2d)) if status == STATUS_OK else ()
        outputs.append(FrameOutput(frame_no, status, point, visible, per2d))
    return outputs
