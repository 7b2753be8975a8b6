"""Synthetic ground-truth generation.

Builds camera rigs around a court, generates piecewise ballistic/rolling
ball trajectories, schedules per-camera occlusion episodes, optionally
renders grayscale frames, and writes datasets in the package's file
formats:

    <dir>/rig.txt                     camera rig
    <dir>/truth3d.txt                 frm_no x y z   (3D evaluation extension)
    <dir>/court3d.txt                 world-space court (court-file grammar)
    <dir>/C<xxx>/groundtruth.txt      frm_no, x, y, w, h, vis
    <dir>/C<xxx>/court.txt            pixel-space court for that camera
    <dir>/C<xxx>/CxxxFxxxx.pgm        frames (render=True only)

The background frame of a camera is the PGM whose frame field equals
the designated background index (9999 by default). Fixed seed in,
byte-identical dataset out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .court import CourtFile2D, CourtModel, CourtNotVisible, camera_court_mask, parse_court_file, render_court_file
from .detector import NoiseModel
from .evaluate import GtRecord, parse_groundtruth, render_groundtruth
from .geometry import (
    Camera,
    CameraIntrinsics,
    CameraPose,
    PointBehindCamera,
    Rig,
    in_image,
    load_rig,
    project,
    save_rig,
)
from .prefilter import RoiBox, frame_filename, read_pgm, write_pgm

__all__ = [
    "SimError",
    "InsufficientCoverage",
    "GRAVITY",
    "RigLayout",
    "build_rig",
    "TrajectorySegment",
    "TrajectoryModel",
    "OcclusionSchedule",
    "SimConfig",
    "Dataset",
    "default_court",
    "simulate",
    "write_dataset",
    "read_dataset",
]

GRAVITY = 9.81  # m/s^2


class SimError(ValueError):
    pass


class InsufficientCoverage(SimError):
    """The rig cannot see every court point from at least 4 cameras."""


@dataclass(frozen=True)
class RigLayout:
    court_length: float = 105.0
    court_width: float = 68.0
    n_cameras: int = 36
    mount_height: float = 20.0
    mount_offset: float = 15.0  # outward distance from the court boundary
    look_at: str = "center"  # "center" | "zones"
    image_size: tuple[int, int] = (640, 400)
    focal_px: float = 560.0
    scale_s: float = 1.0

    def __post_init__(self):
        if self.look_at not in ("center", "zones"):
            raise SimError(f"unknown look-at policy {self.look_at!r}")
        if self.court_length <= 0 or self.court_width <= 0:
            raise SimError("court dimensions must be positive")


def default_court(length: float = 105.0, width: float = 68.0) -> CourtModel:
    """Rectangular court with the six customary key points labeled:
    four corners plus the two midline ends."""
    contour = np.array([[0.0, 0.0], [length, 0.0], [length, width], [0.0, width]])
    lines = (
        (0, (0.0, 0.0)),
        (1, (length, 0.0)),
        (2, (length, width)),
        (3, (0.0, width)),
        (4, (length / 2.0, 0.0)),
        (5, (length / 2.0, width)),
    )
    return CourtModel(contour, lines, (length, width))


def _look_at_pose(position: np.ndarray, target: np.ndarray) -> CameraPose:
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight up/down
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nr
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return CameraPose(R, -(R @ position))


def _perimeter_point(layout: RigLayout, theta: float) -> np.ndarray:
    """Intersection of the ray from the court center at angle theta with
    the offset rectangle around the court."""
    cx, cy = layout.court_length / 2.0, layout.court_width / 2.0
    dx, dy = math.cos(theta), math.sin(theta)
    hx = layout.court_length / 2.0 + layout.mount_offset
    hy = layout.court_width / 2.0 + layout.mount_offset
    ts = []
    if abs(dx) > 1e-12:
        ts += [hx / abs(dx)]
    if abs(dy) > 1e-12:
        ts += [hy / abs(dy)]
    t = min(ts)
    return np.array([cx + t * dx, cy + t * dy])


def build_rig(layout: RigLayout) -> Rig:
    """Cameras spaced at even angles around the offset court rectangle.

    Angular placement keeps a symmetric layout mirror-symmetric for even
    camera counts. Every sampled court ground point must lie in front of
    at least 4 cameras, otherwise InsufficientCoverage is raised.
    """
    if layout.n_cameras < 2:
        raise InsufficientCoverage(f"{layout.n_cameras} camera(s) cannot triangulate")
    L, W = layout.court_length, layout.court_width
    center = np.array([L / 2.0, W / 2.0, 0.0])
    w, h = layout.image_size
    intr = CameraIntrinsics(layout.focal_px, layout.focal_px, w / 2.0, h / 2.0, layout.scale_s)

    cameras = []
    for k in range(layout.n_cameras):
        theta = 2.0 * math.pi * (k + 0.5) / layout.n_cameras
        xy = _perimeter_point(layout, theta)
        pos = np.array([xy[0], xy[1], layout.mount_height])
        if layout.look_at == "center":
            target = center
        else:
            target = center + 0.5 * (np.array([xy[0], xy[1], 0.0]) - center)
        cameras.append(Camera(k, intr, _look_at_pose(pos, target), layout.image_size))
    rig = Rig(tuple(cameras))

    xs = np.linspace(0.0, L, 8)
    ys = np.linspace(0.0, W, 6)
    for x in xs:
        for y in ys:
            p = np.array([x, y, 0.0])
            n_front = 0
            for cam in rig:
                if (cam.pose.rotation @ p + cam.pose.translation)[2] > 0:
                    n_front += 1
            if n_front < 4:
                raise InsufficientCoverage(
                    f"court point ({x:.1f}, {y:.1f}) is in front of only {n_front} cameras"
                )
    return rig


# ---------------------------------------------------------------------------
# Trajectories

@dataclass(frozen=True, eq=False)
class TrajectorySegment:
    t0: float
    t1: float
    kind: str  # "ballistic" | "linear"
    p0: np.ndarray  # (3,)
    v0: np.ndarray  # (3,)

    def __post_init__(self):
        if self.kind not in ("ballistic", "linear"):
            raise SimError(f"unknown segment kind {self.kind!r}")
        if not self.t1 > self.t0:
            raise SimError("segment must have positive duration")
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=np.float64).reshape(3))
        object.__setattr__(self, "v0", np.asarray(self.v0, dtype=np.float64).reshape(3))

    def position(self, t: float) -> np.ndarray:
        tau = t - self.t0
        p = self.p0 + self.v0 * tau
        if self.kind == "ballistic":
            p = p - np.array([0.0, 0.0, 0.5 * GRAVITY * tau * tau])
        return p


class TrajectoryModel:
    """Piecewise ballistic / linear-roll ball path, continuous across
    segment boundaries, z >= 0 throughout."""

    def __init__(self, segments: list[TrajectorySegment]):
        if not segments:
            raise SimError("trajectory needs at least one segment")
        for a, b in zip(segments, segments[1:]):
            if abs(b.t0 - a.t1) > 1e-9:
                raise SimError("segments must tile the time axis")
            if np.linalg.norm(a.position(a.t1) - b.p0) > 1e-9:
                raise SimError("position must be continuous across segment boundaries")
        for s in segments:
            z_ends = min(s.position(s.t0)[2], s.position(s.t1)[2])
            if z_ends < -1e-9:  # ballistic arcs are concave: min z is at an endpoint
                raise SimError("trajectory dips below the ground")
        self.segments = list(segments)
        self.t_start = segments[0].t0
        self.t_end = segments[-1].t1
        self._t0s = np.array([s.t0 for s in segments])

    def position(self, t: float) -> np.ndarray:
        if t < self.t_start - 1e-9 or t > self.t_end + 1e-9:
            raise SimError(f"t={t} outside trajectory span [{self.t_start}, {self.t_end}]")
        idx = int(np.searchsorted(self._t0s, t, side="right")) - 1
        idx = max(0, min(idx, len(self.segments) - 1))
        return self.segments[idx].position(t)

    @classmethod
    def linear(cls, p0, v, duration: float) -> "TrajectoryModel":
        return cls([TrajectorySegment(0.0, duration, "linear", p0, v)])

    @classmethod
    def random_play(
        cls,
        seed: int,
        duration: float,
        court_dims: tuple[float, float] = (105.0, 68.0),
        ball_radius: float = 0.11,
        margin: float = 12.0,
        max_kick_speed: float = 5.0,
        max_roll_speed: float = 4.0,
        vz_range: tuple[float, float] = (2.0, 4.0),
    ) -> "TrajectoryModel":
        """Random alternation of kicks (ballistic arcs landing back at ball
        height) and ground rolls, aimed at interior targets so the ball
        stays on the court.

        The default speed caps keep per-kick velocity changes within the
        tracker's default smoothness bounds at 25 fps (worst-case impulse
        ~13 m/s in one frame, ~320 m/s^2).
        """
        rng = np.random.default_rng(seed)
        L, W = court_dims
        margin = min(margin, L / 3.0, W / 3.0)
        p = np.array([L / 2.0, W / 2.0, ball_radius])
        t = 0.0
        segments = []
        while t < duration:
            target = np.array(
                [rng.uniform(margin, L - margin), rng.uniform(margin, W - margin)]
            )
            if rng.random() < 0.7:
                vz = rng.uniform(*vz_range)
                tau = 2.0 * vz / GRAVITY
                vxy = (target - p[:2]) / tau
                speed = np.linalg.norm(vxy)
                if speed > max_kick_speed:
                    vxy *= max_kick_speed / speed
                seg = TrajectorySegment(t, t + tau, "ballistic", p, np.array([vxy[0], vxy[1], vz]))
            else:
                tau = rng.uniform(0.5, 2.0)
                vxy = (target - p[:2]) / tau
                speed = np.linalg.norm(vxy)
                if speed > max_roll_speed:
                    vxy *= max_roll_speed / speed
                seg = TrajectorySegment(t, t + tau, "linear", p, np.array([vxy[0], vxy[1], 0.0]))
            segments.append(seg)
            p = seg.position(seg.t1)
            t = seg.t1
        return cls(segments)


@dataclass(frozen=True)
class OcclusionSchedule:
    """Half-open frame intervals [f0, f1) during which a camera cannot
    see the ball."""

    intervals: tuple = ()  # (camera_id, f0, f1)

    def __post_init__(self):
        iv = tuple((int(c), int(a), int(b)) for c, a, b in self.intervals)
        for c, a, b in iv:
            if not (0 <= a < b):
                raise SimError(f"bad occlusion interval ({c}, {a}, {b})")
        object.__setattr__(self, "intervals", iv)

    def occluded(self, camera_id: int, frame_no: int) -> bool:
        return any(c == camera_id and a <= frame_no < b for c, a, b in self.intervals)

    @classmethod
    def random_episodes(
        cls,
        seed: int,
        camera_ids: list[int],
        n_frames: int,
        fraction: float = 0.3,
        min_len: int = 10,
        max_len: int = 50,
    ) -> "OcclusionSchedule":
        """Per camera, place non-overlapping episodes until roughly
        ``fraction`` of the timeline is covered."""
        rng = np.random.default_rng(seed)
        intervals = []
        for cid in camera_ids:
            covered = 0
            tries = 0
            taken: list[tuple[int, int]] = []
            while covered < fraction * n_frames and tries < 100:
                tries += 1
                length = min(int(rng.integers(min_len, max_len + 1)), n_frames)
                start = int(rng.integers(0, n_frames - length + 1))
                if any(s < start + length and start < e for s, e in taken):
                    continue
                taken.append((start, start + length))
                covered += length
            intervals += [(cid, s, e) for s, e in sorted(taken)]
        return cls(tuple(intervals))


# ---------------------------------------------------------------------------
# Simulation

@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    fps: float = 25.0
    n_frames: int = 100
    noise: NoiseModel = NoiseModel()
    render: bool = False
    ball_radius: float = 0.11
    background_level: int = 96
    n_distractors: int = 0
    bg_frame_index: int = 9999

    def __post_init__(self):
        if self.fps <= 0 or self.n_frames <= 0:
            raise SimError("fps and n_frames must be positive")
        if not (0 <= self.background_level <= 255):
            raise SimError("background_level must be a byte")


@dataclass(eq=False)
class Dataset:
    rig: Rig
    court: CourtModel
    fps: float
    ball_radius: float
    truth3d: np.ndarray  # (n_frames, 3)
    gt: dict  # camera_id -> list[GtRecord]
    court2d: dict  # camera_id -> CourtFile2D
    frames: dict = field(default_factory=dict)  # camera_id -> list[np.ndarray] (rendered only)
    backgrounds: dict = field(default_factory=dict)  # camera_id -> np.ndarray
    bg_frame_index: int = 9999

    @property
    def n_frames(self) -> int:
        return self.truth3d.shape[0]

    @property
    def frame_numbers(self) -> range:
        return range(self.n_frames)

    @property
    def rendered(self) -> bool:
        return bool(self.frames)

    def frames_for(self, frame_no: int) -> dict | None:
        if not self.frames:
            return None
        return {cid: seq[frame_no] for cid, seq in self.frames.items()}

    def truth_lookup(self) -> dict:
        """(camera_id, frame_no) -> (box | None, vis), as the oracle
        detector expects."""
        out = {}
        for cid, records in self.gt.items():
            for g in records:
                out[(cid, g.frm_no)] = (g.box, g.vis)
        return out

    def occlusion_stats(self) -> tuple[int, float]:
        """(number of vis=0 rows, their fraction of all rows)."""
        n0 = sum(1 for recs in self.gt.values() for g in recs if g.vis == 0)
        total = sum(len(recs) for recs in self.gt.values())
        return n0, (n0 / total if total else 0.0)


def _draw_disc(img: np.ndarray, u: float, v: float, radius: float, value: int) -> None:
    """Disc with a coverage-weighted rim blended over the background."""
    h, w = img.shape
    r = max(radius, 0.8)
    x0, x1 = int(math.floor(u - r - 1)), int(math.ceil(u + r + 1))
    y0, y1 = int(math.floor(v - r - 1)), int(math.ceil(v + r + 1))
    x0, x1 = max(x0, 0), min(x1, w - 1)
    y0, y1 = max(y0, 0), min(y1, h - 1)
    if x1 < x0 or y1 < y0:
        return
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    dist = np.hypot(xx + 0.5 - u, yy + 0.5 - v)
    cover = np.clip(r + 0.5 - dist, 0.0, 1.0)
    region = img[y0 : y1 + 1, x0 : x1 + 1]
    blended = np.rint(region * (1.0 - cover) + value * cover).astype(np.uint8)
    img[y0 : y1 + 1, x0 : x1 + 1] = blended


def _distractor_tracks(config: SimConfig, court: CourtModel) -> np.ndarray:
    """(n_distractors, n_frames, 2) ground tracks of player-like blobs."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    L, W = court.dimensions
    n = config.n_distractors
    tracks = np.zeros((n, config.n_frames, 2))
    for i in range(n):
        p = np.array([rng.uniform(5, L - 5), rng.uniform(5, W - 5)])
        v = rng.uniform(-4, 4, size=2)
        for fn in range(config.n_frames):
            tracks[i, fn] = p
            p = p + v / config.fps
            for ax, hi in ((0, L), (1, W)):
                if p[ax] < 0 or p[ax] > hi:
                    v[ax] = -v[ax]
                    p[ax] = min(max(p[ax], 0), hi)
    return tracks


def simulate(
    config: SimConfig,
    rig: Rig,
    trajectory: TrajectoryModel,
    occlusions: OcclusionSchedule = OcclusionSchedule(),
    court: CourtModel | None = None,
) -> Dataset:
    """Generate ground truth (and frames, when render=True) for a scene.

    Per frame and camera the true 2D box comes from projecting the ball:
    box side = 2 * ball_radius * fx / depth. vis is 0 under occlusion or
    when the projection falls outside the image; occluded-but-in-image
    rows still carry the projected box.
    """
    for cid, a, b in occlusions.intervals:
        if b > config.n_frames:
            raise SimError(f"occlusion interval ({cid}, {a}, {b}) exceeds {config.n_frames} frames")

    if court is None:
        court = default_court()

    n = config.n_frames
    truth3d = np.empty((n, 3))
    for fn in range(n):
        truth3d[fn] = trajectory.position(fn / config.fps)

    gt: dict[int, list[GtRecord]] = {}
    court2d: dict[int, CourtFile2D] = {}
    proj_cache: dict[int, list] = {}

    for cam in rig:
        records = []
        projections = []
        for fn in range(n):
            try:
                px, depth = project(cam, truth3d[fn])
            except PointBehindCamera:
                records.append(GtRecord(fn, None, 0))
                projections.append(None)
                continue
            side = max(1, int(round(2.0 * config.ball_radius * cam.intrinsics.fx / depth)))
            inside = in_image(cam, px)
            box = (
                RoiBox(int(round(px[0] - side / 2.0)), int(round(px[1] - side / 2.0)), side, side)
                if inside
                else None
            )
            vis = 1 if inside and not occlusions.occluded(cam.cam_id, fn) else 0
            records.append(GtRecord(fn, box, vis))
            projections.append((px, depth))
        gt[cam.cam_id] = records
        proj_cache[cam.cam_id] = projections

        try:
            contour_px = camera_court_mask(court, cam)
        except CourtNotVisible:
            contour_px = np.zeros((0, 2))
        line_pts = []
        for idx, (lx, ly) in court.lines:
            try:
                lpx, _ = project(cam, np.array([lx, ly, 0.0]))
            except PointBehindCamera:
                continue
            line_pts.append((idx, float(lpx[0]), float(lpx[1])))
        if contour_px.shape[0] < 3:
            # degenerate masks still need a parseable court file
            w, h = cam.image_size
            contour_px = np.array([[0.0, 0.0], [float(w), 0.0], [float(w), float(h)]])
        court2d[cam.cam_id] = CourtFile2D(contour_px, tuple(line_pts))

    frames: dict[int, list] = {}
    backgrounds: dict[int, np.ndarray] = {}
    if config.render:
        tracks = _distractor_tracks(config, court) if config.n_distractors else None
        for cam in rig:
            w, h = cam.image_size
            bg = np.full((h, w), config.background_level, dtype=np.uint8)
            backgrounds[cam.cam_id] = bg
            seq = []
            for fn in range(n):
                img = bg.copy()
                if tracks is not None:
                    for i in range(config.n_distractors):
                        gp = np.array([tracks[i, fn, 0], tracks[i, fn, 1], 0.9])
                        try:
                            dpx, ddepth = project(cam, gp)
                        except PointBehindCamera:
                            continue
                        _draw_disc(img, dpx[0], dpx[1], 0.9 * cam.intrinsics.fx / ddepth, 150)
                proj = proj_cache[cam.cam_id][fn]
                if proj is not None and not occlusions.occluded(cam.cam_id, fn):
                    px, depth = proj
                    _draw_disc(img, px[0], px[1], config.ball_radius * cam.intrinsics.fx / depth, 255)
                seq.append(img)
            frames[cam.cam_id] = seq

    return Dataset(
        rig=rig,
        court=court,
        fps=config.fps,
        ball_radius=config.ball_radius,
        truth3d=truth3d,
        gt=gt,
        court2d=court2d,
        frames=frames,
        backgrounds=backgrounds,
        bg_frame_index=config.bg_frame_index,
    )


# ---------------------------------------------------------------------------
# Dataset directory I/O

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset(dataset: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_rig(dataset.rig, out / "rig.txt")

    lines = [f"# fps {_fmt(dataset.fps)} ball_radius {_fmt(dataset.ball_radius)}", "# frm_no x y z"]
    for fn, p in enumerate(dataset.truth3d):
        lines.append(f"{fn} {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    (out / "truth3d.txt").write_text("\n".join(lines) + "\n")

    L, W = dataset.court.dimensions
    court_cf = CourtFile2D(
        dataset.court.contour, tuple((i, x, y) for i, (x, y) in dataset.court.lines)
    )
    (out / "court3d.txt").write_text(f"# dims {_fmt(L)} {_fmt(W)}\n" + render_court_file(court_cf))

    for cam in dataset.rig:
        cid = cam.cam_id
        cam_dir = out / f"C{cid:03d}"
        cam_dir.mkdir(exist_ok=True)
        (cam_dir / "groundtruth.txt").write_text(render_groundtruth(dataset.gt[cid]))
        (cam_dir / "court.txt").write_text(render_court_file(dataset.court2d[cid]))
        if dataset.rendered:
            for fn, img in enumerate(dataset.frames[cid]):
                write_pgm(cam_dir / frame_filename(cid, fn), img)
            write_pgm(cam_dir / frame_filename(cid, dataset.bg_frame_index), dataset.backgrounds[cid])
    return out


def read_dataset(in_dir, bg_frame_index: int = 9999) -> Dataset:
    src = Path(in_dir)
    if not src.is_dir():
        raise SimError(f"dataset directory {src} does not exist")
    rig = load_rig(src / "rig.txt")

    fps = 25.0
    ball_radius = 0.11
    truth_rows = []
    for raw in (src / "truth3d.txt").read_text().splitlines():
        if raw.startswith("# fps"):
            parts = raw.split()
            fps, ball_radius = float(parts[2]), float(parts[4])
            continue
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        truth_rows.append((int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
    truth_rows.sort()
    truth3d = np.array([[x, y, z] for _, x, y, z in truth_rows]).reshape(-1, 3)

    court_text = (src / "court3d.txt").read_text()
    dims = (105.0, 68.0)
    for raw in court_text.splitlines():
        if raw.startswith("# dims"):
            parts = raw.split()
            dims = (float(parts[2]), float(parts[3]))
            break
    ccf = parse_court_file(court_text)
    court = CourtModel(ccf.contour, tuple((i, (x, y)) for i, x, y in ccf.lines), dims)

    gt = {}
    court2d = {}
    frames: dict[int, list] = {}
    backgrounds: dict[int, np.ndarray] = {}
    for cam in rig:
        cid = cam.cam_id
        cam_dir = src / f"C{cid:03d}"
        if not cam_dir.is_dir():
            raise SimError(f"missing camera folder {cam_dir}")
        gt[cid] = parse_groundtruth((cam_dir / "groundtruth.txt").read_text())
        court2d[cid] = parse_court_file((cam_dir / "court.txt").read_text())
        bg_path = cam_dir / frame_filename(cid, bg_frame_index)
        if bg_path.exists():
            backgrounds[cid] = read_pgm(bg_path)
            seq = []
            fn = 0
            while (cam_dir / frame_filename(cid, fn)).exists():
                seq.append(read_pgm(cam_dir / frame_filename(cid, fn)))
                fn += 1
            frames[cid] = seq

    return Dataset(
        rig=rig,
        court=court,
        fps=fps,
        ball_radius=ball_radius,
        truth3d=truth3d,
        gt=gt,
        court2d=court2d,
        frames=frames,
        backgrounds=backgrounds,
        bg_frame_index=bg_frame_index,
    )
