"""Command-line entry point: simulate, track, eval, bench.

Runs are configured by a plain key=value text file with [section]
headers and '#' comments. Detector thresholds appear under their
conventional parameter names (DET_CONF, IOU_THD, RESIZE, Distance,
Alpha); Alpha belongs to detector training, which this package does not
do — it is parsed and ignored.

Exit codes: 0 success, 2 configuration error, 3 dataset error,
4 evaluation misalignment.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detector import DetectorConfig, NoiseModel, OracleDetector, TemplateDiscDetector
from .evaluate import (
    FrameMisalignment,
    MatchCriterion,
    Report,
    average_precision,
    eval_3d,
    match_sequence,
)
from .fusion import LmSettings
from .sim import (
    OcclusionSchedule,
    RigLayout,
    SimConfig,
    SimError,
    TrajectoryModel,
    build_rig,
    default_court,
    read_dataset,
    simulate,
    write_dataset,
)
from .tracker import (
    Pipeline,
    Strategy,
    TrackerError,
    parse_outputs,
    render_outputs,
    run_sequence,
)

__all__ = ["ConfigError", "RunConfig", "BenchRecord", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_EVAL = 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Parsed run configuration: sections of key=value pairs."""

    sections: dict = field(default_factory=dict)
    path: str = "<defaults>"

    @classmethod
    def parse(cls, text: str, path: str = "<string>") -> "RunConfig":
        sections: dict[str, dict[str, str]] = {}
        current = "run"
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                sections.setdefault(current, {})
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, val = line.split("=", 1)
            sections.setdefault(current, {})[key.strip()] = val.strip()
        return cls(sections, path)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        return cls.parse(p.read_text(), str(p))

    def get(self, section: str, key: str, cast, default):
        raw = self.sections.get(section, {}).get(key)
        if raw is None:
            return default
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError as e:
            raise ConfigError(f"{self.path}: [{section}] {key} = {raw!r}: {e}") from e

    # -- typed views over the sections --------------------------------------

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            det_conf=self.get("detector", "DET_CONF", float, 0.9),
            iou_thd=self.get("detector", "IOU_THD", float, 0.2),
            input_size=self.get("detector", "RESIZE", int, 160),
        )

    def noise_model(self) -> NoiseModel:
        return NoiseModel(
            sigma_px=self.get("noise", "sigma_px", float, 0.0),
            p_miss=self.get("noise", "p_miss", float, 0.0),
            lambda_fp=self.get("noise", "lambda_fp", float, 0.0),
        )

    def rig_layout(self) -> RigLayout:
        return RigLayout(
            court_length=self.get("sim", "court_length", float, 105.0),
            court_width=self.get("sim", "court_width", float, 68.0),
            n_cameras=self.get("sim", "n_cameras", int, 36),
            mount_height=self.get("sim", "mount_height", float, 20.0),
            mount_offset=self.get("sim", "mount_offset", float, 15.0),
            look_at=self.get("sim", "look_at", str, "center"),
            image_size=(
                self.get("sim", "image_width", int, 640),
                self.get("sim", "image_height", int, 400),
            ),
            focal_px=self.get("sim", "focal_px", float, 560.0),
        )

    def sim_config(self, seed: int | None = None) -> SimConfig:
        return SimConfig(
            seed=self.get("run", "seed", int, 0) if seed is None else seed,
            fps=self.get("sim", "fps", float, 25.0),
            n_frames=self.get("sim", "n_frames", int, 450),
            noise=self.noise_model(),
            render=self.get("sim", "render", bool, False),
            ball_radius=self.get("sim", "ball_radius", float, 0.11),
            background_level=self.get("sim", "background_level", int, 96),
            n_distractors=self.get("sim", "n_distractors", int, 0),
        )

    def strategy(self, override: str | None = None) -> Strategy:
        variant = override or self.get("run", "strategy", str, "M3")
        return Strategy(variant, self.get("tracker", "M1_interval", int, 5))

    def dist_thd_m(self) -> float:
        # the Distance parameter is given in centimeters
        return self.get("tracker", "Distance", float, 50.0) / 100.0

    def pipeline(self, rig, detector, court=None) -> Pipeline:
        # Alpha is accepted (training regularization factor) but unused here
        self.get("tracker", "Alpha", float, 0.5)
        return Pipeline(
            rig,
            detector,
            det_config=self.detector_config(),
            dist_thd_m=self.dist_thd_m(),
            lm_settings=LmSettings(),
            fps=self.get("sim", "fps", float, 25.0),
            v_max=self.get("tracker", "v_max", float, 45.0),
            a_max=self.get("tracker", "a_max", float, 400.0),
            buffer_capacity=self.get("tracker", "buffer_frames", int, 38),
            s1_factor=self.get("tracker", "s1_factor", float, 4.0),
            s2_factor=self.get("tracker", "s2_factor", float, 10.0),
            reproj_roi_radius_px=self.get("tracker", "reproj_roi_radius", int, 24),
            court=court,
        )


@dataclass
class BenchRecord:
    """Wall-time and detector-call accounting for one track run."""

    frame_times_ms: list
    total_ms: float
    full_image_calls: int
    roi_calls: int
    work_units: float

    @property
    def mean_frame_ms(self) -> float:
        return float(np.mean(self.frame_times_ms)) if self.frame_times_ms else 0.0

    def render(self) -> str:
        lines = [
            f"frames = {len(self.frame_times_ms)}",
            f"total_ms = {self.total_ms:.3f}",
            f"mean_frame_ms = {self.mean_frame_ms:.3f}",
            f"full_image_calls = {self.full_image_calls}",
            f"roi_calls = {self.roi_calls}",
            f"work_units = {self.work_units:.3f}",
            "frame_ms = " + " ".join(f"{t:.3f}" for t in self.frame_times_ms),
        ]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Commands

def cmd_simulate(args) -> int:
    try:
        cfg = RunConfig.load(args.config)
        layout = cfg.rig_layout()
        sim_cfg = cfg.sim_config(seed=args.seed)
        occl_fraction = cfg.get("sim", "occlusion_fraction", float, 0.0)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rig = build_rig(layout)
        court = default_court(layout.court_length, layout.court_width)
        trajectory = TrajectoryModel.random_play(
            sim_cfg.seed,
            duration=sim_cfg.n_frames / sim_cfg.fps,
            court_dims=(layout.court_length, layout.court_width),
            ball_radius=sim_cfg.ball_radius,
        )
        occlusions = OcclusionSchedule()
        if occl_fraction > 0:
            occlusions = OcclusionSchedule.random_episodes(
                sim_cfg.seed,
                rig.ids(),
                sim_cfg.n_frames,
                fraction=occl_fraction,
                min_len=cfg.get("sim", "occlusion_min_len", int, 10),
                max_len=cfg.get("sim", "occlusion_max_len", int, 50),
            )
        dataset = simulate(sim_cfg, rig, trajectory, occlusions, court=court)
        out = write_dataset(dataset, args.out)
    except (SimError, OSError) as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return EXIT_DATASET
    n_occluded, frac = dataset.occlusion_stats()
    print(f"dataset written to {out}")
    print(f"frames: {dataset.n_frames}  cameras: {len(rig)}  rendered: {dataset.rendered}")
    print(f"occluded/out-of-view rows: {n_occluded} ({frac:.1%})")
    return EXIT_OK


def _build_detector(cfg: RunConfig, dataset, choice: str, seed: int):
    if choice == "oracle":
        return OracleDetector(dataset.truth_lookup(), cfg.noise_model(), seed=seed)
    if choice == "template":
        return TemplateDiscDetector(cfg.detector_config())
    raise ConfigError(f"unknown detector {choice!r} (expected oracle or template)")


def cmd_track(args) -> int:
    try:
        cfg = RunConfig.load(args.config)
        strategy = cfg.strategy(args.strategy)
        detector_choice = args.detector or cfg.get("run", "detector", str, "oracle")
        seed = args.seed if args.seed is not None else cfg.get("run", "seed", int, 0)
        dataset_dir = args.dataset or cfg.get("run", "dataset", str, None)
        if dataset_dir is None:
            raise ConfigError("no dataset directory (give --dataset or [run] dataset)")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        dataset = read_dataset(dataset_dir)
        detector = _build_detector(cfg, dataset, detector_choice, seed)
        pipeline = cfg.pipeline(dataset.rig, detector, court=dataset.court)
        for cid, bg in dataset.backgrounds.items():
            pipeline.seed_background(cid, bg)
        frame_times: list[float] = []
        t0 = time.perf_counter()
        outputs, stats = run_sequence(pipeline, dataset, strategy, frame_times_ms=frame_times)
        total_ms = (time.perf_counter() - t0) * 1000.0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimError, TrackerError, OSError) as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_DATASET

    Path(args.out).write_text(render_outputs(outputs))
    record = BenchRecord(frame_times, total_ms, stats.full_image_calls, stats.roi_calls, stats.work_units)
    bench_path = args.bench or (str(args.out) + ".bench")
    Path(bench_path).write_text(record.render())
    n_ok = sum(1 for o in outputs if o.status == "OK")
    print(f"tracked {len(outputs)} frames ({strategy.variant}): {n_ok} OK")
    print(
        f"detector calls: {stats.full_image_calls} full-image, {stats.roi_calls} ROI, "
        f"work {stats.work_units:.1f} window-units"
    )
    print(f"outputs: {args.out}\nbench:   {bench_path}")
    return EXIT_OK


CRITERIA_2D = (
    MatchCriterion.iou_at(0.2),
    MatchCriterion.iou_at(1e-6),
    MatchCriterion.center_dist_px(50.0),
)


def cmd_eval(args) -> int:
    try:
        cfg = RunConfig.load(args.config)
        dataset_dir = args.dataset or cfg.get("run", "dataset", str, None)
        if dataset_dir is None:
            raise ConfigError("no dataset directory (give --dataset or [run] dataset)")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        dataset = read_dataset(dataset_dir)
        outputs = parse_outputs(Path(args.outputs).read_text())
    except (SimError, TrackerError, OSError) as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_DATASET

    try:
        report = Report()
        for cam in dataset.rig:
            cid = cam.cam_id
            dets_per_frame = {
                o.frame_no: [(o.per_camera_2d[cid], 1.0)] if cid in o.per_camera_2d else []
                for o in outputs
            }
            for crit in CRITERIA_2D:
                counts = match_sequence(dets_per_frame, dataset.gt[cid], crit)
                ap = average_precision(dets_per_frame, dataset.gt[cid], crit)
                report.add_camera(cid, crit, counts, ap)
        report.three_d = eval_3d(outputs, dataset.truth3d, d_m=cfg.dist_thd_m())
    except FrameMisalignment as e:
        print(f"evaluation misalignment: {e}", file=sys.stderr)
        return EXIT_EVAL

    print(report.render_text())
    print(report.render_kv(), end="")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import render_bench_table, run_kernel_bench

    rows = run_kernel_bench(repeats=args.repeats)
    print(render_bench_table(rows), end="")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mvball", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_trk = sub.add_parser("track", help="run the tracking pipeline over a dataset")
    p_trk.add_argument("--config", required=True)
    p_trk.add_argument("--dataset", default=None)
    p_trk.add_argument("--out", required=True)
    p_trk.add_argument("--strategy", choices=["M1", "M2", "M3"], default=None)
    p_trk.add_argument("--detector", choices=["oracle", "template"], default=None)
    p_trk.add_argument("--seed", type=int, default=None)
    p_trk.add_argument("--bench", default=None, help="bench record path (default: <out>.bench)")
    p_trk.set_defaults(func=cmd_track)

    p_evl = sub.add_parser("eval", help="evaluate tracker outputs against ground truth")
    p_evl.add_argument("--config", required=True)
    p_evl.add_argument("--dataset", default=None)
    p_evl.add_argument("--outputs", required=True)
    p_evl.set_defaults(func=cmd_eval)

    p_bch = sub.add_parser("bench", help="benchmark the numba kernels against pure numpy")
    p_bch.add_argument("--repeats", type=int, default=3)
    p_bch.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
