"""Command-line interface tying the pipelines together.

Subcommands: gen-marker, gen-sequence, detect, eval-fiducial, sim-land,
gen-terrain, analyze-terrain, eval-terrain, bench. Every command takes an
optional JSON config (``--config``) plus dotted overrides (``--set``),
and is deterministic for a fixed seed and config: reruns produce
byte-identical data files (bench timing output excluded).

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 evaluation
gate failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import BENCHMARK_PARAMS, evaluate_kind_seed, evaluate_sequence, paired_sign_test
from .config import ConfigError, RunConfig, dataclass_to_dict, load_config
from .datasets import load_depth_dataset, load_sequence, save_depth_dataset, save_sequence
from .detector import Variant, detect
from .geometry import Pose
from .lander import LanderConfig, simulate_landing
from .marker import MOTION_KINDS, generate_motion_sequence, marker_pose, render_marker
from .pgm import PgmError, write_pgm
from .synth_terrain import TerrainTruth, camera_pose_from_attitude, generate_terrain, render_depth
from .targets import (
    CameraOrientation,
    MarkerOrientation,
    MetricsReport,
    detect_discontinuities,
    load_external_pose_stream,
)
from .terrain import (
    CellClass,
    estimate_attitude,
    find_landing_sites,
    hazard_mask,
    rectify_depth,
    score_hazard_mask,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_EVAL = 4


def _write_json(path, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _variant(cfg: RunConfig) -> Variant:
    return Variant.ORIGINAL if cfg.variant == "original" else Variant.ELLIPSE


def _source(cfg: RunConfig):
    return MarkerOrientation() if cfg.orientation_source == "marker" else CameraOrientation()


# --- commands ---------------------------------------------------------------


def cmd_gen_marker(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    K = cfg.camera.intrinsics()
    pose = marker_pose(args.range, math.radians(args.deflection), spin=args.spin)
    frame = render_marker(K, cfg.marker, pose, supersample=args.supersample, seed=cfg.seed)
    write_pgm(out / "marker.pgm", frame.image)
    q, t = frame.truth_pose.rotation, frame.truth_pose.translation
    _write_json(
        out / "marker.json",
        {
            "id": cfg.marker.id,
            "pose": {"q": [float(v) for v in q], "t": [float(v) for v in t]},
            "range_m": args.range,
            "deflection_deg": args.deflection,
        },
    )
    print(f"wrote {out / 'marker.pgm'}")
    return EXIT_OK


def cmd_gen_sequence(cfg: RunConfig, args) -> int:
    K = cfg.camera.intrinsics()
    kinds = MOTION_KINDS if args.kind == "all" else (args.kind,)
    for kind in kinds:
        params = dataclasses.replace(BENCHMARK_PARAMS[kind], n_frames=args.frames) if args.benchmark else dataclasses.replace(cfg.motion, n_frames=args.frames)
        frames = generate_motion_sequence(kind, params, cfg.seed, K=K, spec=cfg.marker)
        manifest = save_sequence(frames, Path(args.out) / kind, K)
        print(f"wrote {manifest} ({len(frames)} frames)")
    return EXIT_OK


DETECT_HEADER = [
    "timestamp_s", "id", "u", "v", "a", "b", "theta",
    "tx", "ty", "tz", "n0x", "n0y", "n0z", "n1x", "n1y", "n1z",
    "chosen", "score0", "score1",
]


def cmd_detect(cfg: RunConfig, args) -> int:
    frames, K = load_sequence(args.manifest)
    variant = _variant(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(DETECT_HEADER)
        n = 0
        for frame in frames:
            for det in detect(frame.image, K, cfg.marker, variant, timestamp=frame.timestamp, config=cfg.detector):
                e = det.ellipse
                c = det.candidates
                writer.writerow(
                    [repr(det.timestamp), det.id]
                    + [repr(float(v)) for v in (e.u, e.v, e.a, e.b, e.theta)]
                    + [repr(float(v)) for v in det.position]
                    + [repr(float(v)) for v in c.normal0]
                    + [repr(float(v)) for v in c.normal1]
                    + [det.chosen, repr(det.score0), repr(det.score1)]
                )
                n += 1
    print(f"wrote {out} ({n} detections over {len(frames)} frames)")
    return EXIT_OK


def cmd_eval_fiducial(cfg: RunConfig, args) -> int:
    rows = []
    if args.external:
        stream = load_external_pose_stream(args.external)
        report = detect_discontinuities(stream, v_thresh=cfg.metrics.v_thresh, w_thresh=cfg.metrics.w_thresh)
        rows.append(
            {
                "kind": "external",
                "seed": 0,
                "variant": "external",
                "mode": "external",
                "n_frames": len(stream),
                "n_detections": len(stream),
                "detection_rate": report.detection_rate,
                "discontinuity_rate": report.discontinuity_rate,
                "wrong_candidate_rate": float("nan"),
                "events": len(report.events),
            }
        )
    elif args.manifest:
        frames, K = load_sequence(args.manifest)
        for variant in (Variant.ORIGINAL, Variant.ELLIPSE):
            dets = [detect(f.image, K, cfg.marker, variant, timestamp=f.timestamp, config=cfg.detector) for f in frames]
            for mode in ("marker", "camera"):
                score = evaluate_sequence(
                    frames, K, cfg.marker, variant, mode,
                    kind=Path(args.manifest).parent.name,
                    seed=cfg.seed,
                    v_thresh=cfg.metrics.v_thresh,
                    w_thresh=cfg.metrics.w_thresh,
                    detections=dets,
                )
                rows.append(score.to_dict())
    else:
        jobs = [(kind, seed) for kind in MOTION_KINDS for seed in range(args.seeds)]
        if args.jobs > 1:
            with Pool(args.jobs) as pool:
                results = pool.starmap(evaluate_kind_seed, jobs)
        else:
            results = [evaluate_kind_seed(kind, seed) for kind, seed in jobs]
        for scores in results:
            rows.extend(s.to_dict() for s in scores)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "fiducial_metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    summary = _summarize_fiducial(rows)
    _write_json(out / "fiducial_summary.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.require_ordering and not summary.get("ordering_holds", False):
        return EXIT_EVAL
    return EXIT_OK


def _summarize_fiducial(rows: list[dict]) -> dict:
    marker_rows = [r for r in rows if r["mode"] == "marker"]
    camera_rows = [r for r in rows if r["mode"] == "camera"]
    by_key = {}
    for r in marker_rows:
        by_key[(r["kind"], r["seed"], r["variant"])] = r["discontinuity_rate"]
    wins = losses = ties = 0
    for kind, seed, variant in list(by_key):
        if variant != "original":
            continue
        o = by_key[(kind, seed, "original")]
        e = by_key.get((kind, seed, "ellipse"))
        if e is None:
            continue
        if o > e:
            wins += 1
        elif e > o:
            losses += 1
        else:
            ties += 1
    summary: dict = {"pairs": wins + losses + ties, "original_worse": wins, "ellipse_worse": losses, "ties": ties}
    if wins + losses > 0:
        summary["sign_test_p"] = paired_sign_test(wins, losses)
    for variant in ("original", "ellipse"):
        sel = [r["discontinuity_rate"] for r in marker_rows if r["variant"] == variant]
        if sel:
            summary[f"mean_discontinuity_rate_{variant}"] = float(np.mean(sel))
    if camera_rows:
        summary["camera_mode_total_events"] = int(sum(r["events"] for r in camera_rows))
    if "mean_discontinuity_rate_original" in summary and "mean_discontinuity_rate_ellipse" in summary:
        summary["ordering_holds"] = bool(
            summary["mean_discontinuity_rate_ellipse"] < summary["mean_discontinuity_rate_original"]
            and summary.get("sign_test_p", 1.0) < 0.05
        )
    return summary


def _one_landing(args_tuple):
    cfg_dict, variant_name, source_name, seed = args_tuple
    from .config import dataclass_from_dict

    cfg = dataclass_from_dict(RunConfig, cfg_dict)
    world = cfg.world.landing_world(cfg.marker)
    variant = Variant.ORIGINAL if variant_name == "original" else Variant.ELLIPSE
    source = MarkerOrientation() if source_name == "marker" else CameraOrientation()
    result = simulate_landing(world, variant, source, cfg.lander, seed=seed, detector_config=cfg.detector)
    return result


TRAJECTORY_HEADER = [
    "t", "phase", "x", "y", "z", "yaw", "gimbal_tilt", "u_n", "v_n", "east", "north", "up", "detected",
]


def cmd_sim_land(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = dataclass_to_dict(cfg)
    jobs = [(cfg_dict, cfg.variant, cfg.orientation_source, cfg.seed + i) for i in range(args.runs)]
    if args.jobs > 1:
        with Pool(args.jobs) as pool:
            results = pool.map(_one_landing, jobs)
    else:
        results = [_one_landing(j) for j in jobs]

    radii = []
    successes = 0
    total_events = 0
    for i, res in enumerate(results):
        with open(out / f"trajectory_{i:03d}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(TRAJECTORY_HEADER)
            for s in res.trajectory:
                writer.writerow(
                    [repr(s.t), s.phase]
                    + [repr(float(v)) for v in (s.x, s.y, s.z, s.yaw, s.gimbal_tilt)]
                    + ["" if s.u_n is None else repr(s.u_n), "" if s.v_n is None else repr(s.v_n)]
                    + ["" if s.east is None else repr(s.east), "" if s.north is None else repr(s.north), "" if s.up is None else repr(s.up)]
                    + [int(s.detected)]
                )
        if res.reached_touchdown:
            successes += 1
            radii.append(res.landing_radius)
        total_events += len(res.metrics.events)

    summary = {
        "runs": args.runs,
        "variant": cfg.variant,
        "orientation_source": cfg.orientation_source,
        "touchdowns": successes,
        "landing_radii_m": sorted(round(r, 6) for r in radii),
        "median_radius_m": float(np.median(radii)) if radii else None,
        "discontinuity_events": total_events,
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gen_terrain(cfg: RunConfig, args) -> int:
    K = cfg.camera.intrinsics()
    rng = np.random.default_rng(cfg.seed)
    truth = generate_terrain(cfg.synth_terrain, seed=cfg.seed)
    frames = []
    poses = []
    for i in range(args.frames):
        pitch = float(rng.uniform(-0.2, 0.2))
        roll = float(rng.uniform(-0.2, 0.2))
        pos = [float(rng.uniform(-1.0, 1.0)), float(rng.uniform(-1.0, 1.0)), args.altitude]
        pose = camera_pose_from_attitude(pitch, roll, pos)
        frames.append(
            render_depth(truth, pose, K, noise_scale=args.noise_scale, seed=int(rng.integers(0, 2**31)), timestamp=i * 0.125)
        )
        poses.append(pose)
    manifest = save_depth_dataset(args.out, frames, poses, truth=truth)
    print(f"wrote {manifest} ({len(frames)} frames)")
    return EXIT_OK


def _analyze_frames(cfg: RunConfig, frames, out: Path | None):
    """Run the full pipeline per frame; returns per-frame (hm, mask, sites)."""
    results = []
    attitude = (0.0, 0.0)
    t_prev = None
    for i, frame in enumerate(frames):
        dt = 0.125 if t_prev is None else max(frame.timestamp - t_prev, 1e-3)
        t_prev = frame.timestamp
        # Burn-in the complementary filter on the first frame's IMU.
        iters = 60 if i == 0 else 1
        for _ in range(iters):
            attitude = estimate_attitude(frame.accel, frame.gyro, attitude, dt=dt)
        hm = rectify_depth(frame, attitude[0], attitude[1], cfg.terrain.cell_size, cfg.terrain.min_valid_fraction)
        mask = hazard_mask(hm, sigma=cfg.terrain.smooth_sigma, slope_max=cfg.terrain.slope_max)
        sites = find_landing_sites(
            hm,
            mask,
            min_area=cfg.terrain.min_area,
            max_tilt=cfg.terrain.max_tilt,
            max_roughness=cfg.terrain.max_roughness,
            min_inlier_fraction=cfg.terrain.min_inlier_fraction,
        )
        if out is not None:
            write_pgm(out / f"hazard_{i:05d}.pgm", mask.classes)
            _write_json(
                out / f"sites_{i:05d}.json",
                {
                    "origin_east_m": float(hm.origin[0]),
                    "origin_north_m": float(hm.origin[1]),
                    "cell_size_m": hm.cell_size,
                    "sites": [s.to_dict() for s in sites],
                },
            )
        results.append((hm, mask, sites))
    return results


def cmd_analyze_terrain(cfg: RunConfig, args) -> int:
    frames, _, _ = load_depth_dataset(Path(args.dataset))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = _analyze_frames(cfg, frames, out)
    n_sites = sum(len(sites) for _, _, sites in results)
    print(f"analyzed {len(frames)} frames -> {n_sites} landing sites; outputs in {out}")
    return EXIT_OK


def cmd_eval_terrain(cfg: RunConfig, args) -> int:
    frames, truth, poses = load_depth_dataset(Path(args.dataset))
    if truth is None:
        print("dataset has no ground truth (generate with gen-terrain)", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = _analyze_frames(cfg, frames, out if args.write_masks else None)
    scores = []
    for (hm, mask, sites), pose in zip(results, poses):
        east, north = hm.cell_centers()
        lab = truth.label_at(east + pose.translation[0], north + pose.translation[1])
        known = lab != 255
        score = score_hazard_mask(mask, (lab > 0) & known, known)
        score["n_sites"] = len(sites)
        scores.append(score)
    summary = {
        "frames": len(scores),
        "mean_precision": float(np.mean([s["precision"] for s in scores])),
        "mean_recall": float(np.mean([s["recall"] for s in scores])),
        "mean_f1": float(np.mean([s["f1"] for s in scores])),
        "per_frame": scores,
    }
    _write_json(out / "terrain_scores.json", summary)
    print(
        f"frames={summary['frames']} precision={summary['mean_precision']:.3f} "
        f"recall={summary['mean_recall']:.3f} f1={summary['mean_f1']:.3f}"
    )
    if summary["mean_recall"] < args.min_recall or summary["mean_precision"] < args.min_precision:
        return EXIT_EVAL
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {}

    if args.suite in ("fiducial", "all"):
        K = cfg.camera.intrinsics()
        pose = marker_pose(2.0, math.radians(20.0), azimuth=0.4, spin=0.7)
        frame = render_marker(K, cfg.marker, pose, supersample=2, seed=cfg.seed)
        variant = _variant(cfg)
        detect(frame.image, K, cfg.marker, variant, config=cfg.detector)  # warmup
        times = []
        for _ in range(args.frames):
            t0 = time.perf_counter()
            detect(frame.image, K, cfg.marker, variant, config=cfg.detector)
            times.append(time.perf_counter() - t0)
        report["detect"] = {
            "resolution": f"{K.width}x{K.height}",
            "frames": args.frames,
            "mean_ms": 1000.0 * float(np.mean(times)),
            "fps": 1.0 / float(np.mean(times)),
        }

    if args.suite in ("terrain", "all"):
        K = cfg.camera.intrinsics()
        truth = generate_terrain(cfg.synth_terrain, seed=cfg.seed)
        pose = camera_pose_from_attitude(0.05, -0.04, [0.0, 0.0, 5.5])
        frame = render_depth(truth, pose, K, noise_scale=0.001, seed=cfg.seed)
        stage_times = {"rectify": [], "mask": [], "sites": []}
        # warmup
        hm = rectify_depth(frame, 0.05, -0.04, cfg.terrain.cell_size)
        mask = hazard_mask(hm, cfg.terrain.smooth_sigma, cfg.terrain.slope_max)
        find_landing_sites(hm, mask, cfg.terrain.min_area, cfg.terrain.max_tilt, cfg.terrain.max_roughness)
        total = []
        for _ in range(args.frames):
            t0 = time.perf_counter()
            hm = rectify_depth(frame, 0.05, -0.04, cfg.terrain.cell_size)
            t1 = time.perf_counter()
            mask = hazard_mask(hm, cfg.terrain.smooth_sigma, cfg.terrain.slope_max)
            t2 = time.perf_counter()
            find_landing_sites(hm, mask, cfg.terrain.min_area, cfg.terrain.max_tilt, cfg.terrain.max_roughness)
            t3 = time.perf_counter()
            stage_times["rectify"].append(t1 - t0)
            stage_times["mask"].append(t2 - t1)
            stage_times["sites"].append(t3 - t2)
            total.append(t3 - t0)
        report["terrain"] = {
            "resolution": f"{K.width}x{K.height}",
            "frames": args.frames,
            "stage_mean_ms": {k: 1000.0 * float(np.mean(v)) for k, v in stage_times.items()},
            "mean_ms": 1000.0 * float(np.mean(total)),
            "fps": 1.0 / float(np.mean(total)),
        }

    _write_json(out / "bench.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    ok = True
    if "detect" in report and report["detect"]["fps"] < 10.0:
        ok = False
    if "terrain" in report and report["terrain"]["fps"] < 8.0:
        ok = False
    return EXIT_OK if ok else EXIT_EVAL


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autoland", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("gen-marker", help="render a single marker frame")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--range", type=float, default=1.5)
    p.add_argument("--deflection", type=float, default=0.0, help="degrees")
    p.add_argument("--spin", type=float, default=0.0, help="radians")
    p.add_argument("--supersample", type=int, default=2)
    p.set_defaults(func=cmd_gen_marker)

    p = sub.add_parser("gen-sequence", help="render camera-motion sequences")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=MOTION_KINDS + ("all",), default="all")
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--benchmark", action="store_true", help="use the benchmark motion parameters")
    p.set_defaults(func=cmd_gen_sequence)

    p = sub.add_parser("detect", help="detect markers in a rendered sequence")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval-fiducial", help="score variants and modes on the benchmark")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="score one rendered sequence instead of the seeded benchmark")
    p.add_argument("--external", help="score an external position-target CSV")
    p.add_argument("--seeds", type=int, default=25)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--require-ordering", action="store_true", help="exit 4 unless ellipse beats original")
    p.set_defaults(func=cmd_eval_fiducial)

    p = sub.add_parser("sim-land", help="closed-loop landing batch")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sim_land)

    p = sub.add_parser("gen-terrain", help="generate labeled terrain and depth frames")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--altitude", type=float, default=5.5)
    p.add_argument("--noise-scale", type=float, default=0.001)
    p.set_defaults(func=cmd_gen_terrain)

    p = sub.add_parser("analyze-terrain", help="run the hazard pipeline on a depth dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_terrain)

    p = sub.add_parser("eval-terrain", help="score the hazard pipeline against dataset truth")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--write-masks", action="store_true")
    p.add_argument("--min-recall", type=float, default=0.0)
    p.add_argument("--min-precision", type=float, default=0.0)
    p.set_defaults(func=cmd_eval_terrain)

    p = sub.add_parser("bench", help="single-core throughput per pipeline stage")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--suite", choices=("fiducial", "terrain", "all"), default="all")
    p.add_argument("--frames", type=int, default=30)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, PgmError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
