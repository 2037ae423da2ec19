"""Command-line entry point: ``densevo {run,track,eval,mesh}``.

Exit codes: 0 success, 1 configuration error, 2 dataset error,
3 initialization never succeeded.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, DatasetError, EvaluationError, LoadError
from ..imaging import as_gray, curvature_of
from ..recon.ply import export_ply
from ..recon.tsdf import TsdfVolume, extract_surface
from ..tracking.tracker import TrackSet, advance_tracks, seed_tracks
from .config import PipelineConfig, load_config
from .dataset import load_ground_truth, load_sequence, read_camera_yaml
from .runner import run_pipeline
from .trajectory import evaluate_ate, export_trajectory, load_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_DATASET, EXIT_NO_INIT = 0, 1, 2, 3

log = logging.getLogger("densevo")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI configuration file")
    p.add_argument("--output", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    p.add_argument("--max-frames", type=int, help="stop after this many frames")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="densevo", description="Dense curvature-extrema monocular VO")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full pipeline: trajectory, mesh and statistics")
    run.add_argument("dataset", nargs="?", help="dataset root (overrides [run] dataset)")
    _common(run)

    track = sub.add_parser("track", help="tracking-only diagnostics per frame")
    track.add_argument("dataset", nargs="?", help="dataset root (overrides [run] dataset)")
    _common(track)

    ev = sub.add_parser("eval", help="scale-aligned ATE between two trajectories")
    ev.add_argument("estimated", type=Path)
    ev.add_argument("ground_truth", type=Path, help="trajectory file, EuRoC CSV or dataset root")
    _common(ev)

    mesh = sub.add_parser("mesh", help="extract a surface from a saved TSDF volume")
    mesh.add_argument("volume", type=Path)
    mesh.add_argument("--ascii", action="store_true", help="write ASCII PLY instead of binary")
    _common(mesh)
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.max_frames is not None:
        if args.max_frames < 0:
            raise ConfigError("--max-frames must be non-negative")
        cfg.run.max_frames = args.max_frames
    if args.output is not None:
        cfg.run.output = str(args.output)
    if getattr(args, "dataset", None):
        cfg.run.dataset = args.dataset
    return cfg.validate()


def _dataset_root(cfg: PipelineConfig) -> Path:
    if not cfg.run.dataset:
        raise ConfigError("no dataset given")
    root = Path(cfg.run.dataset)
    if not root.is_dir():
        raise LoadError(f"dataset root {root} is not a directory")
    return root


def _camera(cfg: PipelineConfig):
    if cfg.camera.given:
        return cfg.camera.to_camera()
    cam = read_camera_yaml(cfg.run.dataset)
    if cam is None:
        raise ConfigError("no camera intrinsics: set [camera] or provide cam0/sensor.yaml")
    return cam


def _output_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.run.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    cfg = _load_config(args)
    _dataset_root(cfg)
    camera = _camera(cfg)
    out = _output_dir(cfg)
    result = run_pipeline(cfg, load_sequence(cfg.run.dataset), camera)
    stats = result.stats
    report = stats.report()
    if stats.initialized:
        export_trajectory(result.trajectory, out / "trajectory.txt")
        if result.volume is not None:
            result.volume.save(out / "volume.npz")
            export_ply(result.mesh, out / "mesh.ply")
        gt_path = cfg.run.ground_truth or None
        try:
            gt = load_ground_truth(gt_path or cfg.run.dataset)
        except DatasetError:
            if gt_path:
                raise
            gt = None
        if gt is not None:
            try:
                ate = evaluate_ate(result.trajectory, gt)
                report += f"ate_rmse: {ate:.6f}\nate_percent_of_path: {100 * ate / max(gt.path_length(), 1e-12):.4f}\n"
            except EvaluationError as exc:
                report += f"ate_rmse: unavailable ({exc})\n"
    (out / "stats.txt").write_text(report)
    print(report, end="")
    if not stats.initialized:
        print("initialization never succeeded; no map was built", file=sys.stderr)
        return EXIT_NO_INIT
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _load_config(args)
    _dataset_root(cfg)
    tcfg = cfg.tracker.to_tracker()
    out = _output_dir(cfg)
    tracks = TrackSet()
    prev = None
    rows = ["frame,timestamp,live,tracked,lost,spawned,matches,flow_reused,b_x,b_y"]
    for k, frame in enumerate(load_sequence(cfg.run.dataset)):
        if cfg.run.max_frames and k >= cfg.run.max_frames:
            break
        img = as_gray(frame.image)
        kmap = curvature_of(img, tcfg.blur_sigma)
        if prev is None:
            n = seed_tracks(tracks, frame.frame_id, img, kmap, tcfg)
            rows.append(f"{frame.frame_id},{frame.timestamp},{n},0,0,{n},0,0,0,0")
        else:
            r = advance_tracks(tracks, prev, img, kmap, tcfg, frame.frame_id)
            rows.append(f"{frame.frame_id},{frame.timestamp},{len(tracks.live_tracks())},{r.n_tracked},"
                        f"{r.n_lost},{r.n_spawned},{r.n_matches},{int(r.flow_reused)},"
                        f"{r.flow.b[0]:.4f},{r.flow.b[1]:.4f}")
        tracks.prune_lost()
        prev = img
        frame.release()
    text = "\n".join(rows) + "\n"
    (out / "tracking.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    est = load_trajectory(args.estimated)
    gt = load_ground_truth(args.ground_truth)
    try:
        rmse = evaluate_ate(est, gt)
    except EvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    length = gt.path_length()
    print(f"ate_rmse: {rmse:.6f}")
    if length > 0:
        print(f"ate_percent_of_path: {100 * rmse / length:.4f}")
    return EXIT_OK


def cmd_mesh(args) -> int:
    volume = TsdfVolume.load(args.volume)
    mesh = extract_surface(volume)
    out = args.output or Path(args.volume).with_suffix(".ply")
    if out.suffix.lower() != ".ply":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "mesh.ply"
    export_ply(mesh, out, ascii=args.ascii)
    print(f"{mesh.n_vertices} vertices, {mesh.n_faces} faces -> {out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "track": cmd_track, "eval": cmd_eval, "mesh": cmd_mesh}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET


if __name__ == "__main__":
    sys.exit(main())
