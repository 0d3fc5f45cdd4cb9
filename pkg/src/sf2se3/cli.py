"""Command-line interface: ``run``, ``synth``, ``eval`` and ``selftest``.

Exit codes: 0 success, 1 usage error or failed self-test, 2 unreadable or
unwritable files, 3 inputs the estimator cannot handle.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .config import SECTIONS, RunConfig, load_config, parse_value, section_fields, serialize_config
from .errors import DegenerateInputError, FormatError
from .metrics import fuse_gt_objects, outlier_rates, relative_pose_error, segmentation_accuracy
from .pipeline import estimate
from .synthetic import NoiseSpec, render, scene_from_config, scene_to_config, three_body_scene

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_DEGENERATE = 0, 1, 2, 3

log = logging.getLogger("sf2se3")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for section in SECTIONS:
        if section == "io":
            continue
        group = p.add_argument_group(f"[{section}]")
        for f in section_fields(section):
            group.add_argument(_flag(f.name), dest=f"{section}.{f.name}", metavar=f.name.upper(),
                               default=None, help=f"default {f.default!r}")


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for key, raw in vars(args).items():
        if raw is None or "." not in key:
            continue
        section, name = key.split(".", 1)
        f = next(f for f in section_fields(section) if f.name == name)
        try:
            cfg = cfg.replace(section, **{name: parse_value(f, raw)})
        except ValueError as exc:
            raise UsageError(f"{_flag(name)}: {exc}") from exc
    if args.seed is not None:
        cfg = cfg.replace("proposal", rng_seed=args.seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sf2se3", description="Rigid-object scene flow and odometry from RGB-D flow.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="estimate objects, scene flow and odometry")
    run.add_argument("input", help="frame-pair directory, or a directory of them")
    run.add_argument("-o", "--output", required=True)
    run.add_argument("--config", help="INI run configuration")
    run.add_argument("--seed", type=int, help="proposal rng seed")
    run.add_argument("--jobs", type=int, default=1, help="frame pairs processed in parallel")
    run.add_argument("--dump-intermediate", action="store_true",
                     help="also write the point set and per-iteration selections")
    run.add_argument("--check", action="store_true", help="assert selection constraints in the loop")
    run.add_argument("--save-config", help="write the effective configuration here")
    _add_config_flags(run)

    synth = sub.add_parser("synth", help="render a synthetic frame pair with ground truth")
    synth.add_argument("output")
    synth.add_argument("--scene", help="scene config; default is the built-in three-body scene")
    synth.add_argument("--seed", type=int, help="noise rng seed")
    synth.add_argument("--flow-sigma", type=float, help="optical flow noise (px)")
    synth.add_argument("--depth-sigma", type=float, help="relative depth noise")
    synth.add_argument("--outlier-frac", type=float, help="fraction of flow outliers")
    synth.add_argument("--size", type=int, default=128, help="image size of the built-in scene")

    ev = sub.add_parser("eval", help="compare predictions with ground truth")
    ev.add_argument("pred")
    ev.add_argument("gt", help="ground-truth directory, or the frame directory holding gt/")
    ev.add_argument("--fuse-transl", type=float, default=None)
    ev.add_argument("--fuse-rot-deg", type=float, default=None)
    ev.add_argument("--config", help="INI run configuration (for the [metrics] block)")
    ev.add_argument("--json", help="append one JSON record per frame to this file")

    sub.add_parser("selftest", help="run the derived-oracle checks")
    return parser


# --- run ------------------------------------------------------------------------

def _frames(root: Path):
    """``[(name, path)]``; a single frame directory has the empty name."""
    if io.is_frame_dir(root):
        return [("", root)]
    frames = sorted((p.name, p) for p in root.iterdir() if p.is_dir() and io.is_frame_dir(p))
    if not frames:
        raise UsageError(f"{root} holds no frame-pair directory (calib.txt missing)")
    return frames


def _run_one(task):
    path, out_dir, cfg, dump, check = task
    t0 = time.perf_counter()
    frame = io.read_frame_pair(path)
    t1 = time.perf_counter()
    result = estimate(
        frame, stride=cfg.preprocess.stride, occl_limit_px=cfg.preprocess.occl_limit_px,
        noise=cfg.noise_params(), proposal=cfg.proposal, selection=cfg.selection, check=check,
        depth_jump_rel=cfg.preprocess.depth_jump_rel,
    )
    t2 = time.perf_counter()
    io.write_result_files(result, out_dir, np.where(frame.mask1(), frame.depth1, np.nan), frame.K)
    if dump:
        io.write_point_set(Path(out_dir) / "points.txt", result.points)
        io.write_history(Path(out_dir) / "iterations.txt", result.history)
    t3 = time.perf_counter()
    return {"read": t1 - t0, "estimate": t2 - t1, "write": t3 - t2,
            "objects": len(result.objects), "odometry": result.odometry}


def cmd_run(args) -> int:
    cfg = _build_config(args)
    cfg = dataclasses.replace(cfg, io=dataclasses.replace(cfg.io, input=args.input, output=args.output))
    cfg.check_paths()
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.save_config:
        Path(args.save_config).write_text(serialize_config(cfg))

    frames = _frames(Path(args.input))
    tasks = [(path, out / name, cfg, args.dump_intermediate, args.check) for name, path in frames]
    t0 = time.perf_counter()
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            stats = list(pool.map(_run_one, tasks))
    else:
        stats = [_run_one(t) for t in tasks]

    traj = out / "trajectory.txt"
    traj.unlink(missing_ok=True)
    # one line per frame pair, in input order, whatever the job scheduling
    for k, s in enumerate(stats):
        io.append_trajectory(traj, float(k), s["odometry"])
    for (name, _), s in zip(frames, stats):
        print(f"{name or Path(args.input).name}: {s['objects']} objects, read {s['read']:.3f} s, "
              f"estimate {s['estimate']:.3f} s, write {s['write']:.3f} s", file=sys.stderr)
    print(f"total {time.perf_counter() - t0:.3f} s for {len(frames)} frame pair(s)", file=sys.stderr)
    return EXIT_OK


# --- synth ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.scene:
        spec = scene_from_config(Path(args.scene).read_text())
    else:
        spec = three_body_scene(size=args.size)
    noise = spec.noise
    noise = NoiseSpec(
        noise.flow_sigma_px if args.flow_sigma is None else args.flow_sigma,
        noise.depth_rel_sigma if args.depth_sigma is None else args.depth_sigma,
        noise.outlier_frac if args.outlier_frac is None else args.outlier_frac,
    )
    spec = dataclasses.replace(spec, noise=noise, rng_seed=spec.rng_seed if args.seed is None else args.seed)
    frame, gt = render(spec)
    out = Path(args.output)
    io.write_frame_pair(out, frame)
    io.write_ground_truth(out / "gt", gt)
    (out / "scene.ini").write_text(scene_to_config(spec))
    return EXIT_OK


# --- eval -------------------------------------------------------------------------

def _gt_dir(path: Path) -> Path:
    return path / "gt" if (path / "gt" / "instances.pgm").is_file() else path


def evaluate_frame(pred_dir: Path, gt_dir: Path, fuse_transl: float, fuse_rot: float) -> dict:
    gt = io.read_ground_truth(gt_dir)
    inst = gt["instances"]
    pred = {
        "d1": io.read_pfm(pred_dir / "disp1.pfm").astype(np.float64),
        "d2": io.read_pfm(pred_dir / "disp2.pfm").astype(np.float64),
        "of": io.read_flow_flo(pred_dir / "flow.flo").astype(np.float64),
    }
    labels = io.read_label_pgm(pred_dir / "labels.pgm")
    if labels.shape != inst.shape:
        raise FormatError(f"{pred_dir}: prediction is {labels.shape}, ground truth {inst.shape}")
    on = inst >= 0
    valid = {
        "d1": on & np.isfinite(gt["disp1"]),
        "d2": on & np.isfinite(gt["disp2"]),
        "of": on & np.all(np.isfinite(gt["flow"]), axis=-1),
    }
    report = outlier_rates(pred, {"d1": gt["disp1"], "d2": gt["disp2"], "of": gt["flow"]}, valid)
    fused = fuse_gt_objects(inst, gt["motions"], fuse_transl, fuse_rot)
    acc, _ = segmentation_accuracy(labels, fused, on)
    motions, _, bg = io.read_objects(pred_dir / "objects.txt")
    if bg < 0:
        raise FormatError(f"{pred_dir}/objects.txt flags no background object")
    rpe = relative_pose_error(gt["camera_motion"], motions[bg].inverse(), 1.0)
    rec = report.as_dict()
    rec.update(seg_acc_pct=acc, rpe_transl=rpe.transl, rpe_rot=rpe.rot,
               num_objects=len(motions), num_gt_objects=int(fused.max()) + 1)
    return rec


def cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    fuse_t = cfg.metrics.fuse_transl if args.fuse_transl is None else args.fuse_transl
    fuse_r = cfg.metrics.fuse_rot_deg if args.fuse_rot_deg is None else args.fuse_rot_deg
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    if not pred_root.is_dir() or not gt_root.is_dir():
        raise UsageError("pred and gt must be directories")
    if (pred_root / "labels.pgm").is_file():
        pairs = [("", pred_root, _gt_dir(gt_root))]
    else:
        names = sorted(p.name for p in pred_root.iterdir() if (p / "labels.pgm").is_file())
        if not names:
            raise UsageError(f"{pred_root} holds no predictions")
        pairs = [(n, pred_root / n, _gt_dir(gt_root / n)) for n in names]
    records = []
    for name, pdir, gdir in pairs:
        rec = {"frame": name or pred_root.name, **evaluate_frame(pdir, gdir, fuse_t, fuse_r)}
        records.append(rec)
        for k, v in rec.items():
            print(f"{k}={v:.2f}" if k.endswith("_pct") else f"{k}={v}")
        print(json.dumps(rec, sort_keys=True))
    if args.json:
        with open(args.json, "a") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_USAGE


COMMANDS = {"run": cmd_run, "synth": cmd_synth, "eval": cmd_eval, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sf2se3: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"sf2se3: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DegenerateInputError as exc:
        print(f"sf2se3: degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except OSError as exc:
        print(f"sf2se3: i/o error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ValueError as exc:
        print(f"sf2se3: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
