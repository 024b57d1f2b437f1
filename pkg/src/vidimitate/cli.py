"""Command-line entry points.

Every subcommand reads files in the documented formats and writes records to
``--out`` (stdout when omitted) as JSON lines or CSV, chosen by ``--format``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Sequence

from . import bench, depthfit, filtergate, retarget, trackfit
from .execsim import (
    DeviationPolicy,
    ExecutionFailed,
    KinematicSim,
    TASK_KINDS,
    execute,
    gen_synthetic_task,
    load_perturbations,
)
from .geom3d import load_intrinsics, save_intrinsics
from .trajectory import load_trajectory, save_trajectory, trajectory_records

FORMATS = ("jsonl", "csv")


def _flatten(rec: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in rec.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            for i, x in enumerate(v):
                out[f"{key}.{i}"] = x
        else:
            out[key] = v
    return out


def render_records(records: Sequence[dict], fmt: str) -> str:
    if fmt == "jsonl":
        return "".join(json.dumps(r) + "\n" for r in records)
    flat = [_flatten(r) for r in records]
    fields: list[str] = []
    for r in flat:
        fields.extend(k for k in r if k not in fields)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(flat)
    return buf.getvalue()


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _emit(records: Iterable[dict], args) -> None:
    _write(render_records(list(records), args.format), args.out)


def _load_config(args) -> dict:
    if args.config is None:
        return {}
    return json.loads(Path(args.config).read_text(encoding="utf-8"))


# --- subcommands -----------------------------------------------------------


def cmd_align_depth(args) -> int:
    real = depthfit.read_depth(args.real)
    mask = depthfit.read_mask(args.mask)
    preds = [depthfit.read_depth(p) for p in args.pred]
    fit = depthfit.fit_scale_shift(preds[0], real, mask, args.dilation, robust=args.robust)
    records = [
        {"scale": fit.scale, "shift": fit.shift, "rmse": fit.rmse, "pixel_count": fit.pixel_count},
    ]
    aligned = []
    for i, (src, pred) in enumerate(zip(args.pred, preds)):
        d, clipped = depthfit.apply_affine(pred, fit)
        aligned.append(d)
        rec = {"frame": i, "source": src, "clipped": clipped}
        if args.aligned_dir:
            out = Path(args.aligned_dir) / f"aligned_{i:04d}.dpth"
            out.parent.mkdir(parents=True, exist_ok=True)
            depthfit.write_depth(d, out)
            rec["aligned"] = str(out)
        records.append(rec)
    if len(aligned) >= 2:
        prof = depthfit.flicker_profile(aligned, [mask] * len(aligned))
        records.append({"flicker_max": prof.max, "flicker": [float(x) for x in prof.deltas]})
    _emit(records, args)
    return 0


def cmd_pnp_track(args) -> int:
    cfg = _load_config(args)
    tracks = trackfit.load_tracks(args.tracks)
    depth0 = depthfit.read_depth(args.depth0)
    K = load_intrinsics(args.intrinsics)
    rc = dict(cfg.get("ransac", {}))
    if args.seed is not None:
        rc["seed"] = args.seed
    ransac = None if args.no_ransac else trackfit.RansacConfig(**rc)
    tc = trackfit.TrackConfig(ransac=ransac, fps=cfg.get("fps", args.fps))
    res = trackfit.track_trajectory(tracks, depth0, K, tc)
    traj = res.trajectory
    if args.window > 1:
        traj = trackfit.smooth_trajectory(traj, args.window)
    recs = trajectory_records(traj)
    for r, c in zip(recs, res.carried):
        r["carried"] = bool(c)
    _emit(recs, args)
    print(f"{res.carried_count} of {len(recs)} frames carried forward", file=sys.stderr)
    return 0


def cmd_smooth(args) -> int:
    traj = load_trajectory(args.trajectory)
    _emit(trajectory_records(trackfit.smooth_trajectory(traj, args.window)), args)
    return 0


def cmd_retarget(args) -> int:
    obj = load_trajectory(args.trajectory)
    g = retarget.load_grasp(args.grasp)
    if args.inverse:
        out = retarget.object_trajectory(obj, g)
    else:
        out = retarget.retarget_trajectory(obj, g)
    _emit(trajectory_records(out), args)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    plan = load_trajectory(args.plan)
    g = retarget.load_grasp(args.grasp)
    perts = load_perturbations(args.perturbations) if args.perturbations else []
    if args.seed is not None:
        perts = [replace(p, seed=p.seed + args.seed) for p in perts]
    policy = DeviationPolicy(**cfg.get("policy", {}))
    sim = KinematicSim(plan[0], g.offset, **cfg.get("sim", {}))
    try:
        log = execute(plan, g, policy, sim, perts)
        status = 0
    except ExecutionFailed as exc:
        log = exc.log
        print(f"execution failed: {exc}", file=sys.stderr)
        status = 1
    if args.format == "jsonl":
        _write("".join(line + "\n" for line in log.to_lines()), args.out)
    else:
        _emit([r.to_record() for r in log.records], args)
    return status


def cmd_jitter(args) -> int:
    recs = []
    for path in args.trajectory:
        rep = bench.rms_jitter(load_trajectory(path), args.sigma)
        recs.append({"trajectory": path, **rep.to_dict()})
    _emit(recs, args)
    return 0


def cmd_filter_stats(args) -> int:
    verdicts = filtergate.read_verdicts(args.verdicts)
    key = {"group": filtergate.video_group, "judge": lambda v: v.judge}[args.group_by]
    rates = filtergate.pass_rate(verdicts, key)
    corr = {}
    if any(v.human is not None for v in verdicts):
        corr = filtergate.metric_human_correlation(verdicts, key)
    recs = []
    for g, (frac, val) in rates.items():
        rec = {"group": g, "pass_rate": val, "pass_fraction": f"{frac.numerator}/{frac.denominator}"}
        if g in corr:
            rec["pearson"] = corr[g]
        recs.append(rec)
    _emit(recs, args)
    return 0


def cmd_suite(args) -> int:
    if args.config is None:
        raise SystemExit("suite: --config is required")
    config = _load_config(args)
    if args.seed is not None:
        config.setdefault("defaults", {})["seeds"] = {
            "start": args.seed,
            "count": config.get("defaults", {}).get("seeds", {}).get("count", 10),
        }
    try:
        report = bench.run_suite(config)
    except bench.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.format == "csv":
        _write(bench.plot_csv(report), args.out)
    else:
        _write(bench.report_json(report), args.out)
    if args.plot_out:
        Path(args.plot_out).write_text(bench.plot_csv(report), encoding="utf-8")
    return 0


def cmd_report(args) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    if args.format == "csv":
        _write(bench.plot_csv(report), args.out)
    else:
        _emit(bench.plot_rows(report), args)
    return 0


def cmd_synth_task(args) -> int:
    seed = 0 if args.seed is None else args.seed
    task = gen_synthetic_task(args.kind, seed, flicker_std=args.flicker)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_intrinsics(task.K, out / "intrinsics.json")
    depthfit.write_depth(task.depth0, out / "depth0.dpth")
    depthfit.write_mask(task.mask0, out / "mask0.pgm")
    trackfit.save_tracks(task.tracks, out / "tracks.json")
    save_trajectory(task.trajectory, out / "object.jsonl")
    retarget.save_grasp(task.grasp, out / "grasp.jsonl")
    save_trajectory(retarget.retarget_trajectory(task.trajectory, task.grasp), out / "ee_plan.jsonl")
    for i, d in enumerate(task.pred_depths[: args.pred_frames]):
        depthfit.write_depth(d, out / f"pred_{i:04d}.dpth")
    meta = {
        "kind": task.kind,
        "seed": seed,
        "pred_scale": task.pred_scale,
        "pred_shift": task.pred_shift,
        "occlusion_window": list(task.occlusion_window),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed override")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--format", choices=FORMATS, default="jsonl")

    p = argparse.ArgumentParser(prog="vidimitate", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("align-depth", parents=[common], help="fit predicted depth to real depth")
    s.add_argument("--real", required=True, help="real frame-0 depth (.dpth)")
    s.add_argument("--mask", required=True, help="object mask (.pgm)")
    s.add_argument("--pred", required=True, nargs="+", help="predicted depth frames, frame 0 first")
    s.add_argument("--dilation", type=int, default=10)
    s.add_argument("--robust", action="store_true", help="one trimmed refit at 3 MAD")
    s.add_argument("--aligned-dir", default=None, help="write aligned rasters here")
    s.set_defaults(func=cmd_align_depth)

    s = sub.add_parser("pnp-track", parents=[common], help="pose trajectory from point tracks")
    s.add_argument("--tracks", required=True)
    s.add_argument("--depth0", required=True)
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--fps", type=float, default=15.0)
    s.add_argument("--window", type=int, default=1, help="smooth with this odd window")
    s.add_argument("--no-ransac", action="store_true")
    s.set_defaults(func=cmd_pnp_track)

    s = sub.add_parser("smooth", parents=[common], help="moving-average smoothing")
    s.add_argument("trajectory")
    s.add_argument("--window", type=int, default=5)
    s.set_defaults(func=cmd_smooth)

    s = sub.add_parser("retarget", parents=[common], help="object trajectory to end-effector trajectory")
    s.add_argument("trajectory")
    s.add_argument("--grasp", required=True)
    s.add_argument("--inverse", action="store_true", help="end-effector to object instead")
    s.set_defaults(func=cmd_retarget)

    s = sub.add_parser("simulate", parents=[common], help="closed-loop execution in the kinematic sim")
    s.add_argument("--plan", required=True, help="end-effector trajectory")
    s.add_argument("--grasp", required=True)
    s.add_argument("--perturbations", default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("jitter", parents=[common], help="RMS jitter of trajectories")
    s.add_argument("trajectory", nargs="+")
    s.add_argument("--sigma", type=float, default=2.0)
    s.set_defaults(func=cmd_jitter)

    s = sub.add_parser("filter-stats", parents=[common], help="pass rates and human correlation")
    s.add_argument("verdicts")
    s.add_argument("--group-by", choices=("group", "judge"), default="group")
    s.set_defaults(func=cmd_filter_stats)

    s = sub.add_parser("suite", parents=[common], help="run a scenario suite")
    s.add_argument("--plot-out", default=None, help="also write plot-data CSV here")
    s.set_defaults(func=cmd_suite)

    s = sub.add_parser("report", parents=[common], help="plot data from a suite report")
    s.add_argument("report")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("synth-task", parents=[common], help="write a synthetic episode to disk")
    s.add_argument("kind", choices=TASK_KINDS)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--flicker", type=float, default=0.01)
    s.add_argument("--pred-frames", type=int, default=45)
    s.set_defaults(func=cmd_synth_task)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
