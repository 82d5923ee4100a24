"""``occalib`` command line: synthesize frames, extract edges, calibrate, evaluate.

Failures print one ``error:<kind>:<detail>`` line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .edge2d import OCC_THRESHOLD, Direction, apply_circle_dropout, extract_edges_2d
from .edge3d import Edge3DParams, extract_3d_features
from .experiment import (
    AXES,
    STANDARD_SCENARIOS,
    Scenario,
    ablation_scenarios,
    format_table,
    rotation_translation_errors,
    run_scenario,
    total_errors,
)
from .geom import exp_map, log_map
from .match import associate_all
from .optim import CalibParams, accumulate_frames, calibrate, grid_search_init
from .scene import (
    LIDAR_PRESETS,
    PRESETS,
    SceneSpec,
    build_scene,
    camera_pose,
    default_camera,
    default_extrinsic,
    lidar_pose_at,
    render_depth,
    sample_perturbation,
    simulate_lidar,
)

EXIT_USAGE, EXIT_MISSING, EXIT_FORMAT, EXIT_INVALID, EXIT_CALIBRATION = 2, 3, 4, 5, 6


class CliError(Exception):
    def __init__(self, kind: str, detail: str, code: int):
        super().__init__(detail)
        self.kind, self.detail, self.code = kind, detail, code


def _camera(path):
    return io.read_camera(path) if path else default_camera()


def _calib_params(args) -> CalibParams:
    kw = io.read_config(args.calib_config, CalibParams()) if args.calib_config else {}
    return CalibParams(**kw)


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cam = _camera(args.camera)
    gt = io.read_extrinsic(args.extrinsic) if args.extrinsic else default_extrinsic()
    spec = io.read_scene_spec(args.scene) if args.scene else SceneSpec(preset=args.preset, seed=args.seed)
    scene = build_scene(spec)
    lp = lidar_pose_at(x=args.frame_step * args.index)
    depth = render_depth(scene, cam, camera_pose(lp, gt))
    model = LIDAR_PRESETS[args.lidar]().with_noise(args.sigma_r, args.sigma_a)
    scan = simulate_lidar(scene, model, lp, args.seed, args.index)
    init = gt @ sample_perturbation(args.rot_mag, args.trans_mag, args.seed)
    io.write_camera(out / "camera.txt", cam)
    io.write_extrinsic(out / "extrinsic_gt.txt", gt)
    io.write_extrinsic(out / "extrinsic_init.txt", init)
    io.write_scene_spec(out / "scene.txt", spec)
    io.write_depth(out / "depth.txt", depth)
    io.write_scan(out / "scan.txt", scan)
    print(f"wrote {out}: {len(scene.primitives)} primitives, {int(scan.valid.sum())} returns")


def cmd_extract2d(args):
    depth = io.read_depth(args.depth)
    edges = extract_edges_2d(depth, args.occ_threshold)
    if args.missing > 0:
        edges = apply_circle_dropout(edges, args.missing, args.seed, frame=(args.index,))
    io.write_edges2d(args.out, edges)
    print(f"wrote {args.out}: {edges!r}")


def cmd_extract3d(args):
    scan = io.read_scan(args.scan)
    params = Edge3DParams(occ_threshold=args.occ_threshold, seed=args.seed)
    feats = extract_3d_features(scan, params)
    io.write_edges3d(args.out, feats)
    print(f"wrote {args.out}: {feats!r}")


def cmd_calibrate(args):
    if len(args.edges2d) != len(args.edges3d):
        raise CliError("usage", "--edges2d and --edges3d need the same number of files", EXIT_USAGE)
    cam = _camera(args.camera)
    params = _calib_params(args)
    frames = []
    for p2, p3 in zip(args.edges2d, args.edges3d):
        e2, e3 = io.read_edges2d(p2, cam), io.read_edges3d(p3)
        if args.no_ub:
            e2, e3 = e2.without(Direction.UP, Direction.BOTTOM), e3.without(Direction.UP, Direction.BOTTOM)
        frames.append((e2, e3))
    context = accumulate_frames(frames, guided=not args.no_ogm)
    if len(context) == 0:
        raise CliError("input", "no frame has both 2D and 3D features", EXIT_INVALID)
    xi0 = log_map(io.read_extrinsic(args.init))
    if args.grid_search:
        xi0 = grid_search_init(context, cam, xi0, args.rot_res, args.trans_res, args.rot_span, args.trans_span,
                               params=params)
    result = calibrate(context, None, cam, xi0, params)
    io.write_result(args.out, result)
    if args.trace:
        io.write_trace(args.trace, result.trace)
    if args.matches:
        index, feats = context.frames[0]
        d_c = result.trace[-1].d_c if result.trace else params.d_c_init
        io.write_match_dump(args.matches, associate_all(feats, index, result.final_transform, cam,
                                                        params.match_params(d_c)))
    print(f"status={result.status} iterations={len(result.trace)}")
    if not result.converged:
        raise CliError("calibration", result.status, EXIT_CALIBRATION)


def cmd_evaluate(args):
    est, status = io.read_result(args.result)
    gt = io.read_extrinsic(args.gt)
    errs = rotation_translation_errors(est, gt)
    rot, trans = total_errors(est, gt)
    print(f"status={status}")
    for axis, v in zip(AXES, errs):
        unit = "deg" if axis in AXES[:3] else "m"
        print(f"{axis}={v:.6f} {unit}")
    print(f"rotation={rot:.6f} deg")
    print(f"translation={trans:.6f} m")


def _scenario_overrides(args):
    kw = {}
    for key in ("trials", "seed", "preset", "frames", "rot_mag", "trans_mag"):
        v = getattr(args, key, None)
        if v is not None:
            kw[key] = v
    return kw


def _write_reports(out, reports, trials_by_scenario):
    out = Path(out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "table.txt").write_text(format_table(reports), encoding="utf-8")
    lines = ["scenario,axis,mae"]
    for r in reports:
        lines += [f"{name},{axis},{io.fmt(v)}" for name, axis, v in r.records()]
    (out / "mae.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    status = ["scenario,trial,seed,status,rotation_deg,translation_m"]
    for name, trials in trials_by_scenario.items():
        for t in trials:
            io.write_trace(out / "traces" / f"{name}_trial{t.trial:03d}.txt", t.result.trace)
            status.append(f"{name},{t.trial},{t.seed},{t.status},{io.fmt(t.rot_error)},{io.fmt(t.trans_error)}")
    (out / "trials.csv").write_text("\n".join(status) + "\n", encoding="utf-8")


def _run_reports(scenarios, params, out, quiet):
    trials_by_scenario = {}

    def on_trial(s, t):
        trials_by_scenario.setdefault(s.name, []).append(t)
        if not quiet:
            print(f"{s.name} trial {t.trial}: {t.status} rot={t.rot_error:.4f} deg trans={t.trans_error:.4f} m",
                  file=sys.stderr)

    reports = [run_scenario(s, params, on_trial) for s in scenarios]
    print(format_table(reports), end="")
    if out:
        _write_reports(out, reports, trials_by_scenario)
    return reports


def cmd_sweep(args):
    base = Scenario()
    if args.config:
        defaults, rows = io.read_sweep_config(args.config, base)
    else:
        defaults, rows = {}, []
    defaults.update(_scenario_overrides(args))
    try:
        if rows:
            scenarios = [Scenario(name=n, lidar=l, missing=m, sigma_r=sr, sigma_a=sa, **defaults)
                         for _, n, l, m, sr, sa in rows]
        else:
            scenarios = [replace(s, **defaults) for s in STANDARD_SCENARIOS]
    except (ValueError, TypeError) as e:
        raise CliError("config", str(e), EXIT_INVALID) from None
    _run_reports(scenarios, _calib_params(args), args.out, args.quiet)


def cmd_ablate(args):
    named = {s.name: s for s in STANDARD_SCENARIOS}
    if args.scenario not in named:
        raise CliError("usage", f"unknown scenario {args.scenario!r}", EXIT_USAGE)
    base = replace(named[args.scenario], **_scenario_overrides(args))
    scenarios = ablation_scenarios(base, args.no_ogm, args.no_ub)
    reports = _run_reports(scenarios, _calib_params(args), args.out, args.quiet)
    full = float(np.mean(reports[0].rot_mae))
    for r in reports[1:]:
        ratio = float(np.mean(r.rot_mae)) / full if full > 0 else float("inf")
        print(f"{r.scenario.name}: mean rotation MAE {np.mean(r.rot_mae):.4f} deg, {ratio:.2f}x the full pipeline")


def _add_scenario_args(p):
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--frames", type=int)
    p.add_argument("--rot-mag", type=float, help="initial rotation error (deg)")
    p.add_argument("--trans-mag", type=float, help="initial translation error (m)")
    p.add_argument("--calib-config", help="key=value overrides of the calibration parameters")
    p.add_argument("--out", help="directory for table.txt, mae.csv, trials.csv and traces/")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occalib", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic frame: depth image, LiDAR scan and rig files")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", default="urban-lite", choices=sorted(PRESETS))
    p.add_argument("--scene", help="scene description file (overrides --preset)")
    p.add_argument("--lidar", default="hdl64", choices=sorted(LIDAR_PRESETS))
    p.add_argument("--sigma-r", type=float, default=0.0, help="range noise std (m)")
    p.add_argument("--sigma-a", type=float, default=0.0, help="angular noise std (deg)")
    p.add_argument("--index", type=int, default=0, help="frame index along the street")
    p.add_argument("--frame-step", type=float, default=0.75, help="metres between frames")
    p.add_argument("--rot-mag", type=float, default=2.0)
    p.add_argument("--trans-mag", type=float, default=0.15)
    p.add_argument("--camera")
    p.add_argument("--extrinsic", help="ground-truth extrinsic (default: the simulated rig)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract2d", help="directed 2D occlusion edges from a depth file")
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--occ-threshold", type=float, default=OCC_THRESHOLD)
    p.add_argument("--missing", type=float, default=0.0, help="fraction of edge points to mask out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_extract2d)

    p = sub.add_parser("extract3d", help="directed 3D occlusion edges from a scan file")
    p.add_argument("--scan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--occ-threshold", type=float, default=OCC_THRESHOLD)
    p.add_argument("--seed", type=int, default=0, help="RANSAC seed")
    p.set_defaults(func=cmd_extract3d)

    p = sub.add_parser("calibrate", help="estimate the extrinsic from edge files")
    p.add_argument("--edges2d", nargs="+", required=True)
    p.add_argument("--edges3d", nargs="+", required=True)
    p.add_argument("--init", required=True, help="initial extrinsic file")
    p.add_argument("--camera")
    p.add_argument("--out", required=True, help="result file")
    p.add_argument("--trace")
    p.add_argument("--matches", help="association dump of the first frame at the final estimate")
    p.add_argument("--calib-config", help="key=value overrides of the calibration parameters")
    p.add_argument("--no-ogm", action="store_true", help="match across occlusion directions")
    p.add_argument("--no-ub", action="store_true", help="drop UP and BOTTOM features")
    p.add_argument("--grid-search", action="store_true")
    p.add_argument("--rot-res", type=float, default=1.0)
    p.add_argument("--trans-res", type=float, default=0.005)
    p.add_argument("--rot-span", type=float, default=10.0)
    p.add_argument("--trans-span", type=float, default=0.2)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="per-axis errors of a result against ground truth")
    p.add_argument("--result", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run scenarios and print the error table")
    p.add_argument("--config", help="sweep file: scenario defaults and 'scenario=' lines")
    _add_scenario_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="compare the full pipeline with OGM or UB disabled")
    p.add_argument("--scenario", default="test1")
    p.add_argument("--no-ogm", action="store_true")
    p.add_argument("--no-ub", action="store_true")
    _add_scenario_args(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def _error(kind, detail, code) -> int:
    detail = " ".join(str(detail).split())
    print(f"error:{kind}:{detail}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command == "ablate" and not (args.no_ogm or args.no_ub):
        return _error("usage", "ablate needs --no-ogm and/or --no-ub", EXIT_USAGE)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if getattr(args, "quiet", False) else "default")
            args.func(args)
    except CliError as e:
        return _error(e.kind, e.detail, e.code)
    except FileNotFoundError as e:
        return _error("missing_file", e.filename or e, EXIT_MISSING)
    except io.FormatError as e:
        return _error("format", f"{e.path}:{e.line}:{e.message}", EXIT_FORMAT)
    except ValueError as e:
        return _error("invalid", e, EXIT_INVALID)
    return 0


if __name__ == "__main__":
    sys.exit(main())
