"""Synthetic calibration trials, parameter sweeps and error reporting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .edge2d import DIRECTIONS, DirectedEdgeSet2D, Direction, apply_circle_dropout, extract_edges_2d
from .edge3d import DirectedEdgeSet3D, Edge3DParams, extract_3d_features
from .geom import PinholeCamera, RigidTransform, Twist, exp_map, log_map
from .optim import CalibParams, CalibrationResult, accumulate_frames, calibrate, grid_search_init
from .scene import (
    LIDAR_PRESETS,
    DepthImage,
    OrganizedScan,
    Scene,
    SceneSpec,
    build_scene,
    camera_pose,
    default_camera,
    default_extrinsic,
    lidar_pose_at,
    render_depth,
    sample_perturbation,
    simulate_lidar,
    substream,
)

FRAME_STEP = 0.75
AXES = ("roll", "pitch", "yaw", "x", "y", "z")


def rpy_from_matrix(r) -> np.ndarray:
    """Fixed-axis x-y-z angles (radians): ``r = Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    r = np.asarray(r, dtype=np.float64)
    pitch = np.arcsin(np.clip(-r[2, 0], -1.0, 1.0))
    roll = np.arctan2(r[2, 1], r[2, 2])
    yaw = np.arctan2(r[1, 0], r[0, 0])
    return np.array([roll, pitch, yaw])


def rotation_translation_errors(est: RigidTransform, gt: RigidTransform) -> np.ndarray:
    """Absolute roll, pitch, yaw (degrees) and x, y, z (metres) of ``gt^-1 @ est``."""
    d = gt.inverse() @ est
    return np.concatenate([np.abs(np.degrees(rpy_from_matrix(d.rotation))), np.abs(d.translation)])


def total_errors(est: RigidTransform, gt: RigidTransform):
    """Total rotation angle (degrees) and translation norm (metres) of ``gt^-1 @ est``."""
    d = gt.inverse() @ est
    return float(np.degrees(np.linalg.norm(log_map(d).rot_vec))), float(np.linalg.norm(d.translation))


@dataclass(frozen=True)
class Scenario:
    name: str = "test1"
    lidar: str = "hdl64"
    missing: float = 0.0
    sigma_r: float = 0.02
    sigma_a: float = 0.0
    trials: int = 20
    seed: int = 0
    rot_mag: float = 2.0
    trans_mag: float = 0.15
    preset: str = "urban-lite"
    frames: int = 1
    guided: bool = True
    use_ub: bool = True
    grid_search: bool = False

    def __post_init__(self):
        if self.lidar not in LIDAR_PRESETS:
            raise ValueError(f"unknown lidar preset {self.lidar!r}")
        if not 0.0 <= self.missing < 1.0:
            raise ValueError("missing must be in [0, 1)")
        if self.sigma_r < 0 or self.sigma_a < 0:
            raise ValueError("noise levels must be non-negative")
        if self.trials < 1 or self.frames < 1:
            raise ValueError("trials and frames must be at least 1")


STANDARD_SCENARIOS = (
    Scenario("test1", "hdl64", 0.0, 0.02, 0.0),
    Scenario("test2", "hdl64", 0.25, 0.02, 0.0),
    Scenario("test3", "hdl64", 0.45, 0.02, 0.0),
    Scenario("test4", "hdl64", 0.0, 0.04, 0.005),
    Scenario("test5", "hdl32", 0.0, 0.02, 0.0),
)


@dataclass(frozen=True, eq=False)
class Frame:
    scene: Scene | None
    depth: DepthImage | None
    scan: OrganizedScan | None
    edges2d: DirectedEdgeSet2D
    features3d: DirectedEdgeSet3D
    lidar_pose: RigidTransform


def make_frame(seed: int, lidar: str = "hdl64", sigma_r: float = 0.0, sigma_a: float = 0.0, missing: float = 0.0,
               preset: str = "urban-lite", index: int = 0, cam: PinholeCamera | None = None,
               extrinsic: RigidTransform | None = None, edge_params: Edge3DParams = Edge3DParams(),
               scene: Scene | None = None) -> Frame:
    """Render one synthetic frame; frame ``index`` sits ``index * 0.75`` m down the street."""
    cam = cam or default_camera()
    extrinsic = extrinsic or default_extrinsic()
    scene = scene or build_scene(SceneSpec(preset=preset, seed=seed))
    lp = lidar_pose_at(x=FRAME_STEP * index)
    depth = render_depth(scene, cam, camera_pose(lp, extrinsic))
    edges = extract_edges_2d(depth)
    if missing > 0:
        edges = apply_circle_dropout(edges, missing, seed, frame=(index,))
    model = LIDAR_PRESETS[lidar]().with_noise(sigma_r, sigma_a)
    scan = simulate_lidar(scene, model, lp, seed, index)
    return Frame(scene, depth, scan, edges, extract_3d_features(scan, edge_params), lp)


def make_exact_frame(seed: int, cam: PinholeCamera | None = None, extrinsic: RigidTransform | None = None,
                     edges_per_direction: int = 12, run_length: int = 16) -> Frame:
    """Frame whose 3D features sit exactly on their image edges under ``extrinsic``.

    Every image edge is a straight run of pixels. Each 3D feature is
    back-projected, at a random depth, from a point halfway between two run
    pixels and half a pixel toward the background, which is exactly the
    centroid of its 8 nearest (boundary-shifted) run pixels. Unlike a
    rendered frame there is no sampling error, so the true extrinsic is an
    exact zero of the reprojection cost.
    """
    cam = cam or default_camera()
    extrinsic = extrinsic or default_extrinsic()
    rng = substream(seed, "scene")
    inv = extrinsic.inverse()
    e2, e3 = {}, {}
    margin = run_length + 10
    slots = np.arange(3, run_length - 4) + 0.5
    for d in DIRECTIONS:
        du, dv = d.background_offset
        starts = []
        while len(starts) < edges_per_direction:
            u0 = int(rng.integers(margin, cam.width - margin))
            v0 = int(rng.integers(margin, cam.height - margin))
            if all(abs(u0 - a) + abs(v0 - b) > 2 * run_length for a, b in starts):
                starts.append((u0, v0))
        pix, pts = [], []
        for u0, v0 in starts:
            steps = np.arange(run_length)
            if du:
                pix.append(np.stack([np.full(run_length, u0), v0 + steps], axis=1))
                uv = np.stack([np.full(slots.size, u0 + 0.5 * du), v0 + slots], axis=1)
            else:
                pix.append(np.stack([u0 + steps, np.full(run_length, v0)], axis=1))
                uv = np.stack([u0 + slots, np.full(slots.size, v0 + 0.5 * dv)], axis=1)
            z = rng.uniform(4.0, 25.0, size=slots.size)
            pc = np.stack([(uv[:, 0] - cam.cx) / cam.fx * z, (uv[:, 1] - cam.cy) / cam.fy * z, z], axis=1)
            pts.append(inv.apply(pc))
        e2[d] = np.concatenate(pix)
        e3[d] = np.concatenate(pts)
    return Frame(None, None, None, DirectedEdgeSet2D(e2), DirectedEdgeSet3D(e3), lidar_pose_at())


@dataclass(frozen=True, eq=False)
class TrialResult:
    trial: int
    seed: int
    errors: np.ndarray
    rot_error: float
    trans_error: float
    result: CalibrationResult
    initial: Twist

    @property
    def status(self) -> str:
        return self.result.status


def trial_seed(scenario: Scenario, trial: int) -> int:
    return int(scenario.seed) * 100003 + int(trial) + 1


def scenario_frames(scenario: Scenario, trial: int, edge_params: Edge3DParams = Edge3DParams()):
    seed = trial_seed(scenario, trial)
    scene = build_scene(SceneSpec(preset=scenario.preset, seed=seed))
    return [
        make_frame(seed, scenario.lidar, scenario.sigma_r, scenario.sigma_a, scenario.missing, scenario.preset,
                   index=j, scene=scene, edge_params=edge_params)
        for j in range(scenario.frames)
    ]


def run_trial(scenario: Scenario, trial: int, params: CalibParams = CalibParams(), frames=None,
              cam: PinholeCamera | None = None) -> TrialResult:
    cam = cam or default_camera()
    gt = default_extrinsic()
    seed = trial_seed(scenario, trial)
    frames = frames if frames is not None else scenario_frames(scenario, trial)
    pairs = []
    for f in frames:
        e2, e3 = f.edges2d, f.features3d
        if not scenario.use_ub:
            e2, e3 = e2.without(Direction.UP, Direction.BOTTOM), e3.without(Direction.UP, Direction.BOTTOM)
        pairs.append((e2, e3))
    context = accumulate_frames(pairs, guided=scenario.guided)
    xi0 = log_map(gt @ sample_perturbation(scenario.rot_mag, scenario.trans_mag, seed))
    start = grid_search_init(context, cam, xi0, params=params) if scenario.grid_search else xi0
    if len(context) == 0:
        result = CalibrationResult(exp_map(start), (), "insufficient_features", start)
    else:
        result = calibrate(context, None, cam, start, params)
    rot, trans = total_errors(result.final_transform, gt)
    return TrialResult(trial, seed, rotation_translation_errors(result.final_transform, gt), rot, trans, result, xi0)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-axis mean absolute errors over the converged trials of one scenario."""

    scenario: Scenario
    rot_mae: np.ndarray
    trans_mae: np.ndarray
    trials: int
    converged: int
    rot_errors: np.ndarray = field(default_factory=lambda: np.empty(0))
    trans_errors: np.ndarray = field(default_factory=lambda: np.empty(0))
    statuses: tuple = ()

    @property
    def all_failed(self) -> bool:
        return self.converged == 0

    @property
    def median_rot_error(self) -> float:
        return float(np.median(self.rot_errors))

    def records(self):
        for axis, v in zip(AXES, np.concatenate([self.rot_mae, self.trans_mae])):
            yield self.scenario.name, axis, float(v)


def summarize(scenario: Scenario, trials) -> EvalReport:
    trials = list(trials)
    ok = [t for t in trials if t.status == "converged"]
    if ok:
        errs = np.array([t.errors for t in ok])
        rot_mae, trans_mae = errs[:, :3].mean(axis=0), errs[:, 3:].mean(axis=0)
    else:
        rot_mae = trans_mae = np.full(3, np.nan)
    return EvalReport(
        scenario, rot_mae, trans_mae, len(trials), len(ok),
        np.array([t.rot_error for t in trials]), np.array([t.trans_error for t in trials]),
        tuple(t.status for t in trials),
    )


def run_scenario(scenario: Scenario, params: CalibParams = CalibParams(), on_trial=None) -> EvalReport:
    trials = []
    for i in range(scenario.trials):
        t = run_trial(scenario, i, params)
        trials.append(t)
        if on_trial is not None:
            on_trial(scenario, t)
    return summarize(scenario, trials)


def run_sweep(scenarios, params: CalibParams = CalibParams(), on_trial=None) -> list:
    return [run_scenario(s, params, on_trial) for s in scenarios]


def format_table(reports) -> str:
    """Aligned plain-text table of per-axis MAE, one row per scenario."""
    header = ["scenario", "lidar", "missing%", "sigma_r", "sigma_a", "roll", "pitch", "yaw", "x", "y", "z", "ok/n"]
    rows = []
    for r in reports:
        s = r.scenario
        if r.all_failed:
            vals = ["all failed"] + [""] * 5
        else:
            vals = [f"{v:.3f}" for v in r.rot_mae] + [f"{v:.3f}" for v in r.trans_mae]
        rows.append([s.name, s.lidar.upper(), f"{100 * s.missing:g}", f"{s.sigma_r:g}",
                     f"{s.sigma_a:g}" if s.sigma_a else "-", *vals, f"{r.converged}/{r.trials}"])
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(str(x).rjust(w) for x, w in zip(row, widths)) for row in rows]
    return "\n".join(lines) + "\n"


def ablation_scenarios(base: Scenario, no_ogm: bool = False, no_ub: bool = False):
    """``base`` plus the requested variants, all on the same trial seeds."""
    out = [base]
    if no_ogm:
        out.append(replace(base, name=f"{base.name}-no-ogm", guided=False))
    if no_ub:
        out.append(replace(base, name=f"{base.name}-no-ub", use_ub=False))
    return out
