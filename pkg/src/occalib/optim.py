"""Point-to-line reprojection refinement of the LiDAR-to-camera extrinsic.

Twist increments compose on the left, ``T <- exp_map(delta) @ T``, and every
Jacobian column follows the ``(rx, ry, rz, tx, ty, tz)`` order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .edge2d import DirectedEdgeSet2D
from .edge3d import DirectedEdgeSet3D
from .geom import MIN_DEPTH, PinholeCamera, RigidTransform, Twist, exp_map, log_map, so3_exp
from .match import CandidateLine, DirectionIndex, MatchParams, MatchSet, associate, build_direction_index


class CalibrationError(RuntimeError):
    pass


class InsufficientFeatures(CalibrationError):
    pass


class Diverged(CalibrationError):
    pass


class BehindCamera(ValueError):
    pass


@dataclass(frozen=True)
class CalibParams:
    n_opt: int = 10
    d_c_init: float = 50.0
    d_c_decay: float = 0.5
    d_c_floor: float = 5.0
    huber_delta: float = 1.0
    min_pairs: int = 30
    lm_max_iters: int = 50
    lm_lambda_init: float = 1e-4
    step_tol: float = 1e-8
    cost_tol: float = 1e-6
    lambda_a: float = 50.0
    lambda_c: float = 3.0
    k: int = 8
    min_neighbors: int = 4

    def __post_init__(self):
        if self.n_opt < 1:
            raise ValueError("n_opt must be at least 1")
        if not 0 < self.d_c_decay <= 1:
            raise ValueError("d_c_decay must be in (0, 1]")
        if not (self.d_c_floor > 0 and self.d_c_init > 0):
            raise ValueError("cutting distances must be positive")
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")

    def match_params(self, d_c: float) -> MatchParams:
        return MatchParams(d_c=d_c, lambda_a=self.lambda_a, lambda_c=self.lambda_c, k=self.k,
                           min_neighbors=self.min_neighbors)


def point_to_line_residual(p, line: CandidateLine) -> float:
    """Signed perpendicular distance ``n . (p - c)`` in pixels."""
    p = np.asarray(p, dtype=np.float64)
    return float(line.n @ (p - line.c))


def huber_cost(r, delta: float):
    a = np.abs(r)
    return np.where(a <= delta, a * a, 2.0 * delta * a - delta * delta)


def huber_weight(r, delta: float):
    """IRLS weight ``rho'(r) / (2 r)``."""
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, delta))


def residuals_and_jacobian(T: RigidTransform, matches: MatchSet, cam: PinholeCamera, jacobian: bool = True):
    """Residuals, ``(m, 6)`` Jacobian w.r.t. a left twist increment, and the in-front mask.

    Entries for points with ``Z <= 1e-6`` are left as NaN.
    """
    pc = T.apply(matches.points)
    X, Y, Z = pc[:, 0], pc[:, 1], pc[:, 2]
    front = Z > MIN_DEPTH
    zs = np.where(front, Z, np.nan)
    u = cam.fx * X / zs + cam.cx
    v = cam.fy * Y / zs + cam.cy
    nu, nv = matches.normals[:, 0], matches.normals[:, 1]
    r = nu * (u - matches.centers[:, 0]) + nv * (v - matches.centers[:, 1])
    if not jacobian:
        return r, None, front
    g = np.empty_like(pc)
    g[:, 0] = nu * cam.fx / zs
    g[:, 1] = nv * cam.fy / zs
    g[:, 2] = -(nu * cam.fx * X + nv * cam.fy * Y) / (zs * zs)
    J = np.empty((len(pc), 6))
    J[:, :3] = np.cross(pc, g)
    J[:, 3:] = g
    return r, J, front


def residual_jacobian(xi: Twist, P, line: CandidateLine, cam: PinholeCamera) -> np.ndarray:
    """Gradient of the point-to-line residual with respect to a left twist increment."""
    ms = MatchSet(np.asarray(P, dtype=np.float64).reshape(1, 3), np.zeros(1, np.int64), line.c.reshape(1, 2),
                  line.n.reshape(1, 2), np.array([line.eig_major]), np.array([line.eig_minor]),
                  np.zeros(1, np.int64), np.zeros(1, np.int64))
    _, J, front = residuals_and_jacobian(exp_map(xi), ms, cam)
    if not front[0]:
        raise BehindCamera("point is behind the camera")
    return J[0]


@dataclass
class LMReport:
    costs: list = field(default_factory=list)
    iterations: int = 0
    accepted: int = 0
    reason: str = ""


def _total_cost(r, delta):
    if not np.all(np.isfinite(r)):
        return np.inf
    return float(np.sum(huber_cost(r, delta)))


def _solve_damped(A, b, lam):
    damped = A + lam * np.diag(np.diag(A))
    try:
        step = np.linalg.solve(damped, -b)
        if np.all(np.isfinite(step)):
            return step
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(damped, -b, rcond=None)[0]


def lm_solve_detailed(matches: MatchSet, cam: PinholeCamera, xi0: Twist, params: CalibParams = CalibParams()):
    """Levenberg-Marquardt with Marquardt diagonal scaling and Huber IRLS weights.

    Returns ``(twist, report)``; ``report.costs`` lists the robust cost at the
    start and after every accepted step. If no step is accepted ``xi0``
    itself is returned.
    """
    if len(matches) < params.min_pairs:
        raise InsufficientFeatures(f"{len(matches)} matches, need {params.min_pairs}")
    delta = params.huber_delta
    T = exp_map(xi0)
    r, J, _ = residuals_and_jacobian(T, matches, cam)
    cost = _total_cost(r, delta)
    if not np.isfinite(cost):
        raise Diverged("non-finite cost at the initial estimate")
    report = LMReport(costs=[cost])
    lam = params.lm_lambda_init
    for it in range(params.lm_max_iters):
        report.iterations = it + 1
        w = huber_weight(r, delta)
        A = J.T @ (w[:, None] * J)
        b = J.T @ (w * r)
        step = _solve_damped(A, b, lam)
        if not np.all(np.isfinite(step)):
            raise Diverged("non-finite LM step")
        if np.linalg.norm(step) < params.step_tol:
            report.reason = "step"
            break
        T_new = exp_map(Twist.from_vector(step)) @ T
        r_new, J_new, _ = residuals_and_jacobian(T_new, matches, cam)
        cost_new = _total_cost(r_new, delta)
        if cost_new < cost:
            rel = (cost - cost_new) / cost
            T, r, J, cost = T_new, r_new, J_new, cost_new
            report.costs.append(cost)
            report.accepted += 1
            lam /= 10.0
            if rel < params.cost_tol:
                report.reason = "cost"
                break
        else:
            lam *= 10.0
            if lam > 1e10:
                report.reason = "damping"
                break
    else:
        report.reason = "max_iters"
    if report.accepted == 0:
        return xi0, report
    return log_map(T), report


def lm_solve(matches: MatchSet, cam: PinholeCamera, xi0: Twist, params: CalibParams = CalibParams()) -> Twist:
    return lm_solve_detailed(matches, cam, xi0, params)[0]


class FrameContext:
    """Per-frame ``(DirectionIndex, DirectedEdgeSet3D)`` pairs sharing one camera and extrinsic."""

    def __init__(self, frames):
        self.frames = list(frames)

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def associate(self, xi, cam: PinholeCamera, match_params: MatchParams) -> MatchSet:
        T = exp_map(xi) if isinstance(xi, Twist) else xi
        return MatchSet.concatenate(
            associate(f3, index, T, cam, match_params, frame=i) for i, (index, f3) in enumerate(self.frames)
        )


def accumulate_frames(per_frame, guided: bool = True, boundary_offset: float = 0.5) -> FrameContext:
    """Build one association context over several frames.

    Each 3D feature is only ever matched against its own frame's image
    edges. Frames with no 2D or no 3D features are skipped with a warning.
    """
    frames = []
    for i, (e2, e3) in enumerate(per_frame):
        if len(e2) == 0 or len(e3) == 0:
            warnings.warn(f"frame {i} has no 2D or no 3D features; skipped", RuntimeWarning, stacklevel=2)
            continue
        index = e2 if isinstance(e2, DirectionIndex) else build_direction_index(e2, guided, boundary_offset)
        frames.append((index, e3))
    return FrameContext(frames)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    d_c: float
    pairs: int
    mean_abs_residual: float


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    final_transform: RigidTransform
    trace: tuple
    status: str
    twist: Twist

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _as_context(edges2d, features3d):
    if isinstance(edges2d, FrameContext):
        return edges2d
    if isinstance(edges2d, DirectedEdgeSet2D):
        edges2d = build_direction_index(edges2d)
    return FrameContext([(edges2d, features3d)])


def calibrate(edges2d, features3d: DirectedEdgeSet3D | None, cam: PinholeCamera, xi0: Twist,
              params: CalibParams = CalibParams()) -> CalibrationResult:
    """Alternate association and LM refinement under a shrinking cutting distance.

    ``edges2d`` may be a :class:`DirectedEdgeSet2D`, a prebuilt
    :class:`DirectionIndex`, or a multi-frame :class:`FrameContext` (then
    ``features3d`` is ignored). Each outer iteration starts with association
    and its trace record holds the association-time pair count and mean
    absolute residual.
    """
    context = _as_context(edges2d, features3d)
    xi = xi0
    d_c = params.d_c_init
    trace = []
    status = "converged"
    for it in range(params.n_opt):
        matches = context.associate(xi, cam, params.match_params(d_c))
        if len(matches):
            r, _, _ = residuals_and_jacobian(exp_map(xi), matches, cam, jacobian=False)
            mean_abs = float(np.mean(np.abs(r)))
        else:
            mean_abs = float("nan")
        trace.append(TraceRecord(it + 1, d_c, len(matches), mean_abs))
        if len(matches) < params.min_pairs:
            status = "insufficient_features"
            break
        try:
            xi = lm_solve(matches, cam, xi, params)
        except Diverged:
            status = "diverged"
            break
        d_c = max(d_c * params.d_c_decay, params.d_c_floor)
    return CalibrationResult(exp_map(xi), tuple(trace), status, xi)


def _score(context, T, cam, match_params, delta):
    matches = context.associate(T, cam, match_params)
    if len(matches) == 0:
        return 0, 0.0
    r, _, _ = residuals_and_jacobian(T, matches, cam, jacobian=False)
    return len(matches), float(np.sum(huber_cost(r, delta)))


def _better(a, b):
    """Higher match count wins; ties go to the lower robust cost."""
    return a[0] > b[0] or (a[0] == b[0] and a[1] < b[1])


def perturbed(T0: RigidTransform, offset) -> RigidTransform:
    """``T0`` rotated by ``exp(offset[:3])`` on the left, then shifted by ``offset[3:]``."""
    offset = np.asarray(offset, dtype=np.float64)
    return RigidTransform(so3_exp(offset[:3]) @ T0.rotation, so3_exp(offset[:3]) @ T0.translation + offset[3:])


def grid_search_init(context, cam: PinholeCamera, xi0: Twist, rot_res: float = 1.0, trans_res: float = 0.005,
                     rot_span: float = 10.0, trans_span: float = 0.2, d_c: float = 20.0, sweeps: int = 2,
                     params: CalibParams = CalibParams()) -> Twist:
    """Coordinate descent over an axis-aligned grid of offsets around ``xi0``.

    Rotation offsets (degrees) and translation offsets (metres) are searched
    one axis at a time, ``sweeps`` passes over all six. A candidate is scored
    by its number of accepted matches at cutting distance ``d_c``, then by
    total robust cost. With no improvement anywhere ``xi0`` is returned.
    """
    if rot_span < rot_res or trans_span < trans_res:
        raise ValueError("spans must be at least the resolutions")
    if isinstance(context, tuple):
        context = _as_context(*context)
    mp = params.match_params(d_c)
    T0 = exp_map(xi0)
    rot_steps = np.radians(rot_res) * np.arange(-int(round(rot_span / rot_res)), int(round(rot_span / rot_res)) + 1)
    trans_steps = trans_res * np.arange(-int(round(trans_span / trans_res)), int(round(trans_span / trans_res)) + 1)
    offset = np.zeros(6)
    best = _score(context, T0, cam, mp, params.huber_delta)
    for _ in range(sweeps):
        moved = False
        for axis in range(6):
            values = rot_steps if axis < 3 else trans_steps
            for val in values:
                if val == offset[axis]:
                    continue
                trial = offset.copy()
                trial[axis] = val
                s = _score(context, perturbed(T0, trial), cam, mp, params.huber_delta)
                if _better(s, best):
                    best, offset, moved = s, trial, True
        if not moved:
            break
    if not offset.any():
        return xi0
    return log_map(perturbed(T0, offset))
