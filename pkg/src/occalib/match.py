"""Direction-guided 2D-3D association.

Each projected 3D feature is matched to a local line fitted through its
nearest image edge points of the same occlusion direction, then screened by
distance, straightness and approach-angle tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .edge2d import DIRECTIONS, DirectedEdgeSet2D, Direction
from .edge3d import DirectedEdgeSet3D
from .geom import PinholeCamera, Twist, exp_map, project_points

REASONS = ("ok", "behind_camera", "out_of_image", "insufficient", "degenerate", "distance", "curvature", "angle")
OK, BEHIND, OUTSIDE, INSUFFICIENT, DEGENERATE, DISTANCE, CURVATURE, ANGLE = range(len(REASONS))
POOLED = -1


@dataclass(frozen=True)
class MatchParams:
    d_c: float = 50.0
    lambda_a: float = 50.0
    lambda_c: float = 3.0
    k: int = 8
    min_neighbors: int = 4

    def __post_init__(self):
        if not self.d_c > 0:
            raise ValueError(f"d_c must be positive, got {self.d_c}")
        if not 0 < self.lambda_a < 90:
            raise ValueError(f"lambda_a must be in (0, 90), got {self.lambda_a}")
        if not self.lambda_c > 1:
            raise ValueError(f"lambda_c must exceed 1, got {self.lambda_c}")
        if not 1 <= self.min_neighbors <= self.k:
            raise ValueError("need 1 <= min_neighbors <= k")


@dataclass(frozen=True, eq=False)
class CandidateLine:
    c: np.ndarray
    n: np.ndarray
    eig_major: float
    eig_minor: float


class DegenerateNeighborhood(ValueError):
    pass


class DirectionIndex:
    """Nearest-neighbour indices over image edge points, one per direction.

    With ``guided=False`` all directions share one pooled index, which is the
    unguided baseline. Pixel centres are shifted ``boundary_offset`` px toward
    the background so the indexed points sit on the depth boundary rather
    than half a pixel inside the foreground.
    """

    def __init__(self, edges: DirectedEdgeSet2D, guided: bool = True, boundary_offset: float = 0.5):
        self.guided = guided
        self.boundary_offset = float(boundary_offset)
        self._points, self._labels, self._index = {}, {}, {}
        parts = {}
        for d in DIRECTIONS:
            pts = edges[d].astype(np.float64) + self.boundary_offset * np.asarray(d.background_offset, dtype=np.float64)
            parts[d] = pts
        keys = DIRECTIONS if guided else (POOLED,)
        for key in keys:
            if key == POOLED:
                pts = np.concatenate([parts[d] for d in DIRECTIONS])
                labels = np.concatenate([np.full(len(parts[d]), int(d)) for d in DIRECTIONS])
            else:
                pts, labels = parts[key], np.full(len(parts[key]), int(key))
            self._points[key] = pts.reshape(-1, 2)
            self._labels[key] = labels.astype(np.int64)
            self._index[key] = _kernels.NeighborIndex(pts) if len(pts) else None

    def _key(self, direction):
        return Direction(direction) if self.guided else POOLED

    def points(self, direction) -> np.ndarray:
        return self._points[self._key(direction)]

    def labels(self, direction) -> np.ndarray:
        """Direction label of every point in the partition queried for ``direction``."""
        return self._labels[self._key(direction)]

    def size(self, direction) -> int:
        return len(self.points(direction))

    def query(self, direction, queries, k: int):
        """``k`` nearest indexed points; ``(idx, d2)`` with at most ``k`` columns.

        Fewer columns come back when the partition holds fewer than ``k`` points.
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
        key = self._key(direction)
        kk = min(k, len(self._points[key]))
        if kk == 0 or len(queries) == 0:
            return np.empty((len(queries), kk), dtype=np.int64), np.empty((len(queries), kk))
        return self._index[key].query(queries, kk)


def build_direction_index(
    edges: DirectedEdgeSet2D, guided: bool = True, boundary_offset: float = 0.5
) -> DirectionIndex:
    return DirectionIndex(edges, guided=guided, boundary_offset=boundary_offset)


def fit_lines(neighbors):
    """Batched line fit over ``(m, k, 2)`` neighbourhoods.

    Returns centres, unit normals (minor eigenvector, ``n_y >= 0`` and
    ``n_x >= 0`` when ``n_y == 0``), major and minor eigenvalues of the
    population covariance, and a flag for neighbourhoods whose points all
    coincide.
    """
    nb = np.asarray(neighbors, dtype=np.float64)
    m, k = nb.shape[:2]
    if m == 0:
        z = np.empty(0)
        return np.empty((0, 2)), np.empty((0, 2)), z, z, np.empty(0, dtype=bool)
    c = nb.mean(axis=1)
    dev = nb - c[:, None, :]
    cov = np.einsum("mki,mkj->mij", dev, dev) / k
    evals, evecs = np.linalg.eigh(cov)
    n = evecs[:, :, 0].copy()
    flip = (n[:, 1] < 0) | ((n[:, 1] == 0) & (n[:, 0] < 0))
    n[flip] *= -1.0
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    minor = np.maximum(evals[:, 0], 0.0)
    major = np.maximum(evals[:, 1], minor)
    degenerate = np.all(nb == nb[:, :1, :], axis=(1, 2))
    return c, n, major, minor, degenerate


def candidate_line(neighbors) -> CandidateLine:
    nb = np.asarray(neighbors, dtype=np.float64).reshape(1, -1, 2)
    c, n, major, minor, degenerate = fit_lines(nb)
    if degenerate[0] or nb.shape[1] < 2:
        raise DegenerateNeighborhood("all neighbour points coincide")
    return CandidateLine(c[0], n[0], float(major[0]), float(minor[0]))


def screen(p, c, n, major, minor, max_dist, params: MatchParams) -> np.ndarray:
    """Reason code per candidate for the distance, straightness and angle tests, in that order."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    out = np.full(len(p), OK, dtype=np.int64)
    v = p - c
    dist = np.hypot(v[:, 0], v[:, 1])
    at_centre = dist < 1e-9
    cosang = np.abs(np.einsum("ij,ij->i", v, n)) / np.where(at_centre, 1.0, dist)
    angle = np.degrees(np.arccos(np.clip(cosang, 0.0, 1.0)))
    bad_angle = ~at_centre & ~(angle < params.lambda_a)
    bad_curv = ~(major >= params.lambda_c * minor)
    bad_dist = ~(max_dist <= params.d_c)
    out[bad_angle] = ANGLE
    out[bad_curv] = CURVATURE
    out[bad_dist] = DISTANCE
    return out


def filter_match(p, line: CandidateLine, neighbors, params: MatchParams):
    """``(accepted, reason)`` for one projected feature against its candidate line."""
    nb = np.asarray(neighbors, dtype=np.float64).reshape(-1, 2)
    p = np.asarray(p, dtype=np.float64).reshape(2)
    if len(nb) < params.min_neighbors:
        return False, "insufficient"
    max_dist = np.sqrt(np.max(np.sum((nb - p) ** 2, axis=1)))
    code = screen(p, line.c[None], line.n[None], np.array([line.eig_major]), np.array([line.eig_minor]),
                  np.array([max_dist]), params)[0]
    return bool(code == OK), REASONS[code]


@dataclass(frozen=True, eq=False)
class MatchPair:
    P: np.ndarray
    line: CandidateLine
    direction: Direction


@dataclass(frozen=True, eq=False)
class MatchSet:
    """Accepted associations stored column-wise.

    ``line_directions`` is the majority direction label of the image points
    that built each line; under guided matching it always equals
    ``directions``. ``frames`` tags the source frame in multi-frame runs.
    """

    points: np.ndarray
    directions: np.ndarray
    centers: np.ndarray
    normals: np.ndarray
    eig_major: np.ndarray
    eig_minor: np.ndarray
    line_directions: np.ndarray
    frames: np.ndarray

    @classmethod
    def empty(cls) -> MatchSet:
        return cls(np.empty((0, 3)), np.empty(0, np.int64), np.empty((0, 2)), np.empty((0, 2)),
                   np.empty(0), np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64))

    @classmethod
    def concatenate(cls, sets) -> MatchSet:
        sets = list(sets)
        if not sets:
            return cls.empty()
        return cls(*(np.concatenate([getattr(s, f) for s in sets]) for f in cls.__dataclass_fields__))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        for i in range(len(self)):
            line = CandidateLine(self.centers[i], self.normals[i], float(self.eig_major[i]), float(self.eig_minor[i]))
            yield MatchPair(self.points[i], line, Direction(int(self.directions[i])))

    def __getitem__(self, i) -> MatchPair:
        line = CandidateLine(self.centers[i], self.normals[i], float(self.eig_major[i]), float(self.eig_minor[i]))
        return MatchPair(self.points[i], line, Direction(int(self.directions[i])))

    @classmethod
    def from_pairs(cls, pairs) -> MatchSet:
        pairs = list(pairs)
        if not pairs:
            return cls.empty()
        return cls(
            np.array([p.P for p in pairs], dtype=np.float64).reshape(-1, 3),
            np.array([int(p.direction) for p in pairs], dtype=np.int64),
            np.array([p.line.c for p in pairs], dtype=np.float64).reshape(-1, 2),
            np.array([p.line.n for p in pairs], dtype=np.float64).reshape(-1, 2),
            np.array([p.line.eig_major for p in pairs], dtype=np.float64),
            np.array([p.line.eig_minor for p in pairs], dtype=np.float64),
            np.array([int(p.direction) for p in pairs], dtype=np.int64),
            np.zeros(len(pairs), dtype=np.int64),
        )


@dataclass(frozen=True, eq=False)
class AssociationRecord:
    """Per-feature association outcome, accepted or not, in 3D feature order."""

    points: np.ndarray
    directions: np.ndarray
    uv: np.ndarray
    centers: np.ndarray
    normals: np.ndarray
    eig_major: np.ndarray
    eig_minor: np.ndarray
    line_directions: np.ndarray
    reasons: np.ndarray

    @property
    def accepted(self) -> np.ndarray:
        return self.reasons == OK

    @property
    def residuals(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.uv - self.centers, self.normals)

    def matches(self, frame: int = 0) -> MatchSet:
        a = self.accepted
        return MatchSet(self.points[a], self.directions[a], self.centers[a], self.normals[a],
                        self.eig_major[a], self.eig_minor[a], self.line_directions[a],
                        np.full(int(a.sum()), frame, dtype=np.int64))


def _majority(labels):
    counts = np.stack([(labels == int(d)).sum(axis=1) for d in DIRECTIONS], axis=1)
    return np.argmax(counts, axis=1).astype(np.int64)


def associate_all(features3d: DirectedEdgeSet3D, index: DirectionIndex, transform, cam: PinholeCamera,
                  params: MatchParams = MatchParams()) -> AssociationRecord:
    """Association outcome for every 3D feature under ``transform`` (a Twist or RigidTransform)."""
    T = exp_map(transform) if isinstance(transform, Twist) else transform
    pts, dirs = features3d.pooled()
    n = len(pts)
    uv, pc, front = project_points(cam, T, pts)
    reasons = np.full(n, OK, dtype=np.int64)
    reasons[~front] = BEHIND
    reasons[front & ~cam.in_image(uv)] = OUTSIDE
    centers = np.full((n, 2), np.nan)
    normals = np.full((n, 2), np.nan)
    major = np.full(n, np.nan)
    minor = np.full(n, np.nan)
    line_dirs = np.full(n, -1, dtype=np.int64)
    for d in DIRECTIONS:
        sel = np.flatnonzero((dirs == int(d)) & (reasons == OK))
        if len(sel) == 0:
            continue
        idx, d2 = index.query(d, uv[sel], params.k)
        if idx.shape[1] < params.min_neighbors:
            reasons[sel] = INSUFFICIENT
            continue
        nb = index.points(d)[idx]
        c, nrm, ma, mi, degenerate = fit_lines(nb)
        max_dist = np.sqrt(d2.max(axis=1))
        codes = screen(uv[sel], c, nrm, ma, mi, max_dist, params)
        codes[degenerate] = DEGENERATE
        reasons[sel] = codes
        centers[sel], normals[sel], major[sel], minor[sel] = c, nrm, ma, mi
        line_dirs[sel] = _majority(index.labels(d)[idx])
    return AssociationRecord(pts, dirs, uv, centers, normals, major, minor, line_dirs, reasons)


def associate(features3d: DirectedEdgeSet3D, index: DirectionIndex, xi, cam: PinholeCamera,
              params: MatchParams = MatchParams(), frame: int = 0) -> MatchSet:
    """Accepted matches, in 3D feature order."""
    return associate_all(features3d, index, xi, cam, params).matches(frame)

