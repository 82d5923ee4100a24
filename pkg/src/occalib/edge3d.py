"""Directed 3D occlusion edges from an organized LiDAR scan.

Features are range discontinuities between neighbouring beams: along a ring
they give LEFT/RIGHT features, along a column UP/BOTTOM ones, following the
same background-side convention as :mod:`occalib.edge2d`. Ground-plane and
isolated features are filtered afterwards.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .edge2d import DIRECTIONS, OCC_THRESHOLD, Direction
from .scene import OrganizedScan, PlaneModel, substream


class DirectedEdgeSet3D:
    """LiDAR-frame feature points per direction.

    ``cells`` holds the ``(ring, col)`` of the foreground return behind each
    point and ``partners`` the background return it was compared with;
    both are ``-1`` when unknown (e.g. features read from a file).
    """

    def __init__(self, points=None, cells=None, partners=None):
        points = points or {}
        self._pts, self._cells, self._partners = {}, {}, {}
        for d in DIRECTIONS:
            p = np.asarray(points.get(d, np.empty((0, 3))), dtype=np.float64).reshape(-1, 3)
            self._pts[d] = p
            for store, src in ((self._cells, cells), (self._partners, partners)):
                if src is not None and d in src:
                    store[d] = np.asarray(src[d], dtype=np.int64).reshape(-1, 2)
                else:
                    store[d] = np.full((len(p), 2), -1, dtype=np.int64)

    def __getitem__(self, d) -> np.ndarray:
        return self._pts[Direction(d)]

    def cells(self, d) -> np.ndarray:
        return self._cells[Direction(d)]

    def partners(self, d) -> np.ndarray:
        return self._partners[Direction(d)]

    def items(self):
        return self._pts.items()

    def count(self, d) -> int:
        return len(self._pts[Direction(d)])

    @property
    def total(self) -> int:
        return sum(len(p) for p in self._pts.values())

    def __len__(self):
        return self.total

    def __repr__(self):
        counts = ", ".join(f"{d.code}={self.count(d)}" for d in DIRECTIONS)
        return f"DirectedEdgeSet3D({counts})"

    def subset(self, keep: dict) -> DirectedEdgeSet3D:
        return DirectedEdgeSet3D(
            {d: self._pts[d][keep[d]] for d in DIRECTIONS},
            {d: self._cells[d][keep[d]] for d in DIRECTIONS},
            {d: self._partners[d][keep[d]] for d in DIRECTIONS},
        )

    def without(self, *dirs) -> DirectedEdgeSet3D:
        drop = {Direction(d) for d in dirs}
        return self.subset({d: np.full(self.count(d), d not in drop) for d in DIRECTIONS})

    def merged(self, other: DirectedEdgeSet3D) -> DirectedEdgeSet3D:
        return DirectedEdgeSet3D(
            {d: np.concatenate([self[d], other[d]]) for d in DIRECTIONS},
            {d: np.concatenate([self.cells(d), other.cells(d)]) for d in DIRECTIONS},
            {d: np.concatenate([self.partners(d), other.partners(d)]) for d in DIRECTIONS},
        )

    def pooled(self):
        """All points stacked in direction order, with their direction labels."""
        pts = np.concatenate([self._pts[d] for d in DIRECTIONS])
        labels = np.concatenate([np.full(self.count(d), int(d)) for d in DIRECTIONS])
        return pts, labels


@dataclass(frozen=True)
class Edge3DParams:
    occ_threshold: float = OCC_THRESHOLD
    ground_dist: float = 0.2
    radius: float = 0.5
    min_neighbors: int = 2
    ransac_inlier_tol: float = 0.1
    ransac_iters: int = 200
    seed: int = 0
    azimuth_increases_u: bool = True
    boundary_refine: bool = True


def _pairs_to_set(scan, fg, bg, direction_of):
    points, cells, partners = {}, {}, {}
    for d in DIRECTIONS:
        sel = direction_of == int(d)
        points[d] = scan.points[fg[sel, 0], fg[sel, 1]]
        cells[d] = fg[sel]
        partners[d] = bg[sel]
    return DirectedEdgeSet3D(points, cells, partners)


def extract_ring_edges(
    scan: OrganizedScan, occ_threshold: float = OCC_THRESHOLD, azimuth_increases_u: bool = True
) -> DirectedEdgeSet3D:
    """LEFT/RIGHT features from azimuth-adjacent pairs on each ring.

    Invalid cells break adjacency, and the seam between the last and first
    column is not compared.
    """
    if not occ_threshold > 0:
        raise ValueError("occ_threshold must be positive")
    r = scan.ranges
    a, b = r[:, :-1], r[:, 1:]
    both = scan.valid[:, :-1] & scan.valid[:, 1:]
    with np.errstate(invalid="ignore"):
        near_first = both & (b - a > occ_threshold)
        near_second = both & (a - b > occ_threshold)
    toward_larger = Direction.RIGHT if azimuth_increases_u else Direction.LEFT
    rows, cols = np.nonzero(near_first | near_second)
    first = near_first[rows, cols]
    fg_col = np.where(first, cols, cols + 1)
    bg_col = np.where(first, cols + 1, cols)
    dirs = np.where(first, int(toward_larger), int(toward_larger.opposite))
    fg = np.stack([rows, fg_col], axis=1)
    bg = np.stack([rows, bg_col], axis=1)
    order = np.lexsort((fg[:, 1], fg[:, 0]))
    return _pairs_to_set(scan, fg[order], bg[order], dirs[order])


def extract_column_edges(scan: OrganizedScan, occ_threshold: float = OCC_THRESHOLD) -> DirectedEdgeSet3D:
    """UP/BOTTOM features from ring-adjacent pairs at each azimuth.

    Ring 0 is the top ring; a foreground return whose background neighbour is
    the ring above is an UP feature.
    """
    if not occ_threshold > 0:
        raise ValueError("occ_threshold must be positive")
    r = scan.ranges
    a, b = r[:-1, :], r[1:, :]
    both = scan.valid[:-1, :] & scan.valid[1:, :]
    with np.errstate(invalid="ignore"):
        upper_near = both & (b - a > occ_threshold)
        lower_near = both & (a - b > occ_threshold)
    rows, cols = np.nonzero(upper_near | lower_near)
    up_first = upper_near[rows, cols]
    fg = np.stack([np.where(up_first, rows, rows + 1), cols], axis=1)
    bg = np.stack([np.where(up_first, rows + 1, rows), cols], axis=1)
    dirs = np.where(up_first, int(Direction.BOTTOM), int(Direction.UP))
    order = np.lexsort((fg[:, 0], fg[:, 1]))
    return _pairs_to_set(scan, fg[order], bg[order], dirs[order])


def fit_ground_plane_ransac(points_or_scan, inlier_tol: float = 0.1, iters: int = 200, seed: int = 0):
    """RANSAC plane over 3-point hypotheses, refined by least squares on inliers.

    Returns ``None`` when no hypothesis is non-degenerate or the best inlier
    fraction is below 0.1. The normal is oriented to have ``z >= 0``.
    """
    pts = points_or_scan.valid_points() if isinstance(points_or_scan, OrganizedScan) else points_or_scan
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < 3:
        return None
    rng = substream(seed, "ransac")
    picks = rng.integers(0, n, size=(iters, 3))
    p0, p1, p2 = pts[picks[:, 0]], pts[picks[:, 1]], pts[picks[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    scale = np.maximum(np.linalg.norm(p1 - p0, axis=1) * np.linalg.norm(p2 - p0, axis=1), 1e-300)
    ok = norms > 1e-9 * scale
    if not ok.any():
        return None
    normals = normals[ok] / norms[ok, None]
    offsets = np.einsum("ij,ij->i", normals, p0[ok])
    best, best_count = -1, -1
    for s in range(0, len(normals), 16):
        counts = (np.abs(normals[s : s + 16] @ pts.T - offsets[s : s + 16, None]) <= inlier_tol).sum(axis=1)
        i = int(np.argmax(counts))
        if counts[i] > best_count:
            best, best_count = s + i, int(counts[i])
    if best_count < 0.1 * n:
        return None
    inliers = pts[np.abs(pts @ normals[best] - offsets[best]) <= inlier_tol]
    centroid = inliers.mean(axis=0)
    _, _, vt = np.linalg.svd(inliers - centroid, full_matrices=False)
    normal = vt[-1]
    if normal @ normals[best] < 0:
        normal = -normal
    if normal[2] < 0:
        normal = -normal
    return PlaneModel(normal, float(normal @ centroid))


def plane_inliers(points, plane: PlaneModel, tol: float) -> np.ndarray:
    return np.abs(plane.signed_distance(points)) <= tol


def remove_near_plane(features: DirectedEdgeSet3D, plane: PlaneModel, dist: float) -> DirectedEdgeSet3D:
    return features.subset({d: np.abs(plane.signed_distance(features[d])) > dist for d in DIRECTIONS})


def radius_outlier_filter(features: DirectedEdgeSet3D, radius: float, min_neighbors: int) -> DirectedEdgeSet3D:
    """Keep features with at least ``min_neighbors`` other features (any direction) within ``radius``."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    pts, labels = features.pooled()
    counts = _kernels.radius_count(pts, radius) if len(pts) else np.zeros(0, dtype=np.int64)
    keep = counts >= min_neighbors
    return features.subset({d: keep[labels == int(d)] for d in DIRECTIONS})


def refine_to_boundary(features: DirectedEdgeSet3D, scan: OrganizedScan) -> DirectedEdgeSet3D:
    """Move each feature to the bisector of its foreground and background beams.

    The point keeps its foreground range. A discontinuity falls uniformly
    between two beams, so the bisector is an unbiased estimate of the
    silhouette direction, where the foreground return alone sits half a beam
    spacing inside it on average.
    """
    out = {}
    for d in DIRECTIONS:
        p = features[d]
        cells, partners = features.cells(d), features.partners(d)
        known = (cells[:, 0] >= 0) & (partners[:, 0] >= 0)
        q = p.copy()
        if known.any():
            fg = scan.points[cells[known, 0], cells[known, 1]]
            bg = scan.points[partners[known, 0], partners[known, 1]]
            r_fg = np.linalg.norm(fg, axis=1)
            mid = fg / r_fg[:, None] + bg / np.linalg.norm(bg, axis=1)[:, None]
            mid /= np.linalg.norm(mid, axis=1)[:, None]
            q[known] = mid * r_fg[:, None]
        out[d] = q
    return DirectedEdgeSet3D(
        out, {d: features.cells(d) for d in DIRECTIONS}, {d: features.partners(d) for d in DIRECTIONS}
    )


def extract_3d_features(scan: OrganizedScan, params: Edge3DParams = Edge3DParams()) -> DirectedEdgeSet3D:
    """Ring and column extraction, ground removal, radius filter, then boundary refinement."""
    ring = extract_ring_edges(scan, params.occ_threshold, params.azimuth_increases_u)
    col = extract_column_edges(scan, params.occ_threshold)
    feats = ring.merged(col)
    if feats.total == 0:
        return feats
    plane = fit_ground_plane_ransac(scan, params.ransac_inlier_tol, params.ransac_iters, params.seed)
    if plane is None:
        warnings.warn("no ground plane found; skipping ground removal", RuntimeWarning, stacklevel=2)
    else:
        feats = remove_near_plane(feats, plane, params.ground_dist)
    feats = radius_outlier_filter(feats, params.radius, params.min_neighbors)
    if params.boundary_refine:
        feats = refine_to_boundary(feats, scan)
    return feats
