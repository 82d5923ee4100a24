"""Directed 2D occlusion edges from a depth image.

Direction convention, shared with :mod:`occalib.edge3d`: a feature's
direction names the side on which the *background* lies. The left silhouette
of an object therefore produces ``LEFT`` features, its top ``UP`` features.
Only foreground (nearer) pixels become features.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .scene import DepthImage, substream

OCC_THRESHOLD = 0.40


class Direction(IntEnum):
    LEFT = 0
    RIGHT = 1
    UP = 2
    BOTTOM = 3

    @property
    def code(self) -> str:
        return "LRUB"[self]

    @classmethod
    def from_code(cls, code: str) -> Direction:
        try:
            return cls("LRUB".index(code.strip().upper()))
        except ValueError:
            raise ValueError(f"unknown occlusion direction {code!r}") from None

    @property
    def opposite(self) -> Direction:
        return Direction(self ^ 1)

    @property
    def background_offset(self) -> tuple[int, int]:
        """Unit pixel step ``(du, dv)`` from the foreground toward the background."""
        return ((-1, 0), (1, 0), (0, -1), (0, 1))[self]


DIRECTIONS = tuple(Direction)


class DirectedEdgeSet2D:
    """Integer pixel coordinates ``(u, v)`` per occlusion direction."""

    def __init__(self, points=None):
        self._pts = {}
        points = points or {}
        for d in DIRECTIONS:
            p = np.asarray(points.get(d, np.empty((0, 2))), dtype=np.int64).reshape(-1, 2)
            self._pts[d] = p

    def __getitem__(self, d) -> np.ndarray:
        return self._pts[Direction(d)]

    def items(self):
        return self._pts.items()

    def count(self, d) -> int:
        return len(self._pts[Direction(d)])

    @property
    def total(self) -> int:
        return sum(len(p) for p in self._pts.values())

    def __len__(self):
        return self.total

    def __eq__(self, other):
        if not isinstance(other, DirectedEdgeSet2D):
            return NotImplemented
        return all(np.array_equal(self[d], other[d]) for d in DIRECTIONS)

    def __repr__(self):
        counts = ", ".join(f"{d.code}={self.count(d)}" for d in DIRECTIONS)
        return f"DirectedEdgeSet2D({counts})"

    def subset(self, keep: dict) -> DirectedEdgeSet2D:
        return DirectedEdgeSet2D({d: self._pts[d][keep[d]] for d in DIRECTIONS})

    def without(self, *dirs) -> DirectedEdgeSet2D:
        drop = {Direction(d) for d in dirs}
        return DirectedEdgeSet2D({d: p for d, p in self._pts.items() if d not in drop})


@dataclass(frozen=True, eq=False)
class PairLabels:
    """Occlusion status of every 4-connected pixel pair.

    ``horizontal[v, u]`` relates ``(u, v)`` and ``(u + 1, v)``; ``vertical[v, u]``
    relates ``(u, v)`` and ``(u, v + 1)``. Value +1 means the first pixel
    (left / upper) occludes the second, -1 the reverse, 0 no occlusion.
    """

    horizontal: np.ndarray
    vertical: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.horizontal.shape[0], self.vertical.shape[1]


def _occlusion(a, b, thr):
    va = np.isfinite(a)
    vb = np.isfinite(b)
    both = va & vb
    with np.errstate(invalid="ignore"):
        first = (both & (b - a > thr)) | (va & ~vb)
        second = (both & (a - b > thr)) | (~va & vb)
    out = np.zeros(a.shape, dtype=np.int8)
    out[first] = 1
    out[second] = -1
    return out


def label_pixel_pairs(depth: DepthImage, occ_threshold: float = OCC_THRESHOLD) -> PairLabels:
    """Depth-gap occlusion oracle over horizontal and vertical pixel pairs.

    A valid pixel next to an invalid one occludes it (foreground against
    empty background).
    """
    if not occ_threshold > 0:
        raise ValueError("occ_threshold must be positive")
    d = depth.depth if isinstance(depth, DepthImage) else np.asarray(depth, dtype=np.float64)
    return PairLabels(
        _occlusion(d[:, :-1], d[:, 1:], occ_threshold),
        _occlusion(d[:-1, :], d[1:, :], occ_threshold),
    )


def extract_edge_points_2d(labels: PairLabels) -> DirectedEdgeSet2D:
    """Foreground pixel of every occluding pair, tagged by background side.

    Each direction's points come out in row-major order.
    """
    h, v = labels.horizontal, labels.vertical
    out = {}
    rows, cols = np.nonzero(h == 1)
    out[Direction.RIGHT] = np.stack([cols, rows], axis=1)
    rows, cols = np.nonzero(h == -1)
    out[Direction.LEFT] = np.stack([cols + 1, rows], axis=1)
    rows, cols = np.nonzero(v == 1)
    out[Direction.BOTTOM] = np.stack([cols, rows], axis=1)
    rows, cols = np.nonzero(v == -1)
    out[Direction.UP] = np.stack([cols, rows + 1], axis=1)
    for d in (Direction.LEFT, Direction.UP):
        p = out[d]
        out[d] = p[np.lexsort((p[:, 0], p[:, 1]))]
    return DirectedEdgeSet2D(out)


def extract_edges_2d(depth: DepthImage, occ_threshold: float = OCC_THRESHOLD) -> DirectedEdgeSet2D:
    return extract_edge_points_2d(label_pixel_pairs(depth, occ_threshold))


def apply_circle_dropout(
    edges: DirectedEdgeSet2D, missing_rate: float, seed: int, radius_range=(5.0, 15.0), frame: tuple = ()
) -> DirectedEdgeSet2D:
    """Mask edge points with random discs until ``missing_rate`` of them are gone.

    Discs are centred on a surviving edge point with radius drawn uniformly
    from ``radius_range``. A disc that would overshoot ``missing_rate + 0.02``
    is shrunk to the nearest points that still fit. The removed fraction is
    counted over all directions pooled.
    """
    if not 0.0 <= missing_rate < 1.0:
        raise ValueError(f"missing_rate must be in [0, 1), got {missing_rate}")
    coords = np.concatenate([edges[d] for d in DIRECTIONS]).astype(np.float64)
    labels = np.concatenate([np.full(edges.count(d), int(d)) for d in DIRECTIONS])
    n = len(coords)
    alive = np.ones(n, dtype=bool)
    target = missing_rate * n
    upper = max(int(np.floor((missing_rate + 0.02) * n)), int(np.ceil(target)))
    removed = 0
    rng = substream(seed, "dropout", *frame)
    while removed < target:
        candidates = np.flatnonzero(alive)
        centre = coords[candidates[rng.integers(len(candidates))]]
        radius = rng.uniform(*radius_range)
        d2 = np.sum((coords - centre) ** 2, axis=1)
        inside = alive & (d2 <= radius * radius)
        k = int(inside.sum())
        if removed + k > upper:
            allowed = upper - removed
            idx = np.flatnonzero(inside)
            ranked = np.sort(d2[idx])
            inside = alive & (d2 < ranked[allowed])
            if not inside.any():
                inside = np.zeros(n, dtype=bool)
                inside[idx[np.argmin(d2[idx])]] = True
            k = int(inside.sum())
        alive &= ~inside
        removed += k
    keep = {d: alive[labels == int(d)] for d in DIRECTIONS}
    return edges.subset(keep)
