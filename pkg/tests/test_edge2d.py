import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from occalib.edge2d import (
    DIRECTIONS,
    DirectedEdgeSet2D,
    Direction,
    apply_circle_dropout,
    extract_edge_points_2d,
    extract_edges_2d,
    label_pixel_pairs,
)
from occalib.geom import PinholeCamera, RigidTransform
from occalib.scene import DepthImage, SceneSpec, build_scene, render_depth

L, R, U, B = Direction.LEFT, Direction.RIGHT, Direction.UP, Direction.BOTTOM


def brute_force_edges(depth, thr):
    """Pixel-by-pixel reference extractor."""
    h, w = depth.shape
    out = {d: set() for d in DIRECTIONS}
    for v in range(h):
        for u in range(w):
            a = depth[v, u]
            for d in DIRECTIONS:
                du, dv = d.background_offset
                uu, vv = u + du, v + dv
                if not (0 <= uu < w and 0 <= vv < h) or not np.isfinite(a):
                    continue
                b = depth[vv, uu]
                if not np.isfinite(b) or b - a > thr:
                    out[d].add((u, v))
    return out


def as_sets(edges):
    return {d: {tuple(p) for p in edges[d].tolist()} for d in DIRECTIONS}


def test_pair_label_examples():
    lab = label_pixel_pairs(np.array([[2.0, 5.0]]), 0.4)
    assert lab.horizontal[0, 0] == 1
    lab = label_pixel_pairs(np.array([[5.0, 5.2]]), 0.4)
    assert lab.horizontal[0, 0] == 0
    lab = label_pixel_pairs(np.full((6, 7), 3.0), 0.4)
    assert not lab.horizontal.any() and not lab.vertical.any()


def test_invalid_neighbour_is_occluded():
    lab = label_pixel_pairs(np.array([[np.nan, 5.0]]), 0.4)
    assert lab.horizontal[0, 0] == -1
    lab = label_pixel_pairs(np.array([[np.nan, np.nan]]), 0.4)
    assert lab.horizontal[0, 0] == 0


def test_threshold_must_be_positive():
    with pytest.raises(ValueError):
        label_pixel_pairs(np.ones((2, 2)), 0.0)


def test_row_example_gives_right_edge():
    e = extract_edges_2d(DepthImage(np.array([[2.0, 2.0, 5.0, 5.0]])))
    assert e[R].tolist() == [[1, 0]]
    assert e.total == 1


def test_column_example_gives_up_edge():
    e = extract_edges_2d(DepthImage(np.array([[5.0], [5.0], [2.0], [2.0]])))
    assert e[U].tolist() == [[0, 2]]
    assert e.total == 1


def test_one_pixel_may_carry_several_directions():
    d = np.full((3, 3), 9.0)
    d[1, 1] = 1.0
    e = as_sets(extract_edges_2d(DepthImage(d)))
    assert all(e[x] == {(1, 1)} for x in DIRECTIONS)


def test_box_silhouette_sides():
    cam = PinholeCamera(700.0, 700.0, 621.0, 187.0, 1242, 375)
    pose = RigidTransform([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]], [0.0, 0.0, 5.0])
    scene = build_scene(SceneSpec(boxes=[(10.5, 0, 5, 1, 200, 10), (6.5, 0.0, 5, 1, 2, 1.5)]))
    e = extract_edges_2d(render_depth(scene, cam, pose))
    # box spans y in [-1, 1] and z in [4.25, 5.75] at depth 6
    u_left, u_right = cam.cx - 1.0 / 6.0 * cam.fx, cam.cx + 1.0 / 6.0 * cam.fx
    v_top, v_bottom = cam.cy - 0.75 / 6.0 * cam.fy, cam.cy + 0.75 / 6.0 * cam.fy
    assert np.all(np.abs(e[L][:, 0] - u_left) <= 1) and np.all(np.abs(e[R][:, 0] - u_right) <= 1)
    assert np.all(np.abs(e[U][:, 1] - v_top) <= 1) and np.all(np.abs(e[B][:, 1] - v_bottom) <= 1)
    assert min(e.count(d) for d in DIRECTIONS) > 100


def test_extraction_matches_brute_force(frame):
    d = frame.depth.depth[150:230, 300:700]
    assert as_sets(extract_edges_2d(DepthImage(d))) == brute_force_edges(d, 0.4)


def test_extraction_invariants(frame):
    e = frame.edges2d
    depth = frame.depth.depth
    for d in DIRECTIONS:
        p = e[d]
        assert len({tuple(x) for x in p.tolist()}) == len(p)
        assert np.all((p[:, 0] >= 0) & (p[:, 0] < depth.shape[1]) & (p[:, 1] >= 0) & (p[:, 1] < depth.shape[0]))
        du, dv = d.background_offset
        fg = depth[p[:, 1], p[:, 0]]
        bg = depth[p[:, 1] + dv, p[:, 0] + du]
        assert np.all(np.isnan(bg) | (bg - fg > 0.4))


def test_row_major_order(frame):
    for d in DIRECTIONS:
        p = frame.edges2d[d]
        key = p[:, 1] * 10000 + p[:, 0]
        assert np.all(np.diff(key) > 0)


depth_images = arrays(
    np.float64, st.tuples(st.integers(2, 12), st.integers(2, 12)),
    elements=st.one_of(st.floats(0.5, 20.0), st.just(np.nan)),
)


@given(depth_images)
def test_mirror_symmetry(d):
    e = as_sets(extract_edge_points_2d(label_pixel_pairs(d, 0.4)))
    h, w = d.shape
    lr = as_sets(extract_edge_points_2d(label_pixel_pairs(d[:, ::-1], 0.4)))
    assert lr[L] == {(w - 1 - u, v) for u, v in e[R]} and lr[R] == {(w - 1 - u, v) for u, v in e[L]}
    assert lr[U] == {(w - 1 - u, v) for u, v in e[U]}
    ud = as_sets(extract_edge_points_2d(label_pixel_pairs(d[::-1], 0.4)))
    assert ud[U] == {(u, h - 1 - v) for u, v in e[B]} and ud[B] == {(u, h - 1 - v) for u, v in e[U]}


@given(depth_images)
def test_matches_brute_force_property(d):
    assert as_sets(extract_edge_points_2d(label_pixel_pairs(d, 0.4))) == brute_force_edges(d, 0.4)


def test_dropout_zero_is_identity(frame):
    assert apply_circle_dropout(frame.edges2d, 0.0, 1) == frame.edges2d


@pytest.mark.parametrize("rate,lo,hi", [(0.25, 0.73, 0.77), (0.45, 0.53, 0.57)])
def test_dropout_rates(frame, rate, lo, hi):
    for seed in range(5):
        out = apply_circle_dropout(frame.edges2d, rate, seed)
        assert lo <= out.total / frame.edges2d.total <= hi


def test_dropout_is_deterministic_subset(frame):
    a = apply_circle_dropout(frame.edges2d, 0.3, 9)
    assert a == apply_circle_dropout(frame.edges2d, 0.3, 9)
    assert a != apply_circle_dropout(frame.edges2d, 0.3, 10)
    for d in DIRECTIONS:
        assert as_sets(a)[d] <= as_sets(frame.edges2d)[d]


def test_dropout_removes_discs(frame):
    """Removed points come in spatial clusters, not as isolated picks."""
    out = apply_circle_dropout(frame.edges2d, 0.25, 2)
    kept = set().union(*({(u, v) for u, v in out[d].tolist()} for d in DIRECTIONS))
    pts = np.concatenate([frame.edges2d[d] for d in DIRECTIONS])
    removed = np.array([p for p in pts.tolist() if tuple(p) not in kept])
    d2 = (removed[:, None, :] - removed[None, :, :]) ** 2
    near = (d2.sum(axis=2) <= 4).sum(axis=1) - 1
    assert np.mean(near > 0) > 0.9


def test_dropout_rejects_rate_one(frame):
    with pytest.raises(ValueError):
        apply_circle_dropout(frame.edges2d, 1.0, 0)


def test_without_drops_directions(frame):
    e = frame.edges2d.without(U, B)
    assert e.count(U) == e.count(B) == 0 and e.count(L) == frame.edges2d.count(L)


def test_edge_set_validation():
    with pytest.raises(ValueError):
        Direction.from_code("X")
    assert Direction.from_code("r") is R and R.opposite is L and U.opposite is B
    assert DirectedEdgeSet2D().total == 0
