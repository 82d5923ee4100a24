"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Three kernels dominate runtime: ray casting against analytic primitives,
exact k-nearest-neighbour queries in the image plane and fixed-radius
neighbour counting in 3D. Each exists twice, ``*_numba`` and ``*_numpy``;
the public name (``cast_rays``, ``knn``, ``radius_count``) is bound at import
time. Set ``OCCALIB_NUMBA=0`` in the environment to force the numpy path.

Both paths must agree: k-NN results are identical (same squared-distance
arithmetic, ties broken by ascending point index), ray hits agree to
floating-point rounding.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("OCCALIB_NUMBA", "1").strip().lower() not in {
    "0",
    "false",
    "no",
    "off",
}

T_EPS = 1e-9
LEAF_SIZE = 16


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def cast_rays_numpy(origins, dirs, boxes, box_ids, cyls, cyl_ids, ground_z, has_ground):
    """Nearest positive hit parameter along ``origins + t * dirs``.

    ``boxes`` rows are ``(xmin, ymin, zmin, xmax, ymax, zmax)``; ``cyls`` rows
    are ``(cx, cy, zmin, zmax, radius)`` for vertical cylinders. Returns
    ``(t, hit)`` where misses have ``t = inf`` and ``hit = -1``; the ground has
    id 0 and primitives carry the ids passed in.
    """
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    hit = np.full(n, -1, dtype=np.int64)
    ox, oy, oz = origins[:, 0], origins[:, 1], origins[:, 2]
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]

    def take(t, ok, ident):
        t = np.where(ok & (t > T_EPS) & (t < best), t, np.inf)
        better = t < best
        best[better] = t[better]
        hit[better] = ident

    with np.errstate(divide="ignore", invalid="ignore"):
        if has_ground:
            t = (ground_z - oz) / dz
            take(t, dz != 0.0, 0)

        for b in range(boxes.shape[0]):
            lo = boxes[b, :3]
            hi = boxes[b, 3:]
            tn = np.full(n, -np.inf)
            tf = np.full(n, np.inf)
            ok = np.ones(n, dtype=bool)
            for a, (o, d) in enumerate(((ox, dx), (oy, dy), (oz, dz))):
                nz = d != 0.0
                t1 = np.where(nz, (lo[a] - o) / d, -np.inf)
                t2 = np.where(nz, (hi[a] - o) / d, np.inf)
                tmin = np.minimum(t1, t2)
                tmax = np.maximum(t1, t2)
                tn = np.maximum(tn, tmin)
                tf = np.minimum(tf, tmax)
                ok &= nz | ((o >= lo[a]) & (o <= hi[a]))
            take(tn, ok & (tn <= tf), box_ids[b])

        for c in range(cyls.shape[0]):
            cx, cy, z0, z1, r = cyls[c]
            px = ox - cx
            py = oy - cy
            qa = dx * dx + dy * dy
            qb = 2.0 * (px * dx + py * dy)
            qc = px * px + py * py - r * r
            disc = qb * qb - 4.0 * qa * qc
            ok = (qa > 0.0) & (disc >= 0.0) & (qc > 0.0)
            sq = np.sqrt(np.where(ok, disc, 0.0))
            q = -0.5 * (qb + np.where(qb >= 0.0, sq, -sq))
            r1 = q / qa
            r2 = qc / q
            tside = np.minimum(r1, r2)
            zs = oz + tside * dz
            take(tside, ok & (zs >= z0) & (zs <= z1), cyl_ids[c])
            for zc in (z0, z1):
                t = (zc - oz) / dz
                hx = px + t * dx
                hy = py + t * dy
                take(t, (dz != 0.0) & (hx * hx + hy * hy <= r * r), cyl_ids[c])
    return best, hit


def knn_numpy(points, queries, k, chunk=256):
    """Exact k-NN by squared distance, ties to the lower point index."""
    m = queries.shape[0]
    idx = np.full((m, k), -1, dtype=np.int64)
    d2 = np.full((m, k), np.inf)
    n = points.shape[0]
    if n == 0 or m == 0:
        return idx, d2
    kk = min(k, n)
    for s in range(0, m, chunk):
        q = queries[s : s + chunk]
        dx = q[:, None, 0] - points[None, :, 0]
        dy = q[:, None, 1] - points[None, :, 1]
        dd = dx * dx + dy * dy
        order = np.argsort(dd, axis=1, kind="stable")[:, :kk]
        idx[s : s + chunk, :kk] = order
        d2[s : s + chunk, :kk] = np.take_along_axis(dd, order, axis=1)
    return idx, d2


def radius_count_numpy(points, radius, chunk=512):
    """Number of *other* points within ``radius`` of each point."""
    n = points.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    r2 = radius * radius
    for s in range(0, n, chunk):
        p = points[s : s + chunk]
        dx = p[:, None, 0] - points[None, :, 0]
        dy = p[:, None, 1] - points[None, :, 1]
        dz = p[:, None, 2] - points[None, :, 2]
        dd = dx * dx + dy * dy + dz * dz
        counts[s : s + chunk] = (dd <= r2).sum(axis=1) - 1
    return counts


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _cast_one(o0, o1, o2, d0, d1, d2, boxes, box_ids, cyls, cyl_ids, ground_z, has_ground):
        best = np.inf
        hit = -1
        if has_ground and d2 != 0.0:
            t = (ground_z - o2) / d2
            if t > T_EPS and t < best:
                best = t
                hit = 0
        for b in range(boxes.shape[0]):
            tn = -np.inf
            tf = np.inf
            ok = True
            for a in range(3):
                if a == 0:
                    o, d = o0, d0
                elif a == 1:
                    o, d = o1, d1
                else:
                    o, d = o2, d2
                lo = boxes[b, a]
                hi = boxes[b, a + 3]
                if d != 0.0:
                    t1 = (lo - o) / d
                    t2 = (hi - o) / d
                    if t1 > t2:
                        t1, t2 = t2, t1
                    if t1 > tn:
                        tn = t1
                    if t2 < tf:
                        tf = t2
                elif o < lo or o > hi:
                    ok = False
            if ok and tn <= tf and tn > T_EPS and tn < best:
                best = tn
                hit = box_ids[b]
        for c in range(cyls.shape[0]):
            cx = cyls[c, 0]
            cy = cyls[c, 1]
            z0 = cyls[c, 2]
            z1 = cyls[c, 3]
            r = cyls[c, 4]
            px = o0 - cx
            py = o1 - cy
            qa = d0 * d0 + d1 * d1
            qb = 2.0 * (px * d0 + py * d1)
            qc = px * px + py * py - r * r
            disc = qb * qb - 4.0 * qa * qc
            if qa > 0.0 and disc >= 0.0 and qc > 0.0:
                sq = np.sqrt(disc)
                if qb >= 0.0:
                    q = -0.5 * (qb + sq)
                else:
                    q = -0.5 * (qb - sq)
                r1 = q / qa
                r2 = qc / q
                t = min(r1, r2)
                zs = o2 + t * d2
                if zs >= z0 and zs <= z1 and t > T_EPS and t < best:
                    best = t
                    hit = cyl_ids[c]
            if d2 != 0.0:
                for zc in (z0, z1):
                    t = (zc - o2) / d2
                    hx = px + t * d0
                    hy = py + t * d1
                    if hx * hx + hy * hy <= r * r and t > T_EPS and t < best:
                        best = t
                        hit = cyl_ids[c]
        return best, hit

    @njit(cache=True)
    def _cast_rays_numba(origins, dirs, boxes, box_ids, cyls, cyl_ids, ground_z, has_ground):
        n = dirs.shape[0]
        best = np.empty(n)
        hit = np.empty(n, dtype=np.int64)
        for i in range(n):
            best[i], hit[i] = _cast_one(
                origins[i, 0], origins[i, 1], origins[i, 2],
                dirs[i, 0], dirs[i, 1], dirs[i, 2],
                boxes, box_ids, cyls, cyl_ids, ground_z, has_ground,
            )
        return best, hit

    @njit(cache=True)
    def _kdtree_build(points, leaf_size):
        n = points.shape[0]
        perm = np.arange(n)
        max_nodes = 2 * n + 1
        start = np.zeros(max_nodes, dtype=np.int64)
        end = np.zeros(max_nodes, dtype=np.int64)
        dim = np.full(max_nodes, -1, dtype=np.int64)
        split = np.zeros(max_nodes)
        left = np.full(max_nodes, -1, dtype=np.int64)
        right = np.full(max_nodes, -1, dtype=np.int64)
        n_nodes = 1
        end[0] = n
        stack = np.empty(max_nodes, dtype=np.int64)
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            s = start[node]
            e = end[node]
            if e - s <= leaf_size:
                continue
            best_dim = -1
            best_spread = 0.0
            for a in range(points.shape[1]):
                lo = np.inf
                hi = -np.inf
                for i in range(s, e):
                    v = points[perm[i], a]
                    if v < lo:
                        lo = v
                    if v > hi:
                        hi = v
                if hi - lo > best_spread:
                    best_spread = hi - lo
                    best_dim = a
            if best_dim < 0:
                continue
            sub = perm[s:e].copy()
            order = np.argsort(points[sub, best_dim], kind="mergesort")
            for i in range(e - s):
                perm[s + i] = sub[order[i]]
            m = s + (e - s) // 2
            dim[node] = best_dim
            split[node] = points[perm[m], best_dim]
            left[node] = n_nodes
            start[n_nodes] = s
            end[n_nodes] = m
            right[node] = n_nodes + 1
            start[n_nodes + 1] = m
            end[n_nodes + 1] = e
            stack[sp] = n_nodes
            stack[sp + 1] = n_nodes + 1
            sp += 2
            n_nodes += 2
        return perm, start[:n_nodes], end[:n_nodes], dim[:n_nodes], split[:n_nodes], left[:n_nodes], right[:n_nodes]

    @njit(cache=True)
    def _kdtree_query(points, perm, start, end, dim, split, left, right, queries, k):
        m = queries.shape[0]
        n = points.shape[0]
        out_i = np.full((m, k), -1, dtype=np.int64)
        out_d = np.full((m, k), np.inf)
        if n == 0:
            return out_i, out_d
        stack_node = np.empty(start.shape[0] + 1, dtype=np.int64)
        stack_bound = np.empty(start.shape[0] + 1)
        bd = np.empty(k)
        bi = np.empty(k, dtype=np.int64)
        for qi in range(m):
            q0 = queries[qi, 0]
            q1 = queries[qi, 1]
            for j in range(k):
                bd[j] = np.inf
                bi[j] = n
            sp = 0
            stack_node[0] = 0
            stack_bound[0] = 0.0
            sp = 1
            while sp > 0:
                sp -= 1
                node = stack_node[sp]
                bound = stack_bound[sp]
                if bound > bd[k - 1]:
                    continue
                a = dim[node]
                if a < 0:
                    for t in range(start[node], end[node]):
                        j = perm[t]
                        ex = q0 - points[j, 0]
                        ey = q1 - points[j, 1]
                        dd = ex * ex + ey * ey
                        if dd < bd[k - 1] or (dd == bd[k - 1] and j < bi[k - 1]):
                            pos = k - 1
                            while pos > 0 and (dd < bd[pos - 1] or (dd == bd[pos - 1] and j < bi[pos - 1])):
                                bd[pos] = bd[pos - 1]
                                bi[pos] = bi[pos - 1]
                                pos -= 1
                            bd[pos] = dd
                            bi[pos] = j
                    continue
                qa = q0 if a == 0 else q1
                diff = qa - split[node]
                far_bound = diff * diff
                if diff <= 0.0:
                    near = left[node]
                    far = right[node]
                else:
                    near = right[node]
                    far = left[node]
                stack_node[sp] = far
                stack_bound[sp] = max(bound, far_bound)
                sp += 1
                stack_node[sp] = near
                stack_bound[sp] = bound
                sp += 1
            for j in range(k):
                if bi[j] < n:
                    out_i[qi, j] = bi[j]
                    out_d[qi, j] = bd[j]
        return out_i, out_d

    @njit(cache=True)
    def _radius_count_numba(points, radius):
        n = points.shape[0]
        r2 = radius * radius
        counts = np.zeros(n, dtype=np.int64)
        for i in range(n):
            for j in range(i + 1, n):
                dx = points[i, 0] - points[j, 0]
                dy = points[i, 1] - points[j, 1]
                dz = points[i, 2] - points[j, 2]
                if dx * dx + dy * dy + dz * dz <= r2:
                    counts[i] += 1
                    counts[j] += 1
        return counts


def cast_rays_numba(origins, dirs, boxes, box_ids, cyls, cyl_ids, ground_z, has_ground):
    origins = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape))
    return _cast_rays_numba(
        origins,
        np.ascontiguousarray(dirs, dtype=np.float64),
        np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 6),
        np.ascontiguousarray(box_ids, dtype=np.int64),
        np.ascontiguousarray(cyls, dtype=np.float64).reshape(-1, 5),
        np.ascontiguousarray(cyl_ids, dtype=np.int64),
        float(ground_z),
        bool(has_ground),
    )


class KDTree2D:
    """Static 2D k-d tree built by the numba kernel.

    ``query`` returns the same neighbours, in the same order, as a linear scan
    sorted by ``(squared distance, point index)``.
    """

    def __init__(self, points, leaf_size=LEAF_SIZE):
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
        self._tree = _kdtree_build(self.points, leaf_size)

    def query(self, queries, k):
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 2)
        return _kdtree_query(self.points, *self._tree, queries, k)


class BruteForce2D:
    """Drop-in stand-in for :class:`KDTree2D` on the numpy path."""

    def __init__(self, points, leaf_size=LEAF_SIZE):
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)

    def query(self, queries, k):
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 2)
        return knn_numpy(self.points, queries, k)


def knn_numba(points, queries, k):
    return KDTree2D(points).query(queries, k)


def radius_count_numba(points, radius):
    return _radius_count_numba(np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3), float(radius))


if USE_NUMBA:
    cast_rays = cast_rays_numba
    knn = knn_numba
    radius_count = radius_count_numba
    NeighborIndex = KDTree2D
else:
    cast_rays = cast_rays_numpy
    knn = knn_numpy
    radius_count = radius_count_numpy
    NeighborIndex = BruteForce2D


def backend():
    return "numba" if USE_NUMBA else "numpy"
