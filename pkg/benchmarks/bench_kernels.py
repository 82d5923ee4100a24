"""Time the numba kernels against their numpy fallbacks on realistic inputs.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Each kernel is
called once untimed to trigger compilation, then timed as the best of N runs.
Outputs of both paths are compared before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from occalib import _kernels
from occalib.experiment import make_frame
from occalib.scene import SceneSpec, build_scene, camera_pose, default_camera, default_extrinsic, lidar_pose_at


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    scene = build_scene(SceneSpec(preset="urban-lite", seed=1))
    cam = default_camera()
    pose = camera_pose(lidar_pose_at(), default_extrinsic())
    dirs = cam.pixel_rays() @ pose.rotation.T
    ray_args = (pose.translation, np.ascontiguousarray(dirs), *scene.kernel_args(), True)

    frame = make_frame(1)
    pts2d = frame.edges2d[0].astype(np.float64)
    rng = np.random.default_rng(0)
    queries = pts2d[rng.integers(0, len(pts2d), 2000)] + rng.normal(0.0, 5.0, (2000, 2))
    pts3d, _ = frame.features3d.pooled()
    cloud = np.concatenate([pts3d + rng.normal(0.0, 0.05, pts3d.shape) for _ in range(4)])

    yield (f"cast_rays ({len(dirs)} camera rays)", _kernels.cast_rays_numba, _kernels.cast_rays_numpy, ray_args,
           lambda a, b: np.allclose(a[0], b[0], rtol=1e-12, equal_nan=True) and np.array_equal(a[1], b[1]))
    yield (f"knn k=8 ({len(pts2d)} points, {len(queries)} queries)", _kernels.knn_numba, _kernels.knn_numpy,
           (pts2d, queries, 8), lambda a, b: np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]))
    yield (f"radius_count r=0.5 ({len(cloud)} points)", _kernels.radius_count_numba, _kernels.radius_count_numpy,
           (cloud, 0.5), np.array_equal)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed")
    print(f"{'kernel':<48} {'numba [ms]':>11} {'numpy [ms]':>11} {'speedup':>8}  agree")
    for name, fast, slow, kernel_args, same in cases():
        agree = same(fast(*kernel_args), slow(*kernel_args))
        t_fast = best_of(lambda: fast(*kernel_args), args.repeat)
        t_slow = best_of(lambda: slow(*kernel_args), args.repeat)
        print(f"{name:<48} {1e3 * t_fast:11.2f} {1e3 * t_slow:11.2f} {t_slow / t_fast:7.1f}x  {agree}")


if __name__ == "__main__":
    main()
