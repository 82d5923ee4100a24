import functools
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from occalib.experiment import make_exact_frame, make_frame
from occalib.scene import default_camera, default_extrinsic

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def cam():
    return default_camera()


@pytest.fixture(scope="session")
def gt():
    return default_extrinsic()


@functools.lru_cache(maxsize=None)
def cached_frame(seed: int, lidar: str = "hdl64", sigma_r: float = 0.0, sigma_a: float = 0.0, missing: float = 0.0,
                 preset: str = "urban-lite"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return make_frame(seed, lidar, sigma_r, sigma_a, missing, preset)


@pytest.fixture(scope="session")
def frame():
    """Noise-free standard frame."""
    return cached_frame(1)


@pytest.fixture(scope="session")
def noisy_frame():
    return cached_frame(1, sigma_r=0.02)


@pytest.fixture(scope="session")
def exact_frame():
    return make_exact_frame(3)


def random_rotation(rng, max_angle=np.pi):
    from occalib.geom import so3_exp

    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def pytest_terminal_summary(terminalreporter):
    from tests.criteria import CRITERIA

    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
