import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import make_env, make_sensor, small_rotation
from so3cover import kernels
from so3cover.density import MixtureDensity
from so3cover.objective import ObjectiveParams, _kernel_args, mission_mask

BACKENDS = kernels.backends()


def _args(rng, with_mixture=True):
    env = make_env()
    s = make_sensor(grid=(13, 9))
    params = ObjectiveParams(np.diag([0.01, 0.01, 1.0]))
    R = small_rotation(rng, 0.5)
    if with_mixture:
        d = MixtureDensity(1.0, [0.3, 0.2], [[1e-3, 0], [-1e-3, 5e-4]],
                           [np.diag([1e6, 3e5]), np.array([[5e5, 1e5], [1e5, 4e5]])])
    else:
        d = MixtureDensity(1.0)
    idx = params.pixel_subset(s)
    return R, _kernel_args(s, params, env, d, idx, mission_mask(s, env, R, idx))


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
@pytest.mark.parametrize("with_mixture", [True, False])
def test_backends_agree(rng, with_mixture):
    for _ in range(10):
        R, args = _args(rng, with_mixture)
        M = R + 0.01 * rng.standard_normal((3, 3))
        vp = BACKENDS["python"][0](M, R, *args)
        vc = BACKENDS["cython"][0](M, R, *args)
        assert abs(vp - vc) <= 1e-12 * abs(vp)
        hp, Gp = BACKENDS["python"][1](R, *args)
        hc, Gc = BACKENDS["cython"][1](R, *args)
        assert abs(hp - hc) <= 1e-12 * abs(hp)
        assert np.linalg.norm(np.asarray(Gp) - np.asarray(Gc)) <= 1e-11 * np.linalg.norm(Gp)


def test_value_kernel_consistent_with_gradient_kernel(rng):
    for name, (value, value_grad) in BACKENDS.items():
        R, args = _args(rng)
        h, _ = value_grad(R, *args)
        assert abs(value(R, R, *args) - h) <= 1e-12 * abs(h), name


def test_pure_python_switch():
    env = dict(os.environ, SO3COVER_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import so3cover; print(so3cover.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
