import os

# Keep BLAS single-threaded before numpy loads anywhere: the desk-scale
# timing criterion is stated for one CPU core, and fixed threading keeps
# reductions bit-reproducible across runs.
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference_grad(fn, arrays, wrt, h=1e-4):
    """Central-difference gradient of scalar fn(*arrays) w.r.t. arrays[wrt].

    Independent oracle for the autodiff engine: evaluates the forward
    function only, at double precision.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[wrt]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(*base)
        flat[i] = orig - h
        lo = fn(*base)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    scale = max(1.0, float(np.max(np.abs(numeric))) if numeric.size else 0.0)
    return float(np.max(np.abs(analytic - numeric))) / scale
