"""Central finite-difference gradient oracle shared by the test suite.

The oracle only calls the forward function, so it stays independent of the
reverse-mode code path it is used to check.
"""

import numpy as np

FD_STEP = 1e-5
FD_RTOL = 1e-4


def numeric_grads(forward, arrays: dict[str, np.ndarray], step: float = FD_STEP):
    """Central-difference gradients of a scalar `forward(arrays)` w.r.t. every
    entry of every array in `arrays`."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = forward(arrays)
            flat[i] = orig - step
            down = forward(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def assert_grads_close(analytic: dict[str, np.ndarray],
                       numeric: dict[str, np.ndarray],
                       rtol: float = FD_RTOL) -> None:
    """Relative-error comparison with a floor so near-zero gradients compare
    absolutely."""
    for name, num in numeric.items():
        ana = np.asarray(analytic[name], dtype=np.float64)
        assert ana.shape == num.shape, f"{name}: shape {ana.shape} vs {num.shape}"
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-3)
        err = np.abs(ana - num) / denom
        worst = float(err.max()) if err.size else 0.0
        assert worst < rtol, f"{name}: relative gradient error {worst:.3e} >= {rtol}"
