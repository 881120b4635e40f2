"""Finite-difference oracle shared by the gradient tests.

Central differences at step 1e-5; the comparison normalizes by the largest
gradient magnitude so zero entries do not blow up the ratio.
"""

import numpy as np

STEP = 1e-5
TOL = 1e-4


def numeric_grad(f, x, step=STEP):
    """d f() / d x by central differences. ``x`` is mutated in place and restored."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f()
        flat[i] = orig - step
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-6)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def assert_grad_close(analytic, numeric, tol=TOL, label=""):
    err = rel_error(analytic, numeric)
    assert err <= tol, f"gradient mismatch{' for ' + label if label else ''}: rel error {err:.3e}"
