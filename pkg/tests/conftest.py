import numpy as np
import pytest


def random_deformations(rng, n, det_lo=0.3, det_hi=3.0, spread=0.8):
    """Random in-plane deformation gradients with det in [det_lo, det_hi]."""
    out = np.empty((n, 2, 2))
    k = 0
    while k < n:
        F = np.eye(2) + rng.uniform(-spread, spread, size=(2, 2))
        d = F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
        if det_lo <= d <= det_hi:
            out[k] = F
            k += 1
    return out


def central_diff(f, x, h=1e-6):
    """Central finite difference of a scalar-or-array function over a flat array x."""
    x = np.asarray(x, dtype=float)
    base = np.asarray(f(x))
    grad = np.empty(x.shape + base.shape)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)
    return grad


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
