"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled versions in _kernels.pyx; kernels.py picks
whichever is available at import time. Kept branch-for-branch comparable so the
two paths agree to floating-point noise (the compiled erf is glibc's, the one
here is scipy's cephes port; they differ by ~1 ulp on some inputs).
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu_fwd(x):
    """GELU in the exact error-function form.

    Returns (y, phi) where y = x * phi and phi is the standard normal CDF of x;
    phi is reused by the backward pass so erf is evaluated once per element.
    """
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * phi, phi


def gelu_bwd(x, phi, g):
    """Cotangent of GELU: g * (phi + x * pdf(x)), reusing phi from the forward."""
    return g * (phi + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x))


def pairwise_rho(a, b, beta):
    """Distance matrix rho[i, j] = (mean_k (a[i,k]-b[j,k])^2)^(beta/2).

    a: (na, d), b: (nb, d). The mean over k is the resolution-normalized
    squared norm; identical rows give exactly 0.0.
    """
    d = a[:, None, :] - b[None, :, :]
    msq = np.mean(d * d, axis=-1)
    if beta == 2.0:
        return msq
    if beta == 1.0:
        return np.sqrt(msq)
    return msq ** (beta / 2.0)
