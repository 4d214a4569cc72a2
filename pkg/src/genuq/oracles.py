"""Ground-truth stochastic operators and dataset builders.

Both benchmark problems map an input function u to an output v with an extra
source of randomness beyond u, so the "truth" at a fixed u is a distribution:

  - ELU operator (periodic): v = d/dx (ELU(u + alpha) - alpha), alpha ~ U[0,1],
    derivative taken spectrally;
  - nonlinear elliptic problem: (a(v'))' = u on [-1, 1] with v(+-1) = 0 and a
    random monotone coefficient a, solved by damped Newton on central
    differences.

Dataset builders derive one child seed per sample, so any sample (including
its latent randomness) can be regenerated independently of the others.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .data import FunctionPairDataset, assign_splits
from .fields import Grid1D, KernelSpec, cholesky_factor, kernel_spectrum, sample_gp_periodic

ELU_KERNEL_AMPLITUDE = 1.0
ELU_KERNEL_RATE = 4.0
ELLIPTIC_KERNEL = KernelSpec(kind="squared-exponential", amplitude=0.04, rate=6.25)
COEFF_LINEAR_FLOOR = 0.1


def elu_kernel(grid):
    """Input-field kernel exp(4 cos(2 pi delta / period)), period = domain length.

    The period must divide the domain length for the covariance to be
    stationary on the periodic grid; tying it to the domain is the only choice
    that keeps the circulant spectrum nonnegative (Bessel coefficients of
    exp(4 cos) are positive).
    """
    return KernelSpec(
        kind="periodic-exp-cos",
        amplitude=ELU_KERNEL_AMPLITUDE,
        rate=ELU_KERNEL_RATE,
        period=grid.length,
    )


def spectral_derivative(f, grid):
    """d/dx on a periodic grid via the real FFT; Nyquist mode is dropped."""
    n = grid.n
    k = 2.0 * np.pi * np.arange(n // 2 + 1) / grid.length
    coeff = np.fft.rfft(f, axis=-1) * (1j * k)
    if n % 2 == 0:
        coeff[..., -1] = 0.0
    return np.fft.irfft(coeff, n=n, axis=-1)


def _elu(x):
    return np.where(x < 0, np.expm1(x), x)


def elu_operator_apply(u, alpha, grid):
    """v = d/dx (ELU(u + alpha) - alpha) for u (..., n) and broadcastable alpha."""
    u = np.asarray(u, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim:
        alpha = alpha.reshape(alpha.shape + (1,) * (u.ndim - alpha.ndim))
    f = _elu(u + alpha) - alpha
    return spectral_derivative(f, grid)


def elu_alpha_mean(s):
    """m(s) = integral_0^1 (ELU(s + a) - a) da, the average over the shift.

    Piecewise (C^2 in s): s for s >= 0; 1/2 + s - e^s + (s+1)^2 / 2 for
    -1 < s < 0; e^s (e - 1) - 3/2 for s <= -1.
    """
    s = np.asarray(s, dtype=np.float64)
    mid = 0.5 + s - np.exp(s) + 0.5 * (s + 1.0) ** 2
    return np.where(s >= 0, s, np.where(s > -1.0, mid, np.exp(s) * (np.e - 1.0) - 1.5))


def elu_mean_response(u, grid):
    """Closed-form E_alpha[v] = d/dx m(u(x)) for the ELU operator."""
    return spectral_derivative(elu_alpha_mean(u), grid)


class EluOracle:
    """Stochastic ELU operator with its input-field sampler."""

    def __init__(self, grid):
        if not grid.periodic:
            raise ValueError("the ELU operator needs a periodic grid")
        self.grid = grid
        self.spectrum = kernel_spectrum(elu_kernel(grid), grid)

    def sample_inputs(self, seed, size=1):
        return sample_gp_periodic(self.spectrum, self.grid, seed, size=size)

    def apply(self, u, alpha):
        return elu_operator_apply(u, alpha, self.grid)

    def ensemble(self, u, n, seed):
        """n draws of v for a fixed input u; fresh alpha per draw."""
        rng = np.random.default_rng(seed)
        alphas = rng.random(n)
        return self.apply(np.broadcast_to(u, (n, self.grid.n)), alphas)


def make_elu_dataset(n_samples, grid, seed):
    oracle = EluOracle(grid)
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_samples + 1)
    u = np.empty((n_samples, grid.n))
    v = np.empty_like(u)
    for i in range(n_samples):
        rng = np.random.default_rng(children[i])
        u[i] = oracle.sample_inputs(rng)[0]
        v[i] = oracle.apply(u[i], rng.random())
    tags = assign_splits(n_samples, children[-1])
    return FunctionPairDataset(
        grid=grid, u=u, v=v, split=tags, seed=seed, meta={"problem": "elu"}
    )


# ---------------------------------------------------------------------------
# nonlinear elliptic problem


@dataclass(frozen=True)
class MonotoneCoeff:
    """Random monotone flux coefficient a(s).

    a(s) = sum_k |w2_k| * hardsigmoid(|w1_k| s + b1_k) + (|b2| + floor) * s
    with raw parameters i.i.d. N(0,1); taking magnitudes of the weights and of
    the linear slope makes a' >= floor > 0 by construction (zero raw
    parameters leave the pure linear floor a(s) = floor * s).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    floor: float = COEFF_LINEAR_FLOOR

    @staticmethod
    def sample(rng):
        return MonotoneCoeff(
            w1=rng.standard_normal(2),
            b1=rng.standard_normal(2),
            w2=rng.standard_normal(2),
            b2=float(rng.standard_normal()),
        )

    def __call__(self, s):
        s = np.asarray(s, dtype=np.float64)[..., None]
        h = np.clip((np.abs(self.w1) * s + self.b1 + 3.0) / 6.0, 0.0, 1.0)
        lin = (abs(self.b2) + self.floor) * s[..., 0]
        return (np.abs(self.w2) * h).sum(axis=-1) + lin

    def derivative(self, s):
        s = np.asarray(s, dtype=np.float64)[..., None]
        z = np.abs(self.w1) * s + self.b1
        inside = (np.abs(z) < 3.0) / 6.0
        return (np.abs(self.w2) * np.abs(self.w1) * inside).sum(axis=-1) + abs(self.b2) + self.floor


def elliptic_residual(v, u, coeff, grid):
    """Interior residual of (a(v'))' - u on central differences."""
    dx = grid.spacing
    slopes = np.diff(v) / dx
    flux = coeff(slopes)
    return np.diff(flux) / dx - u[1:-1]


def solve_elliptic_1d(u, coeff, grid, tol=1e-10, max_iter=100, max_halvings=20):
    """Damped Newton solve of (a(v'))' = u with v = 0 at both endpoints.

    Steps are halved until the residual max-norm decreases (up to
    max_halvings); raises if the iteration budget runs out before reaching tol.
    """
    if grid.periodic:
        raise ValueError("the elliptic problem needs a non-periodic grid")
    n = grid.n
    if n - 2 < 15:
        raise ValueError("need at least 15 interior nodes")
    dx = grid.spacing
    v = np.zeros(n)
    res = elliptic_residual(v, u, coeff, grid)
    norm = np.abs(res).max()
    for _ in range(max_iter):
        if norm <= tol:
            return v
        slopes = np.diff(v) / dx
        ap = coeff.derivative(slopes) / (dx * dx)  # a'(s) at half points
        lower = ap[1:-1]
        diag = -(ap[:-1] + ap[1:])
        upper = ap[1:-1]
        ab = np.zeros((3, n - 2))
        ab[0, 1:] = upper
        ab[1] = diag
        ab[2, :-1] = lower
        step = solve_banded((1, 1), ab, -res)
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial = v.copy()
            trial[1:-1] += lam * step
            trial_res = elliptic_residual(trial, u, coeff, grid)
            trial_norm = np.abs(trial_res).max()
            if trial_norm < norm:
                break
            lam *= 0.5
        v, res, norm = trial, trial_res, trial_norm
    if norm <= tol:
        return v
    raise RuntimeError(f"Newton did not reach tol={tol:g} (residual {norm:.3e})")


class EllipticOracle:
    """Random-coefficient elliptic solve with its input-field sampler."""

    def __init__(self, grid):
        self.grid = grid
        self._chol = cholesky_factor(ELLIPTIC_KERNEL, grid.points())

    def sample_inputs(self, seed, size=1):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        z = rng.standard_normal((size, self.grid.n))
        return z @ self._chol.T

    def apply(self, u, coeff):
        return solve_elliptic_1d(u, coeff, self.grid)

    def ensemble(self, u, n, seed):
        """n solves of the same u under fresh coefficient draws."""
        rng = np.random.default_rng(seed)
        out = np.empty((n, self.grid.n))
        for i in range(n):
            out[i] = self.apply(u, MonotoneCoeff.sample(rng))
        return out


def elliptic_sample_coeff(dataset_seed, i):
    """Coefficient used for sample i of make_elliptic_dataset(seed=dataset_seed)."""
    child = np.random.SeedSequence(dataset_seed).spawn(i + 1)[i]
    return MonotoneCoeff.sample(np.random.default_rng(child))


def make_elliptic_dataset(n_samples, grid, seed):
    oracle = EllipticOracle(grid)
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_samples + 1)
    u = np.empty((n_samples, grid.n))
    v = np.empty_like(u)
    for i in range(n_samples):
        rng = np.random.default_rng(children[i])
        coeff = MonotoneCoeff.sample(rng)
        u[i] = oracle.sample_inputs(rng)[0]
        v[i] = oracle.apply(u[i], coeff)
    tags = assign_splits(n_samples, children[-1])
    return FunctionPairDataset(
        grid=grid, u=u, v=v, split=tags, seed=seed, meta={"problem": "elliptic"}
    )
