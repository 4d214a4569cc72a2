"""Gaussian random field samplers on 1-D grids.

Two sampling routes with one kernel abstraction:
  - circulant embedding on periodic uniform grids (FFT of the first covariance
    row gives the eigenvalues; exact and O(n log n));
  - dense Cholesky with jitter escalation for non-periodic grids.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1-D grid. Periodic grids exclude the right endpoint."""

    n: int
    start: float
    end: float
    periodic: bool = True

    @property
    def length(self):
        return self.end - self.start

    @property
    def spacing(self):
        return self.length / self.n if self.periodic else self.length / (self.n - 1)

    def points(self):
        if self.periodic:
            return self.start + self.length * np.arange(self.n) / self.n
        return np.linspace(self.start, self.end, self.n)


@dataclass(frozen=True)
class KernelSpec:
    """Stationary covariance kernel.

    kinds:
      - "periodic-exp-cos":     amplitude * exp(rate * cos(2*pi*delta/period))
      - "squared-exponential":  amplitude * exp(-rate * delta**2)
    """

    kind: str
    amplitude: float = 1.0
    rate: float = 1.0
    period: float | None = None

    def value(self, delta):
        delta = np.asarray(delta, dtype=np.float64)
        if self.kind == "periodic-exp-cos":
            if not self.period or self.period <= 0:
                raise ValueError("periodic-exp-cos kernel needs a positive period")
            return self.amplitude * np.exp(self.rate * np.cos(2.0 * np.pi * delta / self.period))
        if self.kind == "squared-exponential":
            return self.amplitude * np.exp(-self.rate * delta * delta)
        raise ValueError(f"unknown kernel kind {self.kind!r}")


def kernel_spectrum(kernel, grid):
    """Circulant eigenvalues of the kernel on a periodic grid.

    Returns the real FFT of the first covariance row, length n//2 + 1.
    Eigenvalues slightly negative from roundoff (within 1e-10 of the largest)
    are clamped to zero; anything more negative means the kernel is not
    positive semidefinite on this grid and raises.
    """
    if not grid.periodic:
        raise ValueError("kernel_spectrum needs a periodic grid")
    x = grid.points()
    row = kernel.value(x - x[0])
    # a stationary kernel on the periodic grid must give a symmetric row
    asym = np.abs(row[1:] - row[1:][::-1]).max() if grid.n > 2 else 0.0
    if asym > 1e-12 * np.abs(row).max():
        raise ValueError(
            "kernel is not periodic on this grid (circulant row is asymmetric); "
            "check the period against the domain length"
        )
    spec = np.fft.rfft(row)
    lam = spec.real
    lam_max = lam.max()
    if lam.min() < -1e-10 * lam_max:
        raise ValueError("kernel is not positive semidefinite on this grid")
    return np.maximum(lam, 0.0)


def sample_gp_periodic(spectrum, grid, seed, size=1):
    """Zero-mean GP samples via circulant embedding. Returns (size, n).

    Seeded draws are deterministic; a zero spectrum yields the zero function.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = grid.n
    k = n // 2 + 1
    if spectrum.shape != (k,):
        raise ValueError("spectrum length does not match the grid")
    a = rng.standard_normal((size, k))
    b = rng.standard_normal((size, k))
    c = np.empty((size, k), dtype=np.complex128)
    c[:, 0] = np.sqrt(n * spectrum[0]) * a[:, 0]
    if n % 2 == 0:
        c[:, -1] = np.sqrt(n * spectrum[-1]) * a[:, -1]
        interior = slice(1, k - 1)
    else:
        interior = slice(1, k)
    amp = np.sqrt(0.5 * n * spectrum[interior])
    c[:, interior] = amp * (a[:, interior] + 1j * b[:, interior])
    return np.fft.irfft(c, n=n, axis=-1)


def sample_gp_dense(kernel, points, seed, size=1, jitter=1e-10):
    """Zero-mean GP samples at arbitrary points via dense Cholesky.

    Escalates diagonal jitter by 10x up to 1e-6 before giving up.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chol = cholesky_factor(kernel, points, jitter)
    z = rng.standard_normal((size, len(points)))
    return z @ chol.T


def cholesky_factor(kernel, points, jitter=1e-10):
    points = np.asarray(points, dtype=np.float64)
    cov = kernel.value(np.abs(points[:, None] - points[None, :]))
    scale = np.abs(np.diag(cov)).max()
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(cov + j * scale * np.eye(len(points)))
        except np.linalg.LinAlgError:
            j *= 10.0
            if j > 1e-6:
                raise np.linalg.LinAlgError(
                    "covariance not positive definite even with jitter 1e-6"
                )
