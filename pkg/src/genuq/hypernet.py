"""Generative hyper-network producing a random subset of operator parameters.

A latent draw z (standard normal, dimension d) is pushed through a small MLP
whose output length equals the stochastic subset size S; the remaining
operator parameters stay deterministic. Initialization places the generator
near the deterministic model: the output bias starts at the deterministic
values of the masked coordinates and the final-layer weights are shrunk, so
early training behaves like the plain operator plus a small perturbation.
"""

import math

import numpy as np

from . import autograd as ag
from .operators import Layout, glorot_init, mlp_apply

HIDDEN_WIDTHS = (10, 20, 30, 40)
FINAL_WEIGHT_SCALE = 1e-2


def stochastic_subset_size(n_params, proportion):
    """S = round(proportion * n_params); proportions in (0, 1]."""
    if not 0.0 < proportion <= 1.0:
        raise ValueError("proportion must lie in (0, 1]")
    s = int(np.rint(proportion * n_params))
    if s < 1:
        raise ValueError(
            f"proportion {proportion} selects no parameters out of {n_params}"
        )
    return s


def select_stochastic_mask(n_params, proportion, seed):
    """Sorted uniform sample without replacement of round(proportion * M) indices."""
    s = stochastic_subset_size(n_params, proportion)
    rng = np.random.default_rng(seed)
    idx = rng.choice(n_params, size=s, replace=False)
    idx.sort()
    return idx.astype(np.int64)


def latent_dim(subset_size, fraction):
    """Generator input dimension: ceil(fraction * S), at least 1."""
    if fraction <= 0:
        raise ValueError("latent fraction must be positive")
    return max(1, math.ceil(fraction * subset_size))


def sample_latent(d, n, seed):
    """n i.i.d. standard-normal latent vectors of dimension d, (n, d)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((n, d))


class HyperNetwork:
    """MLP from latent space to values for the masked parameter coordinates."""

    def __init__(self, d_latent, out_dim):
        if d_latent < 1 or out_dim < 1:
            raise ValueError("latent and output dimensions must be >= 1")
        self.d_latent = d_latent
        self.out_dim = out_dim
        self.sizes = [d_latent, *HIDDEN_WIDTHS, out_dim]
        self.layout = Layout()
        self.layout.add_mlp("gen", self.sizes)

    def param_count(self):
        return self.layout.total

    def init_params(self, seed, out_bias):
        """Glorot weights; final layer shrunk and biased to `out_bias`.

        out_bias: (out_dim,) values the generator should emit at z = 0
        (up to the shrunken perturbation), typically theta_det[mask].
        """
        out_bias = np.asarray(out_bias, dtype=np.float64)
        if out_bias.shape != (self.out_dim,):
            raise ValueError("out_bias must match the output dimension")
        phi = glorot_init(self.layout, seed)
        last = len(self.sizes) - 2
        _, _, w_off, w_size = self.layout.find(f"gen.w{last}")
        _, _, b_off, b_size = self.layout.find(f"gen.b{last}")
        phi[w_off : w_off + w_size] *= FINAL_WEIGHT_SCALE
        phi[b_off : b_off + b_size] = out_bias
        return phi

    def apply(self, phi, z):
        """Generated values for the masked coordinates; (n, d) -> (n, out_dim)."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.d_latent:
            raise ValueError("z must be (n_draws, d_latent)")
        return mlp_apply(phi, self.layout, "gen", self.sizes, z)
