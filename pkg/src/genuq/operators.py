"""Neural operator architectures whose parameters the generator randomizes.

Two architectures are provided, both as flat-parameter-vector models so that a
generator can overwrite arbitrary coordinates:

  - SpectralOperator: pointwise lifting MLP, learned Fourier multiplier,
    inverse transform (periodic grids);
  - PodDeepOnet: POD projection of the input, branch/trunk networks, and a
    hard boundary factor 1 - x^2 (non-periodic grids on [-1, 1]).

Every architecture exposes the same small surface: a parameter layout, an
initializer, and apply functions for the plain, noise-input ("gen"),
dropout, and mean/log-variance ("nll") usages. Apply functions accept a
single parameter vector (M,) or a batch of vectors (n, M) and build an
autograd graph, so they serve both training and plain evaluation.
"""

import math

import numpy as np

from . import autograd as ag

GELU = ag.gelu

# log-variance head range; exp(-14) ~ 8e-7 keeps the NLL bounded on
# normalized data, exp(6) ~ 400 allows essentially uninformative points
LOGVAR_LO = -14.0
LOGVAR_HI = 6.0


def mlp_sizes(n_in, width, n_hidden, n_out):
    return [n_in] + [width] * n_hidden + [n_out]


def mlp_param_count(sizes):
    return sum((fi + 1) * fo for fi, fo in zip(sizes[:-1], sizes[1:]))


class Layout:
    """Order-preserving map from parameter names to flat index ranges."""

    def __init__(self):
        self.entries = []  # (name, shape, offset, size)
        self.total = 0

    def add(self, name, shape):
        size = int(np.prod(shape))
        self.entries.append((name, tuple(shape), self.total, size))
        self.total += size

    def add_mlp(self, prefix, sizes):
        for li, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.add(f"{prefix}.w{li}", (fi, fo))
            self.add(f"{prefix}.b{li}", (fo,))

    def find(self, name):
        for entry in self.entries:
            if entry[0] == name:
                return entry
        raise KeyError(name)

    def slice(self, theta, name):
        """View of `theta` for one named parameter, batch axes preserved."""
        _, shape, offset, size = self.find(name)
        lead = theta.shape[:-1]
        return ag.reshape(ag.narrow(theta, -1, offset, size), lead + shape)

    def manifest(self):
        return [
            {"name": n, "shape": list(s), "offset": o, "size": z}
            for n, s, o, z in self.entries
        ]


def glorot_init(layout, seed):
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases, layout order."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(layout.total)
    for name, shape, offset, size in layout.entries:
        if len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            theta[offset : offset + size] = rng.uniform(-bound, bound, size)
    return theta


def mlp_apply(theta, layout, prefix, sizes, x, activation=GELU, masks=None):
    """Forward pass of a fully connected net read out of a flat vector.

    x: Tensor or array (..., rows, sizes[0]); theta: (M,) or (n, M); masks,
    when given, multiply the hidden activations (dropout). Batch axes of x
    and theta broadcast against each other.
    """
    x = ag.as_tensor(x)
    n_layers = len(sizes) - 1
    for li in range(n_layers):
        w = layout.slice(theta, f"{prefix}.w{li}")
        b = layout.slice(theta, f"{prefix}.b{li}")
        b = ag.reshape(b, b.shape[:-1] + (1, sizes[li + 1]))
        x = x @ w + b
        if li < n_layers - 1:
            x = activation(x)
            if masks is not None:
                x = x * ag.as_tensor(masks[li])
    return x


def dropout_masks(rng, rate, shapes):
    """Inverted-dropout multipliers: 0 with probability rate, else 1/(1-rate)."""
    keep = 1.0 - rate
    return [(rng.random(s) >= rate) / keep for s in shapes]


def squash_logvar(raw):
    """Affine hard-sigmoid squash of a free field into [LOGVAR_LO, LOGVAR_HI]."""
    span = LOGVAR_HI - LOGVAR_LO
    return ag.hardsigmoid(raw) * span + LOGVAR_LO


# ---------------------------------------------------------------------------
# spectral operator


def spectral_multiply(field, mult_re, mult_im):
    """Fourier-multiplier stage: irFFT((re + i im) * rFFT(field)).

    field: Tensor (..., m, grid_n); mult_re/mult_im: Tensors or arrays
    broadcastable to the (..., 1, K) coefficient shape, K = grid_n//2 + 1.
    """
    field = ag.as_tensor(field)
    n = field.shape[-1]
    spec = ag.rfft(field)
    re = ag.as_tensor(mult_re)
    im = ag.as_tensor(mult_im)
    mult = ag.concat(
        [ag.reshape(re, re.shape + (1,)), ag.reshape(im, im.shape + (1,))], axis=-1
    )
    return ag.irfft(ag.complex_mul(spec, mult), n)


class SpectralOperator:
    """Lift-multiply-invert operator on a periodic power-of-two grid.

    variant: "plain" (one multiplier head), "gen" (extra noise input channel
    to the lift), "nll" (second multiplier head emitting a log-variance
    field). Dropout usage shares the "plain" parameters.
    """

    def __init__(self, grid, variant="plain", width=32, n_hidden=6):
        if not grid.periodic:
            raise ValueError("spectral operator needs a periodic grid")
        if grid.n & (grid.n - 1):
            raise ValueError("grid size must be a power of two")
        if variant not in ("plain", "gen", "nll"):
            raise ValueError(f"unknown variant {variant!r}")
        self.grid = grid
        self.variant = variant
        self.width = width
        self.n_hidden = n_hidden
        self.lift_sizes = mlp_sizes(2 if variant == "gen" else 1, width, n_hidden, 1)
        self.head_sizes = mlp_sizes(1, width, n_hidden, 1)
        self.heads = ["mult_re", "mult_im"]
        if variant == "nll":
            self.heads += ["logvar_re", "logvar_im"]
        self.layout = Layout()
        self.layout.add_mlp("lift", self.lift_sizes)
        for head in self.heads:
            self.layout.add_mlp(head, self.head_sizes)
        k = grid.n // 2 + 1
        # multiplier networks see the wavenumber index scaled to [0, 1]
        self.kappa_norm = (np.arange(k) / (k - 1.0)).reshape(k, 1)

    def param_count(self):
        return self.layout.total

    def init_params(self, seed):
        return glorot_init(self.layout, seed)

    def pointwise_lift(self, theta, u, masks=None):
        """Lift MLP applied at every grid node; returns (..., m, grid_n)."""
        u = np.asarray(u, dtype=np.float64)
        m = u.shape[0]
        x = u.reshape(m * self.grid.n, 1)
        out = mlp_apply(theta, self.layout, "lift", self.lift_sizes, x, masks=masks)
        return ag.reshape(out, out.shape[:-2] + (m, self.grid.n))

    def multiplier(self, theta, prefix="mult"):
        """Complex multiplier values on the rFFT bins, as two (..., 1, K) parts."""
        k = self.kappa_norm.shape[0]
        re = mlp_apply(theta, self.layout, f"{prefix}_re", self.head_sizes, self.kappa_norm)
        im = mlp_apply(theta, self.layout, f"{prefix}_im", self.head_sizes, self.kappa_norm)
        re = ag.reshape(re, re.shape[:-2] + (1, k))
        im = ag.reshape(im, im.shape[:-2] + (1, k))
        return re, im

    def apply(self, theta, u):
        """v = spectral_multiply(lift(u)); theta (M,) -> (m, grid), (n, M) -> (n, m, grid)."""
        if self.variant != "plain":
            raise ValueError(f"apply() is for the plain variant, not {self.variant!r}")
        re, im = self.multiplier(theta)
        return spectral_multiply(self.pointwise_lift(theta, u), re, im)

    def apply_gen(self, theta, u, noise):
        """Noise-channel baseline: lift sees (u(x), xi(x)) pairs.

        noise: (n_draws, m, grid_n) standard normals; returns (n_draws, m, grid_n).
        """
        if self.variant != "gen":
            raise ValueError("apply_gen() needs the gen variant")
        u = np.asarray(u, dtype=np.float64)
        noise = np.asarray(noise, dtype=np.float64)
        n_draws, m, _ = noise.shape
        pair = np.stack(
            [np.broadcast_to(u, noise.shape), noise], axis=-1
        ).reshape(n_draws, m * self.grid.n, 2)
        out = mlp_apply(theta, self.layout, "lift", self.lift_sizes, pair)
        field = ag.reshape(out, (n_draws, m, self.grid.n))
        re, im = self.multiplier(theta)
        return spectral_multiply(field, re, im)

    def apply_dropout(self, theta, u, rng, n_draws, rate=0.1):
        """n_draws stochastic forwards with dropout on the lift's hidden units."""
        if self.variant != "plain":
            raise ValueError("dropout shares the plain variant")
        u = np.asarray(u, dtype=np.float64)
        rows = u.shape[0] * self.grid.n
        masks = dropout_masks(
            rng, rate, [(n_draws, rows, self.width)] * self.n_hidden
        )
        re, im = self.multiplier(theta)
        return spectral_multiply(self.pointwise_lift(theta, u, masks=masks), re, im)

    def apply_nll(self, theta, u):
        """Mean field and squashed log-variance field, both (m, grid_n)."""
        if self.variant != "nll":
            raise ValueError("apply_nll() needs the nll variant")
        field = self.pointwise_lift(theta, u)
        mean = spectral_multiply(field, *self.multiplier(theta, "mult"))
        raw = spectral_multiply(field, *self.multiplier(theta, "logvar"))
        return mean, squash_logvar(raw)


# MOR-style configuration used by the periodic experiment: both networks of
# depth 6 / width 32 give 3 * 5377 = 16131 plain parameters.
def spectral_operator_for(grid, variant="plain"):
    return SpectralOperator(grid, variant=variant)


# ---------------------------------------------------------------------------
# POD-DeepONet


def pod_build_basis(snapshots, d_pod):
    """Top d_pod left singular directions of the uncentered snapshot matrix.

    snapshots: (n_snap, grid_n) raw input functions. Returns (grid_n, d_pod)
    with orthonormal columns; each column's largest-magnitude entry is made
    positive so the basis is reproducible across SVD implementations.
    """
    snapshots = np.asarray(snapshots, dtype=np.float64)
    if d_pod > min(snapshots.shape):
        raise ValueError("d_pod exceeds the snapshot rank bound")
    _, _, vt = np.linalg.svd(snapshots, full_matrices=False)
    basis = vt[:d_pod].T.copy()
    for j in range(d_pod):
        col = basis[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            basis[:, j] = -col
    return basis


class PodDeepOnet:
    """Branch/trunk operator with POD-compressed inputs and 1 - x^2 boundary.

    The trunk consumes grid coordinates (queries are the grid itself); the
    branch consumes POD coefficients of u. Outputs vanish at x = +-1 exactly
    through the boundary factor, matching the homogeneous Dirichlet data.
    """

    def __init__(self, grid, basis, variant="plain", width=128, n_hidden=5, p_latent=128):
        if grid.periodic:
            raise ValueError("POD-DeepONet expects a non-periodic grid")
        if variant not in ("plain", "gen", "nll"):
            raise ValueError(f"unknown variant {variant!r}")
        basis = np.asarray(basis, dtype=np.float64)
        if basis.shape[0] != grid.n:
            raise ValueError("basis rows must match the grid")
        self.grid = grid
        self.basis = basis
        self.variant = variant
        self.width = width
        self.n_hidden = n_hidden
        self.p_latent = p_latent
        d_pod = basis.shape[1]
        branch_in = 2 * d_pod if variant == "gen" else d_pod
        branch_out = 2 * p_latent if variant == "nll" else p_latent
        self.branch_sizes = mlp_sizes(branch_in, width, n_hidden, branch_out)
        self.trunk_sizes = mlp_sizes(1, width, n_hidden, p_latent)
        self.layout = Layout()
        self.layout.add_mlp("branch", self.branch_sizes)
        self.layout.add_mlp("trunk", self.trunk_sizes)
        self.x_query = grid.points().reshape(grid.n, 1)
        self.boundary = 1.0 - grid.points() ** 2

    def param_count(self):
        return self.layout.total

    def init_params(self, seed):
        return glorot_init(self.layout, seed)

    def project(self, u):
        return np.asarray(u, dtype=np.float64) @ self.basis

    def _trunk(self, theta, masks=None):
        t = mlp_apply(theta, self.layout, "trunk", self.trunk_sizes, self.x_query, masks=masks)
        return ag.transpose_last(t)  # (..., p_latent, grid_n)

    def _combine(self, branch_out, trunk_t):
        return branch_out @ trunk_t * self.boundary

    def apply(self, theta, u):
        """theta (M,) -> (m, grid_n); theta (n, M) -> (n, m, grid_n)."""
        if self.variant != "plain":
            raise ValueError(f"apply() is for the plain variant, not {self.variant!r}")
        b = mlp_apply(theta, self.layout, "branch", self.branch_sizes, self.project(u))
        return self._combine(b, self._trunk(theta))

    def apply_gen(self, theta, u, noise):
        """Branch sees POD coefficients of u and of a noise field, concatenated."""
        if self.variant != "gen":
            raise ValueError("apply_gen() needs the gen variant")
        noise = np.asarray(noise, dtype=np.float64)
        cu = self.project(u)
        cx = np.concatenate(
            [np.broadcast_to(cu, noise.shape[:1] + cu.shape), self.project(noise)], axis=-1
        )
        b = mlp_apply(theta, self.layout, "branch", self.branch_sizes, cx)
        return self._combine(b, self._trunk(theta))

    def apply_dropout(self, theta, u, rng, n_draws, rate=0.1):
        """Dropout on branch and trunk hidden units, fresh masks per draw."""
        if self.variant != "plain":
            raise ValueError("dropout shares the plain variant")
        c = self.project(u)
        bmasks = dropout_masks(
            rng, rate, [(n_draws, c.shape[0], self.width)] * self.n_hidden
        )
        tmasks = dropout_masks(
            rng, rate, [(n_draws, self.grid.n, self.width)] * self.n_hidden
        )
        b = mlp_apply(theta, self.layout, "branch", self.branch_sizes, c, masks=bmasks)
        return self._combine(b, self._trunk(theta, masks=tmasks))

    def apply_nll(self, theta, u):
        """Mean and squashed log-variance fields, both (m, grid_n).

        The mean head carries the boundary factor; the log-variance head does
        not (the squash already bounds it, and the data variance at the
        boundary is genuinely zero only in the limit).
        """
        if self.variant != "nll":
            raise ValueError("apply_nll() needs the nll variant")
        b = mlp_apply(theta, self.layout, "branch", self.branch_sizes, self.project(u))
        p = self.p_latent
        trunk_t = self._trunk(theta)
        mean = ag.narrow(b, -1, 0, p) @ trunk_t * self.boundary
        raw = ag.narrow(b, -1, p, p) @ trunk_t
        return mean, squash_logvar(raw)
