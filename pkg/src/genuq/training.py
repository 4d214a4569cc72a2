"""Training loop for the stochastic-operator models and their baselines.

One call to train() runs the full staged-learning-rate protocol for a single
method on a single dataset and returns the parameters with the lowest
validation loss. Everything is seeded: initialization, the per-epoch batch
shuffle, the latent/noise draws per step, and the fixed validation draws, so
identical configs reproduce identical checkpoints bit for bit (single
threaded, no accidental RNG sharing).

Data is standardized by the training split's global standard deviations
before any loss is computed; the two scales travel with the checkpoint so
evaluation sees the same units. Raw dataset files are never modified.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from . import scoring
from .hypernet import HyperNetwork, latent_dim, select_stochastic_mask
from .operators import PodDeepOnet, SpectralOperator, pod_build_basis

METHODS = ("genuq", "gen", "dropout", "gaussian-nll", "deterministic")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteLossError(RuntimeError):
    """Raised when a training or validation loss stops being finite."""


@dataclass
class TrainConfig:
    method: str = "genuq"
    lr_stages: tuple = (1e-3, 1e-4, 1e-5, 1e-6)
    epochs_per_stage: int = 400
    batch_size: int = 64
    n_z: int = 8
    beta: float = 1.0
    mask_proportion: float = 0.001
    latent_fraction: float = 0.75
    dropout_rate: float = 0.1
    d_pod: int = 20
    init_seed: int = 0
    mask_seed: int = 1
    shuffle_seed: int = 2
    latent_seed: int = 3
    val_seed: int = 4

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        self.lr_stages = tuple(float(x) for x in self.lr_stages)

    def to_dict(self):
        d = asdict(self)
        d["lr_stages"] = list(self.lr_stages)
        return d


@dataclass
class TrainResult:
    params: dict            # name -> ndarray at the best validation epoch
    history: list           # rows: (epoch, stage_lr, train_loss, val_loss)
    best_epoch: int
    best_val: float
    final_val: float
    diverged: bool
    model: object           # architecture instance (operator)
    aux: dict               # method-specific statics: mask, hypernet, basis
    u_scale: float
    v_scale: float


class Adam:
    """Adam with the rescaled-step bias correction.

    The step size is lr * sqrt(1 - beta2^t) / (1 - beta1^t) applied to
    m / (sqrt(v) + eps); epsilon therefore sits outside the bias-corrected
    square root. First step with g=1 moves by -lr / (1 + eps * sqrt(1/(1-beta2))).
    """

    def __init__(self, size):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, data, grad, lr):
        self.t += 1
        self.m *= ADAM_BETA1
        self.m += (1.0 - ADAM_BETA1) * grad
        self.v *= ADAM_BETA2
        self.v += (1.0 - ADAM_BETA2) * grad * grad
        alpha = lr * math.sqrt(1.0 - ADAM_BETA2**self.t) / (1.0 - ADAM_BETA1**self.t)
        data -= alpha * self.m / (np.sqrt(self.v) + ADAM_EPS)


def build_model(grid, method, config, train_inputs=None):
    """Architecture instance for (grid, method); POD basis from train inputs."""
    variant = {"gen": "gen", "gaussian-nll": "nll"}.get(method, "plain")
    if grid.periodic:
        return SpectralOperator(grid, variant=variant), None
    if train_inputs is None:
        raise ValueError("POD-DeepONet needs training inputs for the basis")
    basis = pod_build_basis(train_inputs, config.d_pod)
    return PodDeepOnet(grid, basis, variant=variant), basis


class _Setup:
    """Per-method trainables and loss closures."""

    def __init__(self, model, config, seeds):
        self.model = model
        self.config = config
        self.aux = {}
        theta_seed, extra_seed = seeds
        theta0 = model.init_params(theta_seed)
        self.theta = ag.Tensor(theta0, requires_grad=True)
        self.leaves = {"theta": self.theta}
        if config.method == "genuq":
            mask = select_stochastic_mask(
                model.param_count(), config.mask_proportion, config.mask_seed
            )
            d = latent_dim(len(mask), config.latent_fraction)
            net = HyperNetwork(d, len(mask))
            phi0 = net.init_params(extra_seed, out_bias=theta0[mask])
            self.phi = ag.Tensor(phi0, requires_grad=True)
            self.leaves["phi"] = self.phi
            self.aux = {"mask": mask, "hypernet": net, "d_latent": d}

    def loss(self, u, v, rng):
        """Training loss on one (already normalized) batch; rng feeds the draws."""
        cfg = self.config
        method = cfg.method
        if method == "genuq":
            net = self.aux["hypernet"]
            z = rng.standard_normal((cfg.n_z, self.aux["d_latent"]))
            gen = net.apply(self.phi, z)
            thetas = ag.assemble_params(gen, self.theta, self.aux["mask"])
            preds = self.model.apply(thetas, u)
            return scoring.energy_score_batch(preds, v, beta=cfg.beta)
        if method == "gen":
            noise = rng.standard_normal((cfg.n_z,) + u.shape)
            preds = self.model.apply_gen(self.theta, u, noise)
            return scoring.energy_score_batch(preds, v, beta=cfg.beta)
        if method == "dropout":
            preds = self.model.apply_dropout(
                self.theta, u, rng, n_draws=cfg.n_z, rate=cfg.dropout_rate
            )
            return scoring.energy_score_batch(preds, v, beta=cfg.beta)
        if method == "gaussian-nll":
            mean, logvar = self.model.apply_nll(self.theta, u)
            return scoring.gaussian_nll(mean, logvar, v)
        preds = self.model.apply(self.theta, u)
        return scoring.mse(preds, v)


def train(dataset, config):
    """Run the staged protocol; returns the best-validation TrainResult.

    Raises NonFiniteLossError as soon as any train or validation loss stops
    being finite (the sweep runner treats that as a non-converged cell).
    """
    tr = dataset.indices(0)
    va = dataset.indices(1)
    if len(tr) == 0 or len(va) == 0:
        raise ValueError("dataset needs nonempty train and validation splits")
    u_scale = float(dataset.u[tr].std())
    v_scale = float(dataset.v[tr].std())
    u_tr = dataset.u[tr] / u_scale
    v_tr = dataset.v[tr] / v_scale
    u_va = dataset.u[va] / u_scale
    v_va = dataset.v[va] / v_scale

    seed_children = np.random.SeedSequence(config.init_seed).spawn(2)
    model, basis = build_model(dataset.grid, config.method, config, train_inputs=u_tr)
    setup = _Setup(model, config, seed_children)
    if basis is not None:
        setup.aux["pod_basis"] = basis

    adams = {name: Adam(leaf.data.size) for name, leaf in setup.leaves.items()}
    shuffle_rng = np.random.default_rng(config.shuffle_seed)
    latent_rng = np.random.default_rng(config.latent_seed)

    def validation_loss():
        # fixed seed: the same draws every epoch, so epochs compare cleanly;
        # chunked and tape-free to bound memory on large splits
        rng = np.random.default_rng(config.val_seed)
        total, count = 0.0, 0
        for leaf in setup.leaves.values():
            leaf.requires_grad = False
        try:
            for lo in range(0, len(u_va), 64):
                u_c = u_va[lo : lo + 64]
                v_c = v_va[lo : lo + 64]
                total += float(setup.loss(u_c, v_c, rng).data) * len(u_c)
                count += len(u_c)
        finally:
            for leaf in setup.leaves.values():
                leaf.requires_grad = True
        return total / count

    history = []
    best = (math.inf, -1, None)  # (val, epoch, snapshot)
    n_train = len(tr)
    epoch = 0
    for stage_lr in config.lr_stages:
        for _ in range(config.epochs_per_stage):
            perm = shuffle_rng.permutation(n_train)
            step_losses = []
            for lo in range(0, n_train, config.batch_size):
                idx = perm[lo : lo + config.batch_size]
                loss = setup.loss(u_tr[idx], v_tr[idx], latent_rng)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NonFiniteLossError(
                        f"non-finite training loss at epoch {epoch}, "
                        f"stage lr {stage_lr:g}, batch offset {lo}"
                    )
                for leaf in setup.leaves.values():
                    leaf.zero_grad()
                ag.backward(loss)
                for name, leaf in setup.leaves.items():
                    adams[name].step(leaf.data, leaf.grad, stage_lr)
                step_losses.append(value)
            val = validation_loss()
            if not math.isfinite(val):
                raise NonFiniteLossError(
                    f"non-finite validation loss at epoch {epoch}, stage lr {stage_lr:g}"
                )
            history.append((epoch, stage_lr, float(np.mean(step_losses)), val))
            if val < best[0]:
                snapshot = {
                    name: np.array(leaf.data, copy=True)
                    for name, leaf in setup.leaves.items()
                }
                best = (val, epoch, snapshot)
            epoch += 1

    final_val = history[-1][3]
    diverged = final_val > 10.0 * best[0]
    return TrainResult(
        params=best[2],
        history=history,
        best_epoch=best[1],
        best_val=best[0],
        final_val=final_val,
        diverged=diverged,
        model=model,
        aux=setup.aux,
        u_scale=u_scale,
        v_scale=v_scale,
    )
