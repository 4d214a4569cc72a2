"""Post-training diagnostics: predictive ensembles, test-set distances,
uncertainty bands, pointwise histograms, scatter pairs, and the sweep over
stochastic-subset size and generator dimension.

All distances and mean errors are computed on fields divided by the training
v scale stored in the checkpoint, so thresholds are comparable across problems
and methods (every method trained on a dataset shares the same scale). Sample
curves returned to callers stay in physical units for plotting.
"""

import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .checkpoint import load_checkpoint, save_checkpoint
from .oracles import EluOracle, EllipticOracle, elu_mean_response
from .scoring import energy_distance, function_norm
from .training import NonFiniteLossError, train

# methods with a non-degenerate predictive distribution; "deterministic"
# also flows through sample_ensemble but as a point mass (n identical copies)
STOCHASTIC_METHODS = ("genuq", "gen", "dropout", "gaussian-nll")


def oracle_for(dataset):
    problem = dataset.meta.get("problem") if dataset.meta else None
    if problem == "elu" or (problem is None and dataset.grid.periodic):
        return EluOracle(dataset.grid)
    if problem == "elliptic" or (problem is None and not dataset.grid.periodic):
        return EllipticOracle(dataset.grid)
    raise ValueError(f"no oracle for problem {problem!r}")


@dataclass
class PredictiveEnsemble:
    """n stochastic model outputs for one input, physical units."""

    u: np.ndarray
    samples: np.ndarray  # (n, grid_n)
    seed: int
    method: str


def _assemble(ckpt, z):
    """Latent draws -> full parameter vectors (n, M), tape-free."""
    gen = ckpt.hypernet.apply(ckpt.phi, z)
    return ag.assemble_params(gen, ag.as_tensor(ckpt.theta), ckpt.mask).data


def _draw_samples(ckpt, u_norm, n, rng):
    """n normalized output draws for one normalized input (grid_n,)."""
    model = ckpt.model
    u1 = u_norm[None, :]
    method = ckpt.method
    if method == "genuq":
        z = rng.standard_normal((n, ckpt.hypernet.d_latent))
        return model.apply(_assemble(ckpt, z), u1).data[:, 0, :]
    if method == "gen":
        noise = rng.standard_normal((n, 1, u_norm.shape[0]))
        return model.apply_gen(ckpt.theta, u1, noise).data[:, 0, :]
    if method == "dropout":
        out = model.apply_dropout(
            ckpt.theta, u1, rng, n_draws=n, rate=ckpt.config.dropout_rate
        )
        return out.data[:, 0, :]
    if method == "gaussian-nll":
        mean, logvar = model.apply_nll(ckpt.theta, u1)
        sigma = np.exp(0.5 * logvar.data[0])
        return mean.data[0] + sigma * rng.standard_normal((n, u_norm.shape[0]))
    if method == "deterministic":
        # point-mass predictive distribution: n copies of the single output,
        # so distance metrics and artifact writers work for the baseline too
        out = model.apply(ag.as_tensor(ckpt.theta), u1).data[0]
        return np.repeat(out[None, :], n, axis=0)
    raise ValueError(f"method {method!r} has no predictive distribution to sample")


def sample_ensemble(ckpt, u, n, seed):
    """n independent stochastic forward passes at input u (physical units)."""
    u = np.asarray(u, dtype=np.float64)
    rng = np.random.default_rng(seed)
    samples = _draw_samples(ckpt, u / ckpt.u_scale, n, rng) * ckpt.v_scale
    return PredictiveEnsemble(u=u, samples=samples, seed=seed, method=ckpt.method)


def test_energy_distance(ckpt, dataset, n=128, seed=0, self_distance=True,
                         oracle=None):
    """Mean over test inputs of the model-vs-oracle ensemble energy distance.

    Per input, a fresh n-member oracle ensemble is generated (the stored
    dataset holds a single draw per input). With self_distance, a second
    independent oracle ensemble per input estimates the resampling noise
    floor that any reported distance should be read against. Seed streams are
    spawned per input in a fixed order, so the floor does not perturb the
    model-vs-oracle draws.
    """
    if oracle is None:
        oracle = oracle_for(dataset)
    idx = dataset.indices(2)
    if len(idx) == 0:
        raise ValueError("dataset has no test split")
    scale = ckpt.v_scale
    root = np.random.SeedSequence(seed)
    streams = root.spawn(3 * len(idx))
    dists = []
    floors = []
    for k, i in enumerate(idx):
        u = dataset.u[i]
        # _draw_samples already yields normalized outputs; only the oracle
        # ensembles need dividing by the training scale
        model_s = _draw_samples(
            ckpt, u / ckpt.u_scale, n, np.random.default_rng(streams[3 * k])
        )
        ref = oracle.ensemble(u, n, streams[3 * k + 1]) / scale
        dists.append(energy_distance(model_s, ref))
        if self_distance:
            ref2 = oracle.ensemble(u, n, streams[3 * k + 2]) / scale
            floors.append(energy_distance(ref, ref2))
    out = {
        "energy_distance": float(np.mean(dists)),
        "energy_distance_spread": float(np.std(dists)),
        "n_ensemble": int(n),
        "n_inputs": int(len(idx)),
        "seed": int(seed),
    }
    if self_distance:
        out["oracle_self_distance"] = float(np.mean(floors))
    return out


def oracle_self_distance(dataset, n=128, seed=0, scale=1.0, oracle=None):
    """Noise floor: mean distance between two independent oracle ensembles.

    Uses the same per-input seed layout as test_energy_distance, so with a
    shared seed the floor here is exactly the floor that function reports.
    """
    if oracle is None:
        oracle = oracle_for(dataset)
    idx = dataset.indices(2)
    if len(idx) == 0:
        raise ValueError("dataset has no test split")
    streams = np.random.SeedSequence(seed).spawn(3 * len(idx))
    floors = []
    for k, i in enumerate(idx):
        u = dataset.u[i]
        ref = oracle.ensemble(u, n, streams[3 * k + 1]) / scale
        ref2 = oracle.ensemble(u, n, streams[3 * k + 2]) / scale
        floors.append(energy_distance(ref, ref2))
    return float(np.mean(floors))


# ---------------------------------------------------------------------------
# ensemble means and the mean-L2 metric


def _sobol_normal(d, n, seed):
    """n scrambled-Sobol standard normal points in d dimensions."""
    from scipy.stats import qmc
    from scipy.special import ndtri

    sampler = qmc.Sobol(d, scramble=True, seed=seed)
    u = sampler.random(n)
    tiny = np.finfo(np.float64).tiny
    return ndtri(np.clip(u, tiny, 1.0 - 1e-16))


def ensemble_mean(ckpt, u_batch, n_mean=8192, seed=0, chunk=128):
    """Predictive-mean curves for a batch of inputs, physical units.

    gaussian-nll and deterministic checkpoints return their mean head
    exactly. genuq and gen integrate the latent/noise with scrambled Sobol
    points (smooth integrands, so quadrature error falls much faster than
    Monte Carlo); dropout uses plain Monte Carlo over masks. The same node
    set is shared by every input in the batch, which biases nothing and lets
    the draws batch.
    """
    u_batch = np.asarray(u_batch, dtype=np.float64)
    model = ckpt.model
    un = u_batch / ckpt.u_scale
    method = ckpt.method
    if method == "deterministic":
        return model.apply(ckpt.theta, un).data * ckpt.v_scale
    if method == "gaussian-nll":
        mean, _ = model.apply_nll(ckpt.theta, un)
        return mean.data * ckpt.v_scale
    n_mean = 1 << max(0, int(math.ceil(math.log2(n_mean))))
    m, grid_n = un.shape
    total = np.zeros((m, grid_n))
    if method == "genuq":
        z_all = _sobol_normal(ckpt.hypernet.d_latent, n_mean, seed)
        for lo in range(0, n_mean, chunk):
            thetas = _assemble(ckpt, z_all[lo : lo + chunk])
            total += model.apply(thetas, un).data.sum(axis=0)
    elif method == "gen":
        xi_all = _sobol_normal(grid_n, n_mean, seed)
        for lo in range(0, n_mean, chunk):
            xi = np.broadcast_to(
                xi_all[lo : lo + chunk, None, :], (min(chunk, n_mean - lo), m, grid_n)
            )
            total += model.apply_gen(ckpt.theta, un, xi).data.sum(axis=0)
    elif method == "dropout":
        rng = np.random.default_rng(seed)
        for lo in range(0, n_mean, chunk):
            k = min(chunk, n_mean - lo)
            out = model.apply_dropout(
                ckpt.theta, un, rng, n_draws=k, rate=ckpt.config.dropout_rate
            )
            total += out.data.sum(axis=0)
    else:
        raise ValueError(f"method {method!r} has no predictive mean")
    return total / n_mean * ckpt.v_scale


def oracle_mean(dataset, u_batch, n_mean=1024, seed=0):
    """Oracle predictive-mean curves; analytic for ELU, Monte Carlo otherwise."""
    problem = dataset.meta.get("problem") if dataset.meta else None
    u_batch = np.asarray(u_batch, dtype=np.float64)
    if problem == "elu" or (problem is None and dataset.grid.periodic):
        return np.stack([elu_mean_response(u, dataset.grid) for u in u_batch])
    oracle = oracle_for(dataset)
    streams = np.random.SeedSequence(seed).spawn(len(u_batch))
    return np.stack(
        [oracle.ensemble(u, n_mean, s).mean(axis=0) for u, s in zip(u_batch, streams)]
    )


def mean_l2_error(ckpt, dataset, n_mean=8192, seed=0, input_chunk=32):
    """Mean over test inputs of ||model mean - oracle mean|| (normalized).

    The oracle side is exact for ELU; the model side carries the quadrature
    error of ensemble_mean, which the n_mean default keeps well under the
    acceptance band.
    """
    idx = dataset.indices(2)
    if len(idx) == 0:
        raise ValueError("dataset has no test split")
    errs = []
    for lo in range(0, len(idx), input_chunk):
        batch = dataset.u[idx[lo : lo + input_chunk]]
        mm = ensemble_mean(ckpt, batch, n_mean=n_mean, seed=seed)
        om = oracle_mean(dataset, batch, seed=seed + 1)
        errs.append(function_norm((mm - om) / ckpt.v_scale))
    errs = np.concatenate(errs)
    return {
        "mean_l2": float(errs.mean()),
        "mean_l2_spread": float(errs.std()),
        "n_mean": int(n_mean),
        "seed": int(seed),
    }


# ---------------------------------------------------------------------------
# per-input diagnostics (bands, histograms, scatters)


@dataclass
class Bands:
    levels: tuple
    mean: np.ndarray
    quantiles: np.ndarray  # (len(levels), grid_n)


def predictive_bands(ensemble, levels=(0.025, 0.975)):
    """Pointwise empirical quantiles (linear interpolation) plus the mean."""
    samples = np.asarray(ensemble.samples if hasattr(ensemble, "samples") else ensemble)
    levels = tuple(sorted(float(l) for l in levels))
    if any(not 0.0 <= l <= 1.0 for l in levels):
        raise ValueError("levels must lie in [0, 1]")
    n = samples.shape[0]
    if n < 40 and (levels[0] <= 0.025 or levels[-1] >= 0.975):
        raise ValueError("tail quantiles at 2.5/97.5% need an ensemble of >= 40")
    q = np.quantile(samples, levels, axis=0, method="linear")
    return Bands(levels=levels, mean=samples.mean(axis=0), quantiles=q)


def _snap(grid, x):
    i = int(np.argmin(np.abs(grid.points() - x)))
    return i, float(grid.points()[i])


@dataclass
class Histogram:
    x: float          # snapped node location
    requested: float
    edges: np.ndarray
    counts: dict      # name -> integer counts, summing to the sample count


def point_histograms(ensembles, grid, points, bins=30):
    """Fixed-range histograms of sampled values at query nodes.

    ensembles: {name: (n, grid_n) samples}; the bin range per point is pooled
    over every named sample set so counts are directly comparable.
    """
    out = []
    for x in points:
        i, x_node = _snap(grid, x)
        pooled = np.concatenate([np.asarray(s)[:, i] for s in ensembles.values()])
        lo, hi = float(pooled.min()), float(pooled.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
        counts = {
            name: np.histogram(np.asarray(s)[:, i], bins=edges)[0]
            for name, s in ensembles.items()
        }
        out.append(Histogram(x=x_node, requested=float(x), edges=edges, counts=counts))
    return out


@dataclass
class ScatterSet:
    x0: float
    x1: float
    points: np.ndarray  # (n, 2) of (v(x0), v(x1)) pairs
    correlation: float  # nan when degenerate
    degenerate: bool


def pairwise_scatter(ensemble, grid, x0, x1_list):
    """(v(x0), v(x1)) sample pairs with their correlation, per x1."""
    samples = np.asarray(ensemble.samples if hasattr(ensemble, "samples") else ensemble)
    i0, x0_node = _snap(grid, x0)
    out = []
    for x1 in x1_list:
        i1, x1_node = _snap(grid, x1)
        pts = np.stack([samples[:, i0], samples[:, i1]], axis=-1)
        s0, s1 = pts[:, 0].std(), pts[:, 1].std()
        degenerate = s0 == 0.0 or s1 == 0.0
        corr = float("nan") if degenerate else float(np.corrcoef(pts.T)[0, 1])
        out.append(
            ScatterSet(
                x0=x0_node, x1=x1_node, points=pts, correlation=corr,
                degenerate=degenerate,
            )
        )
    return out


# ---------------------------------------------------------------------------
# sweep over stochastic-subset proportion and generator-dimension fraction


@dataclass
class SweepCell:
    mask_proportion: float
    latent_fraction: float
    subset_size: int
    latent_dim: int
    converged: bool
    energy_distance: float  # nan when not converged
    mean_l2: float          # nan when not converged
    best_val: float
    error: str              # "" unless training aborted

    def row(self):
        return {
            "R": self.mask_proportion,
            "d": self.latent_fraction,
            "energy_distance": self.energy_distance,
            "mean_l2": self.mean_l2,
            "converged": int(self.converged),
        }


@dataclass
class SweepResult:
    mask_proportions: tuple
    latent_fractions: tuple
    cells: list

    def cell(self, proportion, fraction):
        for c in self.cells:
            if c.mask_proportion == proportion and c.latent_fraction == fraction:
                return c
        raise KeyError((proportion, fraction))


def _cell_filename(proportion, fraction):
    return f"cell_R{proportion:g}_d{fraction:g}.json"


def _derive_cell_config(base_config, proportion, fraction, stream):
    ints = [int(v) for v in stream.generate_state(5)]
    return dataclasses.replace(
        base_config,
        method="genuq",
        mask_proportion=proportion,
        latent_fraction=fraction,
        init_seed=ints[0],
        mask_seed=ints[1],
        shuffle_seed=ints[2],
        latent_seed=ints[3],
        val_seed=ints[4],
    )


def run_sweep_cell(dataset, cfg, n_ensemble=128, n_mean=8192, eval_seed=0,
                   checkpoint_dir=None):
    """Train one sweep cell and evaluate it; divergence becomes a flag."""
    from .hypernet import latent_dim, stochastic_subset_size

    try:
        result = train(dataset, cfg)
    except NonFiniteLossError as exc:
        # size bookkeeping is still well defined for an aborted run
        from .training import build_model

        model, _ = build_model(dataset.grid, "genuq", cfg, dataset.u[dataset.indices(0)])
        subset = stochastic_subset_size(model.param_count(), cfg.mask_proportion)
        return SweepCell(
            mask_proportion=cfg.mask_proportion,
            latent_fraction=cfg.latent_fraction,
            subset_size=subset,
            latent_dim=latent_dim(subset, cfg.latent_fraction),
            converged=False,
            energy_distance=float("nan"),
            mean_l2=float("nan"),
            best_val=float("nan"),
            error=str(exc),
        )
    subset = len(result.aux["mask"])
    cell = SweepCell(
        mask_proportion=cfg.mask_proportion,
        latent_fraction=cfg.latent_fraction,
        subset_size=subset,
        latent_dim=result.aux["d_latent"],
        converged=not result.diverged,
        energy_distance=float("nan"),
        mean_l2=float("nan"),
        best_val=result.best_val,
        error="",
    )
    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, result, cfg)
    if cell.converged:
        ckpt = _checkpoint_view(result, cfg, dataset.grid)
        cell.energy_distance = test_energy_distance(
            ckpt, dataset, n=n_ensemble, seed=eval_seed, self_distance=False
        )["energy_distance"]
        cell.mean_l2 = mean_l2_error(ckpt, dataset, n_mean=n_mean, seed=eval_seed)[
            "mean_l2"
        ]
    return cell


def _checkpoint_view(result, cfg, grid):
    """LoadedCheckpoint-shaped view of an in-memory TrainResult."""
    from .checkpoint import LoadedCheckpoint

    return LoadedCheckpoint(
        manifest={},
        model=result.model,
        theta=result.params["theta"],
        phi=result.params.get("phi"),
        mask=result.aux.get("mask"),
        hypernet=result.aux.get("hypernet"),
        config=cfg,
        u_scale=result.u_scale,
        v_scale=result.v_scale,
    )


def _cell_to_json(cell):
    d = dataclasses.asdict(cell)
    for key in ("energy_distance", "mean_l2", "best_val"):
        if isinstance(d[key], float) and math.isnan(d[key]):
            d[key] = None
    return d


def _cell_from_json(d):
    for key in ("energy_distance", "mean_l2", "best_val"):
        if d[key] is None:
            d[key] = float("nan")
    return SweepCell(**d)


def _sweep_worker(args):
    dataset, cfg, n_ensemble, n_mean, eval_seed, checkpoint_dir = args
    return run_sweep_cell(
        dataset, cfg, n_ensemble=n_ensemble, n_mean=n_mean, eval_seed=eval_seed,
        checkpoint_dir=checkpoint_dir,
    )


def run_sweep(dataset, base_config, mask_proportions, latent_fractions,
              out_dir=None, n_ensemble=128, n_mean=8192, seed=11, jobs=1):
    """Train and evaluate the (R, d) grid; resumable through per-cell files.

    Every cell gets its own seeds derived from `seed` by grid position, so a
    resumed or parallel sweep computes exactly what a fresh serial one would.
    """
    mask_proportions = tuple(mask_proportions)
    latent_fractions = tuple(latent_fractions)
    if not mask_proportions or not latent_fractions:
        raise ValueError("sweep needs nonempty proportion and fraction lists")
    grid_cells = [(p, f) for p in mask_proportions for f in latent_fractions]
    streams = np.random.SeedSequence(seed).spawn(2 * len(grid_cells))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    slots = [None] * len(grid_cells)
    pending = []
    for k, (p, f) in enumerate(grid_cells):
        if out_dir is not None:
            cell_path = out_dir / _cell_filename(p, f)
            if cell_path.exists():
                slots[k] = _cell_from_json(json.loads(cell_path.read_text()))
                continue
        cfg = _derive_cell_config(base_config, p, f, streams[2 * k])
        eval_seed = int(streams[2 * k + 1].generate_state(1)[0])
        ckpt_dir = None
        if out_dir is not None:
            ckpt_dir = out_dir / f"run_R{p:g}_d{f:g}" / "checkpoint"
        pending.append((k, (dataset, cfg, n_ensemble, n_mean, eval_seed, ckpt_dir)))

    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, [args for _, args in pending]))
        for (k, _), cell in zip(pending, results):
            slots[k] = cell
    else:
        for k, args in pending:
            slots[k] = _sweep_worker(args)

    if out_dir is not None:
        for k, cell in enumerate(slots):
            cell_path = out_dir / _cell_filename(*grid_cells[k])
            if not cell_path.exists():
                cell_path.write_text(
                    json.dumps(_cell_to_json(cell), indent=2, sort_keys=True) + "\n"
                )
    return SweepResult(
        mask_proportions=mask_proportions,
        latent_fractions=latent_fractions,
        cells=slots,
    )


# ---------------------------------------------------------------------------
# artifact writers


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.17g}"
    return str(v)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_bands_csv(path, x, bands_by_name):
    """Columns: x, then <name>_mean, <name>_lo, <name>_hi per source."""
    names = list(bands_by_name)
    header = ["x"]
    for name in names:
        header += [f"{name}_mean", f"{name}_lo", f"{name}_hi"]
    rows = []
    for i, xi in enumerate(np.asarray(x)):
        row = [xi]
        for name in names:
            b = bands_by_name[name]
            row += [b.mean[i], b.quantiles[0, i], b.quantiles[-1, i]]
        rows.append(row)
    _write_csv(path, header, rows)


def write_hist_csv(path, hist):
    names = list(hist.counts)
    header = ["bin_lo", "bin_hi"] + [f"count_{n}" for n in names]
    rows = []
    for j in range(len(hist.edges) - 1):
        rows.append(
            [hist.edges[j], hist.edges[j + 1]]
            + [int(hist.counts[n][j]) for n in names]
        )
    _write_csv(path, header, rows)


def write_scatter_csv(path, scatters_by_name):
    """Sample pairs per source; correlations live in metrics.json."""
    names = list(scatters_by_name)
    header = []
    for name in names:
        header += [f"{name}_v_x0", f"{name}_v_x1"]
    n = min(scatters_by_name[name].points.shape[0] for name in names)
    rows = []
    for i in range(n):
        row = []
        for name in names:
            row += list(scatters_by_name[name].points[i])
        rows.append(row)
    _write_csv(path, header, rows)


def write_sweep_csv(path, sweep):
    rows = [
        [
            c.mask_proportion,
            c.latent_fraction,
            c.energy_distance,
            c.mean_l2,
            int(c.converged),
        ]
        for c in sweep.cells
    ]
    _write_csv(path, ["R", "d", "energy_distance", "mean_l2", "converged"], rows)


def write_metrics_json(path, metrics):
    def _clean(v):
        if isinstance(v, dict):
            return {k: _clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [_clean(x) for x in v]
        if isinstance(v, (np.floating, float)):
            v = float(v)
            return None if math.isnan(v) else v
        if isinstance(v, (np.integer,)):
            return int(v)
        return v

    Path(path).write_text(json.dumps(_clean(metrics), indent=2, sort_keys=True) + "\n")
