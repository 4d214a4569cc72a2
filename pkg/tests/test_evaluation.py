"""Evaluation stack: ensembles, metrics, sweep runner, artifact writers."""

import json

import numpy as np
import pytest

from genuq import evaluation as ev
from genuq import oracles
from genuq.checkpoint import load_checkpoint, save_checkpoint
from genuq.scoring import energy_distance
from genuq.training import TrainConfig, train

FAST = dict(lr_stages=(1e-3, 1e-4), epochs_per_stage=8, batch_size=16, n_z=4)


def train_ckpt(tmp_path, dataset, method, **overrides):
    cfg = TrainConfig(method=method, **{**FAST, **overrides})
    result = train(dataset, cfg)
    path = tmp_path / method
    save_checkpoint(path, result, cfg, dataset_info={"name": "tiny"})
    return load_checkpoint(path)


@pytest.fixture(scope="module")
def genuq_ckpt(tmp_path_factory, elu_tiny):
    return train_ckpt(tmp_path_factory.mktemp("ck"), elu_tiny, "genuq", mask_proportion=0.01)


@pytest.fixture(scope="module")
def nll_ckpt(tmp_path_factory, elu_tiny):
    return train_ckpt(tmp_path_factory.mktemp("ck"), elu_tiny, "gaussian-nll")


@pytest.fixture(scope="module")
def det_ckpt(tmp_path_factory, elu_tiny):
    return train_ckpt(tmp_path_factory.mktemp("ck"), elu_tiny, "deterministic")


# --------------------------------------------------------------------------
# predictive sampling


def test_sample_ensemble_deterministic_and_stochastic(genuq_ckpt, elu_tiny):
    e1 = ev.sample_ensemble(genuq_ckpt, elu_tiny.u[0], 64, seed=3)
    e2 = ev.sample_ensemble(genuq_ckpt, elu_tiny.u[0], 64, seed=3)
    assert np.array_equal(e1.samples, e2.samples)
    assert e1.samples.shape == (64, 16)
    assert e1.samples.std(axis=0).max() > 0.0
    e3 = ev.sample_ensemble(genuq_ckpt, elu_tiny.u[0], 64, seed=4)
    assert not np.array_equal(e1.samples, e3.samples)


@pytest.mark.parametrize("method", ["gen", "dropout"])
def test_sampling_other_methods(tmp_path, elu_tiny, method):
    ck = train_ckpt(tmp_path, elu_tiny, method)
    ens = ev.sample_ensemble(ck, elu_tiny.u[0], 8, seed=0)
    assert ens.samples.shape == (8, 16)
    assert np.isfinite(ens.samples).all()
    assert ens.samples.std(axis=0).max() > 0.0


def test_nll_sampling_matches_heads(nll_ckpt, elu_tiny):
    ens = ev.sample_ensemble(nll_ckpt, elu_tiny.u[0], 4096, seed=1)
    u_norm = elu_tiny.u[:1] / nll_ckpt.u_scale
    mean, logvar = nll_ckpt.model.apply_nll(nll_ckpt.theta, u_norm)
    mu = mean.data[0] * nll_ckpt.v_scale
    sd = np.exp(0.5 * logvar.data[0]) * nll_ckpt.v_scale
    err = np.abs(ens.samples.mean(axis=0) - mu)
    assert np.all(err < 5.0 * sd / np.sqrt(4096) + 1e-12)


def test_deterministic_method_samples_point_mass(det_ckpt, elu_tiny):
    ens = ev.sample_ensemble(det_ckpt, elu_tiny.u[0], 4, seed=0)
    assert ens.samples.shape == (4, 16)
    assert np.all(ens.samples == ens.samples[0])
    out = det_ckpt.model.apply(det_ckpt.theta, elu_tiny.u[:1] / det_ckpt.u_scale)
    assert np.allclose(ens.samples[0], out.data[0] * det_ckpt.v_scale, atol=1e-12)


# --------------------------------------------------------------------------
# energy-distance metric over the test split


def test_energy_distance_metric_reproducible(genuq_ckpt, elu_tiny):
    out = ev.test_energy_distance(genuq_ckpt, elu_tiny, n=32, seed=9)
    assert out == ev.test_energy_distance(genuq_ckpt, elu_tiny, n=32, seed=9)
    assert out["energy_distance"] > 0.0
    assert out["oracle_self_distance"] > 0.0
    assert out["n_ensemble"] == 32
    assert out["n_inputs"] == len(elu_tiny.indices(2))
    # same stream layout as the standalone floor helper, in normalized units
    floor = ev.oracle_self_distance(elu_tiny, n=32, seed=9, scale=genuq_ckpt.v_scale)
    assert out["oracle_self_distance"] == floor


def test_energy_distance_beats_broken_reference(genuq_ckpt, elu_tiny):
    # an ensemble of zero functions must look much worse than the trained one
    out = ev.test_energy_distance(genuq_ckpt, elu_tiny, n=32, seed=9)
    oracle = oracles.EluOracle(elu_tiny.grid)
    u = elu_tiny.u[elu_tiny.indices(2)[0]]
    ref = oracle.ensemble(u, 32, seed=1) / genuq_ckpt.v_scale
    zeros = np.zeros_like(ref)
    assert energy_distance(zeros, ref) > out["energy_distance"]


def test_oracle_self_distance_floor(elu_tiny):
    floor = ev.oracle_self_distance(elu_tiny, n=32, seed=9)
    assert floor > 0.0
    # two oracle draws differ only by sampling noise: distance stays small
    # relative to the scale of a broken prediction
    oracle = oracles.EluOracle(elu_tiny.grid)
    u = elu_tiny.u[elu_tiny.indices(2)[0]]
    a = oracle.ensemble(u, 32, seed=1)
    zeros = np.zeros_like(a)
    assert floor < energy_distance(zeros, a)
    assert floor == ev.oracle_self_distance(elu_tiny, n=32, seed=9)


# --------------------------------------------------------------------------
# predictive means


def test_ensemble_mean_nll_exact(nll_ckpt, elu_tiny):
    mm = ev.ensemble_mean(nll_ckpt, elu_tiny.u[:3], n_mean=16, seed=0)
    mean, _ = nll_ckpt.model.apply_nll(nll_ckpt.theta, elu_tiny.u[:3] / nll_ckpt.u_scale)
    assert np.allclose(mm, mean.data * nll_ckpt.v_scale, atol=1e-12)


def test_ensemble_mean_deterministic_exact(det_ckpt, elu_tiny):
    mm = ev.ensemble_mean(det_ckpt, elu_tiny.u[:3], n_mean=16, seed=0)
    out = det_ckpt.model.apply(det_ckpt.theta, elu_tiny.u[:3] / det_ckpt.u_scale)
    assert np.allclose(mm, out.data * det_ckpt.v_scale, atol=1e-12)


def test_ensemble_mean_genuq_quadrature_agrees_with_mc(genuq_ckpt, elu_tiny):
    mg = ev.ensemble_mean(genuq_ckpt, elu_tiny.u[:2], n_mean=512, seed=0)
    mc = np.stack(
        [
            ev.sample_ensemble(genuq_ckpt, elu_tiny.u[i], 8192, seed=77).samples.mean(axis=0)
            for i in range(2)
        ]
    )
    spread = np.abs(mc).max() + 1.0
    assert np.abs(mg - mc).max() < 0.05 * spread


def test_oracle_mean_analytic_for_elu(elu_tiny):
    om = ev.oracle_mean(elu_tiny, elu_tiny.u[:4], n_mean=8, seed=0)
    ref = oracles.elu_mean_response(elu_tiny.u[:4], elu_tiny.grid)
    assert np.allclose(om, ref, atol=1e-12)


def test_mean_l2_error_keys_and_determinism(genuq_ckpt, elu_tiny):
    ml = ev.mean_l2_error(genuq_ckpt, elu_tiny, n_mean=256, seed=0)
    assert set(ml) >= {"mean_l2", "mean_l2_spread", "n_mean", "seed"}
    assert ml["mean_l2"] > 0.0
    assert ml == ev.mean_l2_error(genuq_ckpt, elu_tiny, n_mean=256, seed=0)


# --------------------------------------------------------------------------
# plotting artifacts


def test_predictive_bands(genuq_ckpt, elu_tiny):
    ens = ev.sample_ensemble(genuq_ckpt, elu_tiny.u[0], 64, seed=3)
    bands = ev.predictive_bands(ens, levels=(0.025, 0.5, 0.975))
    assert bands.quantiles.shape == (3, 16)
    assert np.all(bands.quantiles[0] <= bands.quantiles[1])
    assert np.all(bands.quantiles[1] <= bands.quantiles[2])
    assert np.allclose(bands.mean, ens.samples.mean(axis=0))
    # tail quantiles from a tiny ensemble are unsupported
    with pytest.raises(ValueError):
        ev.predictive_bands(ens.samples[:10], levels=(0.025, 0.975))
    med = ev.predictive_bands(np.array([[0.0], [1.0]]), levels=(0.5,))
    assert med.quantiles[0, 0] == 0.5


def test_point_histograms(genuq_ckpt, elu_tiny, grid16):
    ens = ev.sample_ensemble(genuq_ckpt, elu_tiny.u[0], 64, seed=3)
    oracle_ens = oracles.EluOracle(grid16).ensemble(elu_tiny.u[0], 64, seed=11)
    hists = ev.point_histograms(
        {"model": ens.samples, "reference": oracle_ens}, grid16, [0.6], bins=12
    )
    h = hists[0]
    assert h.counts["model"].sum() == 64
    assert h.counts["reference"].sum() == 64
    assert len(h.edges) == 13
    # pooled range covers both ensembles at the snapped node
    node = np.argmin(np.abs(grid16.points() - 0.6))
    lo = min(ens.samples[:, node].min(), oracle_ens[:, node].min())
    hi = max(ens.samples[:, node].max(), oracle_ens[:, node].max())
    assert h.edges[0] <= lo and h.edges[-1] >= hi


def test_point_histograms_degenerate_values(grid16):
    flat = np.ones((8, 16))
    hists = ev.point_histograms({"flat": flat}, grid16, [0.0], bins=4)
    assert hists[0].counts["flat"].sum() == 8
    assert np.isfinite(hists[0].edges).all()


def test_pairwise_scatter(genuq_ckpt, elu_tiny, grid16):
    ens = ev.sample_ensemble(genuq_ckpt, elu_tiny.u[0], 64, seed=3)
    scats = ev.pairwise_scatter(ens, grid16, 0.6, [0.6, 1.2])
    assert abs(scats[0].correlation - 1.0) < 1e-12  # same node vs itself
    assert -1.0 <= scats[1].correlation <= 1.0
    assert scats[1].points.shape == (64, 2)
    # coordinates snap to grid nodes
    nodes = grid16.points()
    assert scats[1].x0 in nodes and scats[1].x1 in nodes
    const = ev.pairwise_scatter(np.ones((8, 16)), grid16, 0.6, [1.2])
    assert const[0].degenerate
    assert np.isnan(const[0].correlation)


# --------------------------------------------------------------------------
# sweep runner


def test_run_sweep_resume_and_parallel(tmp_path, elu_tiny):
    base = TrainConfig(method="genuq", lr_stages=(1e-3,), epochs_per_stage=4, batch_size=16, n_z=4)
    kw = dict(n_ensemble=16, n_mean=64, seed=3)
    d1 = tmp_path / "seq"
    sweep = ev.run_sweep(elu_tiny, base, [0.01], [0.5, 1.0], out_dir=d1, **kw)
    assert len(sweep.cells) == 2
    assert all(c.converged for c in sweep.cells)
    assert all(np.isfinite(c.energy_distance) for c in sweep.cells)
    # resume: cell JSONs short-circuit retraining and reproduce values
    again = ev.run_sweep(elu_tiny, base, [0.01], [0.5, 1.0], out_dir=d1, **kw)
    for c1, c2 in zip(sweep.cells, again.cells):
        assert c1 == c2
    # a parallel run in a fresh directory reproduces the same numbers
    d2 = tmp_path / "par"
    par = ev.run_sweep(elu_tiny, base, [0.01], [0.5, 1.0], out_dir=d2, jobs=2, **kw)
    for c1, c2 in zip(sweep.cells, par.cells):
        assert c1.energy_distance == c2.energy_distance
        assert c1.mean_l2 == c2.mean_l2
    # cell lookup by coordinates
    cell = sweep.cell(0.01, 0.5)
    assert cell.latent_fraction == 0.5
    assert cell.subset_size == round(0.01 * 16131)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_sweep_divergent_cell_flagged(tmp_path, elu_tiny):
    # an absurd learning rate forces non-finite losses; the runner must
    # record the cell as non-converged instead of raising
    base = TrainConfig(
        method="genuq", lr_stages=(1e6,), epochs_per_stage=4, batch_size=16, n_z=4
    )
    sweep = ev.run_sweep(
        elu_tiny, base, [0.01], [1.0], out_dir=tmp_path / "dnc", n_ensemble=8, n_mean=16, seed=0
    )
    cell = sweep.cells[0]
    assert not cell.converged
    assert np.isnan(cell.energy_distance)
    assert np.isnan(cell.mean_l2)
    assert cell.error


# --------------------------------------------------------------------------
# file writers


def test_write_bands_and_hist_and_scatter(tmp_path, genuq_ckpt, elu_tiny, grid16):
    ens = ev.sample_ensemble(genuq_ckpt, elu_tiny.u[0], 64, seed=3)
    bands = ev.predictive_bands(ens)
    p = tmp_path / "bands.csv"
    ev.write_bands_csv(p, grid16.points(), {"model": bands})
    lines = p.read_text().splitlines()
    assert lines[0] == "x,model_mean,model_lo,model_hi"
    assert len(lines) == 17

    hists = ev.point_histograms({"model": ens.samples}, grid16, [0.6], bins=5)
    hp = tmp_path / "hist.csv"
    ev.write_hist_csv(hp, hists[0])
    hl = hp.read_text().splitlines()
    assert hl[0] == "bin_lo,bin_hi,count_model"
    assert len(hl) == 6

    scats = ev.pairwise_scatter(ens, grid16, 0.6, [1.2])
    sp = tmp_path / "scatter.csv"
    ev.write_scatter_csv(sp, {"model": scats[0]})
    sl = sp.read_text().splitlines()
    assert sl[0] == "model_v_x0,model_v_x1"
    assert len(sl) == 65


def test_write_sweep_csv(tmp_path, elu_tiny):
    base = TrainConfig(method="genuq", lr_stages=(1e-3,), epochs_per_stage=2, batch_size=16, n_z=4)
    sweep = ev.run_sweep(
        elu_tiny, base, [0.01], [1.0], out_dir=tmp_path / "sw", n_ensemble=8, n_mean=16, seed=1
    )
    p = tmp_path / "sweep.csv"
    ev.write_sweep_csv(p, sweep)
    lines = p.read_text().splitlines()
    assert lines[0] == "R,d,energy_distance,mean_l2,converged"
    assert len(lines) == 2
    fields = lines[1].split(",")
    assert float(fields[0]) == 0.01
    assert fields[4] in ("0", "1")


def test_write_metrics_json_sanitizes(tmp_path):
    p = tmp_path / "metrics.json"
    ev.write_metrics_json(
        p, {"a": float("nan"), "b": np.float64(1.5), "c": np.int64(3), "d": {"e": np.nan}}
    )
    loaded = json.loads(p.read_text())
    assert loaded == {"a": None, "b": 1.5, "c": 3, "d": {"e": None}}
    assert p.read_text().endswith("\n")
