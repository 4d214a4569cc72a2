"""Generator sizing rules and near-deterministic initialization."""

import numpy as np
import pytest

from genuq import autograd as ag
from genuq import hypernet as hn


def test_subset_size_rounding():
    assert hn.stochastic_subset_size(16131, 0.001) == 16
    assert hn.stochastic_subset_size(16131, 0.004) == 65
    assert hn.stochastic_subset_size(16131, 0.016) == 258
    assert hn.stochastic_subset_size(16131, 0.064) == 1032
    assert hn.stochastic_subset_size(16131, 0.256) == 4130
    assert hn.stochastic_subset_size(100, 1.0) == 100
    with pytest.raises(ValueError):
        hn.stochastic_subset_size(100, 0.0)
    with pytest.raises(ValueError):
        hn.stochastic_subset_size(100, 1.5)
    with pytest.raises(ValueError):
        hn.stochastic_subset_size(100, 1e-5)  # rounds to zero coordinates


def test_latent_dim_ceiling():
    assert hn.latent_dim(16, 0.25) == 4
    assert hn.latent_dim(16, 0.75) == 12
    assert hn.latent_dim(17, 0.25) == 5  # ceil(4.25)
    assert hn.latent_dim(1, 0.25) == 1  # floor of one dimension
    assert hn.latent_dim(10, 1.0) == 10
    with pytest.raises(ValueError):
        hn.latent_dim(10, 0.0)


def test_mask_is_sorted_unique_and_seeded():
    mask = hn.select_stochastic_mask(1000, 0.05, seed=3)
    assert mask.shape == (50,)
    assert np.all(np.diff(mask) > 0)
    assert np.array_equal(mask, hn.select_stochastic_mask(1000, 0.05, seed=3))
    assert not np.array_equal(mask, hn.select_stochastic_mask(1000, 0.05, seed=4))
    assert mask.min() >= 0 and mask.max() < 1000


def test_sample_latent_shapes():
    z = hn.sample_latent(5, 12, seed=0)
    assert z.shape == (12, 5)
    assert np.array_equal(z, hn.sample_latent(5, 12, seed=0))


def test_zero_latent_recovers_output_bias():
    net = hn.HyperNetwork(d_latent=3, out_dim=7)
    bias = np.linspace(-1.0, 1.0, 7)
    phi = net.init_params(seed=0, out_bias=bias)
    out = net.apply(ag.Tensor(phi), np.zeros((1, 3)))
    # gelu(0) = 0 exactly, so z = 0 propagates zeros to the last layer and the
    # output is the bias regardless of the shrunken final weights
    assert np.array_equal(out.data[0], bias)


def test_final_layer_scaling_bounds_perturbation():
    net = hn.HyperNetwork(d_latent=4, out_dim=5)
    bias = np.zeros(5)
    phi = net.init_params(seed=1, out_bias=bias)
    last = len(net.sizes) - 2
    _, _, w_off, w_size = net.layout.find(f"gen.w{last}")
    w_last = phi[w_off : w_off + w_size]
    glorot_bound = np.sqrt(6.0 / (net.sizes[-2] + net.sizes[-1]))
    assert np.all(np.abs(w_last) <= hn.FINAL_WEIGHT_SCALE * glorot_bound)
    assert np.abs(w_last).max() > 0.0
    # typical latent draws then stay within a small neighborhood of the bias
    z = hn.sample_latent(4, 64, seed=2)
    out = net.apply(ag.Tensor(phi), z)
    assert np.abs(out.data).max() < 1.0


def test_hidden_widths_architecture():
    net = hn.HyperNetwork(d_latent=2, out_dim=3)
    assert net.sizes == [2, 10, 20, 30, 40, 3]
    expected = sum((fi + 1) * fo for fi, fo in zip(net.sizes[:-1], net.sizes[1:]))
    assert net.param_count() == expected


def test_apply_guards():
    net = hn.HyperNetwork(d_latent=2, out_dim=3)
    phi = ag.Tensor(net.init_params(0, np.zeros(3)))
    with pytest.raises(ValueError):
        net.apply(phi, np.zeros(2))
    with pytest.raises(ValueError):
        net.apply(phi, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        net.init_params(0, np.zeros(4))
    with pytest.raises(ValueError):
        hn.HyperNetwork(0, 3)


def test_generator_gradient_through_assembly():
    # full path the trainer differentiates: phi -> generated values -> overlay
    net = hn.HyperNetwork(d_latent=2, out_dim=4)
    phi = ag.Tensor(net.init_params(0, np.arange(4.0)), requires_grad=True)
    theta = ag.Tensor(np.zeros(10), requires_grad=True)
    mask = np.array([1, 3, 5, 7])
    z = hn.sample_latent(2, 3, seed=5)
    w = np.random.default_rng(6).standard_normal((3, 10))

    def fn():
        gen = net.apply(phi, z)
        full = ag.assemble_params(gen, theta, mask)
        return ag.sum_(ag.mul(full, w))

    res = ag.check_gradient_directional(fn, [phi, theta], n_dirs=5, seed=0)
    assert res.n_checked == 5
    assert res.max_rel_err < 1e-6, repr(res)
