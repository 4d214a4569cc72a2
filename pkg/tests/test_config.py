"""Config layering, validation, and path resolution."""

import json
import math
from pathlib import Path

import pytest

from genuq import config as cfgmod
from genuq.config import ConfigError


def test_defaults_deep_copied():
    a = cfgmod.default_config()
    b = cfgmod.default_config()
    a["train"]["n_z"] = 99
    assert b["train"]["n_z"] == 8


def test_load_config_merges_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"experiment": "elliptic", "train": {"n_z": 2}}))
    cfg = cfgmod.load_config(p)
    assert cfg["experiment"] == "elliptic"
    assert cfg["train"]["n_z"] == 2
    assert cfg["train"]["batch_size"] == 64  # untouched default


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        cfgmod.load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        cfgmod.load_config(arr)
    unknown = tmp_path / "unk.json"
    unknown.write_text(json.dumps({"color": "blue"}))
    with pytest.raises(ConfigError):
        cfgmod.load_config(unknown)


def test_apply_overrides_json_and_string():
    cfg = cfgmod.default_config()
    cfgmod.apply_overrides(
        cfg,
        [
            "train.n_z=4",
            "train.lr_stages=[0.001,0.0001]",
            'train.method="gen"',
            "eval.mean_l2=true",
            "experiment=elliptic",  # bare string fallback
        ],
    )
    assert cfg["train"]["n_z"] == 4
    assert cfg["train"]["lr_stages"] == [0.001, 0.0001]
    assert cfg["train"]["method"] == "gen"
    assert cfg["eval"]["mean_l2"] is True
    assert cfg["experiment"] == "elliptic"


def test_apply_overrides_rejects_unknown_or_malformed():
    cfg = cfgmod.default_config()
    with pytest.raises(ConfigError):
        cfgmod.apply_overrides(cfg, ["train.gamma=1"])
    with pytest.raises(ConfigError):
        cfgmod.apply_overrides(cfg, ["nosuch.n_z=1"])
    with pytest.raises(ConfigError):
        cfgmod.apply_overrides(cfg, ["train.n_z"])


@pytest.mark.parametrize(
    "key,value",
    [
        ("experiment", '"heat"'),
        ("data.n_samples", "4"),
        ("data.n_samples", "2048.0"),
        ("data.grid_n", "8"),
        ("train.method", '"vae"'),
        ("train.mask_proportion", "0"),
        ("train.mask_proportion", "1.5"),
        ("train.latent_fraction", "0"),
        ("train.beta", "2.0"),
        ("train.beta", "0"),
        ("train.epochs_per_stage", "0"),
        ("train.lr_stages", "[]"),
        ("train.lr_stages", "[-0.001]"),
        ("sweep.mask_proportions", "[0.5, 2.0]"),
        ("sweep.latent_fractions", "[0.0]"),
    ],
)
def test_validate_config_rejections(key, value):
    cfg = cfgmod.default_config()
    cfgmod.apply_overrides(cfg, [f"{key}={value}"])
    with pytest.raises(ConfigError):
        cfgmod.validate_config(cfg)


def test_validate_config_accepts_defaults():
    cfgmod.validate_config(cfgmod.default_config())


def test_grid_from_experiments():
    cfg = cfgmod.default_config()
    g = cfgmod.grid_from(cfg)
    assert g.periodic and g.n == 64
    assert g.start == 0.0 and g.end == pytest.approx(2 * math.pi)
    cfg["experiment"] = "elliptic"
    cfg["data"]["grid_n"] = 32
    g2 = cfgmod.grid_from(cfg)
    assert not g2.periodic
    assert (g2.start, g2.end) == (-1.0, 1.0)


def test_train_config_from_coerces_types():
    cfg = cfgmod.default_config()
    cfg["train"]["lr_stages"] = [1e-3]
    cfg["train"]["epochs_per_stage"] = 7
    tc = cfgmod.train_config_from(cfg)
    assert tc.lr_stages == (1e-3,)
    assert tc.epochs_per_stage == 7
    assert tc.method == "genuq"


def test_out_root_precedence(monkeypatch, tmp_path):
    cfg = cfgmod.default_config()
    monkeypatch.delenv("GENUQ_OUT", raising=False)
    assert cfgmod.out_root(cfg) == Path("genuq-out")
    monkeypatch.setenv("GENUQ_OUT", str(tmp_path / "env"))
    assert cfgmod.out_root(cfg) == tmp_path / "env"
    cfg["out"] = str(tmp_path / "cfg")
    assert cfgmod.out_root(cfg) == tmp_path / "cfg"
    assert cfgmod.out_root(cfg, flag_out=str(tmp_path / "flag")) == tmp_path / "flag"


def test_dataset_path_naming(tmp_path):
    cfg = cfgmod.default_config()
    p = cfgmod.dataset_path(cfg, tmp_path)
    assert p == tmp_path / "data" / "elu_n2048_g64_s2024.gqds"
    cfg["data"]["path"] = str(tmp_path / "fixed.gqds")
    assert cfgmod.dataset_path(cfg, tmp_path) == tmp_path / "fixed.gqds"
