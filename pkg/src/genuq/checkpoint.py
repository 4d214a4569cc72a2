"""Checkpoint format: a JSON manifest plus one packed binary blob.

manifest.json carries the architecture description (id, variant, grid, layer
layout, parameter count), the training config and seeds, the normalization
scales, the stochastic mask and generator description when present, and a
training-history summary. params.bin is the concatenation of the manifest's
`segments` in order, each little-endian f64, so the file is bit-exact across
platforms and runs. No timestamps or absolute paths enter the manifest; two
identical training runs must produce byte-identical files.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import Grid1D
from .hypernet import HyperNetwork
from .operators import PodDeepOnet, SpectralOperator
from .training import TrainConfig

FORMAT_NAME = "genuq-checkpoint"
FORMAT_VERSION = 1

MANIFEST_FILE = "manifest.json"
PARAMS_FILE = "params.bin"


def _grid_dict(grid):
    return {
        "n": grid.n,
        "start": grid.start,
        "end": grid.end,
        "periodic": grid.periodic,
    }


def write_history_csv(path, history):
    """Per-epoch training curve: epoch, stage_lr, train_loss, val_loss."""
    lines = ["epoch,stage_lr,train_loss,val_loss"]
    for epoch, lr, train_loss, val_loss in history:
        lines.append(f"{epoch},{lr:.17g},{train_loss:.17g},{val_loss:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_checkpoint(path, result, config, dataset_info=None):
    """Write manifest.json and params.bin for a TrainResult into `path`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    model = result.model

    arch = {
        "grid": _grid_dict(model.grid),
        "variant": model.variant,
        "width": model.width,
        "n_hidden": model.n_hidden,
        "param_count": model.param_count(),
        "layout": model.layout.manifest(),
    }
    if isinstance(model, SpectralOperator):
        arch["id"] = "spectral"
    elif isinstance(model, PodDeepOnet):
        arch["id"] = "pod-deeponet"
        arch["p_latent"] = model.p_latent
        arch["d_pod"] = model.basis.shape[1]
    else:
        raise TypeError(f"unknown architecture {type(model).__name__}")

    segments = [("theta", result.params["theta"])]
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "architecture": arch,
        "method": config.method,
        "config": config.to_dict(),
        "normalization": {"u_scale": result.u_scale, "v_scale": result.v_scale},
        "history": {
            "best_epoch": result.best_epoch,
            "best_val": result.best_val,
            "final_val": result.final_val,
            "epochs": len(result.history),
            "diverged": result.diverged,
        },
        "mask_indices": None,
        "hypernet": None,
        "dataset": dataset_info,
    }
    if config.method == "genuq":
        net = result.aux["hypernet"]
        manifest["mask_indices"] = [int(i) for i in result.aux["mask"]]
        manifest["hypernet"] = {
            "d_latent": net.d_latent,
            "out_dim": net.out_dim,
            "param_count": net.param_count(),
        }
        segments.append(("phi", result.params["phi"]))
    if isinstance(model, PodDeepOnet):
        segments.append(("pod_basis", model.basis.reshape(-1)))
    manifest["segments"] = [
        {"name": name, "count": int(arr.size)} for name, arr in segments
    ]

    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in segments
    )
    (path / PARAMS_FILE).write_bytes(blob)
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (path / MANIFEST_FILE).write_text(text)
    return manifest


@dataclass
class LoadedCheckpoint:
    manifest: dict
    model: object
    theta: np.ndarray
    phi: np.ndarray          # None unless the genuq method
    mask: np.ndarray         # None unless the genuq method
    hypernet: HyperNetwork   # None unless the genuq method
    config: TrainConfig
    u_scale: float
    v_scale: float

    @property
    def method(self):
        return self.config.method


def load_checkpoint(path):
    path = Path(path)
    manifest = json.loads((path / MANIFEST_FILE).read_text())
    if manifest.get("format") != FORMAT_NAME:
        raise ValueError(f"{path} is not a {FORMAT_NAME} directory")
    raw = np.frombuffer((path / PARAMS_FILE).read_bytes(), dtype="<f8")
    segments = {}
    offset = 0
    for seg in manifest["segments"]:
        segments[seg["name"]] = np.array(raw[offset : offset + seg["count"]])
        offset += seg["count"]
    if offset != raw.size:
        raise ValueError("params.bin length does not match the manifest")

    arch = manifest["architecture"]
    grid = Grid1D(**arch["grid"])
    if arch["id"] == "spectral":
        model = SpectralOperator(
            grid, variant=arch["variant"], width=arch["width"], n_hidden=arch["n_hidden"]
        )
    else:
        basis = segments["pod_basis"].reshape(grid.n, arch["d_pod"])
        model = PodDeepOnet(
            grid,
            basis,
            variant=arch["variant"],
            width=arch["width"],
            n_hidden=arch["n_hidden"],
            p_latent=arch["p_latent"],
        )
    if model.param_count() != arch["param_count"]:
        raise ValueError("rebuilt architecture disagrees with the manifest")

    config = TrainConfig(**manifest["config"])
    phi = mask = net = None
    if manifest["hypernet"] is not None:
        hs = manifest["hypernet"]
        net = HyperNetwork(hs["d_latent"], hs["out_dim"])
        if net.param_count() != hs["param_count"]:
            raise ValueError("hyper-network size disagrees with the manifest")
        phi = segments["phi"]
        mask = np.asarray(manifest["mask_indices"], dtype=np.int64)
    norm = manifest["normalization"]
    return LoadedCheckpoint(
        manifest=manifest,
        model=model,
        theta=segments["theta"],
        phi=phi,
        mask=mask,
        hypernet=net,
        config=config,
        u_scale=norm["u_scale"],
        v_scale=norm["v_scale"],
    )
