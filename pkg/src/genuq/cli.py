"""Command-line entry point.

Subcommands: gen-data, train, eval, sweep, plot. Every command resolves its
configuration the same way (defaults, optional --config JSON, then --set
overrides), writes into a single output root (--out flag, config "out",
GENUQ_OUT env var, then ./genuq-out), and records enough in each output
directory to regenerate it bitwise.

Exit codes: 0 success (and all eval thresholds pass), 1 an eval threshold
failed, 2 configuration or input errors, 3 training aborted on a non-finite
loss.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import evaluation as ev
from .checkpoint import load_checkpoint, save_checkpoint, write_history_csv
from .config import ConfigError
from .data import load_gqds, save_gqds, split_counts
from .oracles import make_elliptic_dataset, make_elu_dataset
from .training import NonFiniteLossError, train

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_CONFIG = 2
EXIT_TRAINING = 3


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file merged over defaults")
    sub.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override one config entry (dotted key, JSON value)",
    )
    sub.add_argument("--seed", type=int, help="override the command's seed")
    sub.add_argument("--out", help="output root directory")
    sub.add_argument(
        "--fast", action="store_true", help="desk-scale schedule: 100 epochs per stage"
    )


def _resolve(args, command):
    cfg = cfgmod.load_config(args.config)
    cfgmod.apply_overrides(cfg, args.set)
    if args.seed is not None:
        if command == "gen-data":
            cfg["data"]["seed"] = args.seed
        elif command == "train":
            for k, key in enumerate(
                ("init_seed", "mask_seed", "shuffle_seed", "latent_seed", "val_seed")
            ):
                cfg["train"][key] = args.seed + k
        elif command == "eval":
            cfg["eval"]["seed"] = args.seed
        elif command == "sweep":
            cfg["sweep"]["seed"] = args.seed
    if args.fast and command in ("train", "sweep"):
        cfg["train"]["epochs_per_stage"] = 100
    cfgmod.validate_config(cfg)
    return cfg


def _make_dataset(cfg):
    grid = cfgmod.grid_from(cfg)
    d = cfg["data"]
    if cfg["experiment"] == "elu":
        return make_elu_dataset(d["n_samples"], grid, d["seed"])
    return make_elliptic_dataset(d["n_samples"], grid, d["seed"])


def _load_dataset(cfg, root):
    path = cfgmod.dataset_path(cfg, root)
    if not path.exists():
        raise ConfigError(f"dataset {path} not found; run `genuq gen-data` first")
    return load_gqds(path), path


def cmd_gen_data(args):
    cfg = _resolve(args, "gen-data")
    root = cfgmod.out_root(cfg, args.out)
    path = cfgmod.dataset_path(cfg, root)
    path.parent.mkdir(parents=True, exist_ok=True)
    ds = _make_dataset(cfg)
    save_gqds(path, ds)
    counts = split_counts(len(ds))
    print(
        f"wrote {path}\n"
        f"  problem={cfg['experiment']} n={len(ds)} grid_n={ds.grid.n} "
        f"seed={cfg['data']['seed']}\n"
        f"  splits train/val/test = {counts[0]}/{counts[1]}/{counts[2]}"
    )
    return EXIT_OK


def _dataset_info(cfg, path):
    return {
        "problem": cfg["experiment"],
        "file": path.name,
        "n_samples": cfg["data"]["n_samples"],
        "grid_n": cfg["data"]["grid_n"],
        "seed": cfg["data"]["seed"],
    }


def cmd_train(args):
    cfg = _resolve(args, "train")
    root = cfgmod.out_root(cfg, args.out)
    ds, ds_path = _load_dataset(cfg, root)
    tc = cfgmod.train_config_from(cfg)
    run_dir = Path(args.run_dir) if args.run_dir else (
        root / "runs" / f"{cfg['experiment']}-{tc.method}"
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = train(ds, tc)
    except NonFiniteLossError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    save_checkpoint(
        run_dir / "checkpoint", result, tc, dataset_info=_dataset_info(cfg, ds_path)
    )
    write_history_csv(run_dir / "history.csv", result.history)
    (run_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    print(
        f"trained {tc.method} on {cfg['experiment']} "
        f"({len(tc.lr_stages)} stages x {tc.epochs_per_stage} epochs)\n"
        f"  best val {result.best_val:.6g} at epoch {result.best_epoch}; "
        f"final val {result.final_val:.6g}; diverged={result.diverged}\n"
        f"  run dir: {run_dir}"
    )
    return EXIT_OK


def _unique_names(ckpts):
    names = []
    for ck in ckpts:
        base = ck.method
        name = base
        k = 2
        while name in names:
            name = f"{base}-{k}"
            k += 1
        names.append(name)
    return names


def _resolve_metric(metrics, dotted):
    node = metrics
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"threshold metric {dotted!r} not in metrics")
        node = node[part]
    if not isinstance(node, (int, float)) or node is None:
        raise ConfigError(f"threshold metric {dotted!r} is not a scalar")
    return float(node)


def _check_thresholds(metrics, thresholds):
    """Threshold spec: {metric, op: le|ge, value} or {metric, op, ref, scale}."""
    report = []
    for spec in thresholds:
        value = _resolve_metric(metrics, spec["metric"])
        if "ref" in spec:
            bound = _resolve_metric(metrics, spec["ref"]) * float(spec.get("scale", 1.0))
        else:
            bound = float(spec["value"])
        op = spec.get("op", "le")
        if op == "le":
            ok = value <= bound
        elif op == "ge":
            ok = value >= bound
        else:
            raise ConfigError(f"threshold op must be le or ge, got {op!r}")
        report.append(
            {"metric": spec["metric"], "op": op, "bound": bound, "value": value,
             "pass": bool(ok)}
        )
    return report


def cmd_eval(args):
    cfg = _resolve(args, "eval")
    root = cfgmod.out_root(cfg, args.out)
    ds, ds_path = _load_dataset(cfg, root)
    ecfg = cfg["eval"]
    ckpts = []
    for run in args.runs:
        ck_dir = Path(run) / "checkpoint"
        if not ck_dir.exists():
            raise ConfigError(f"no checkpoint under {run}")
        ckpts.append(load_checkpoint(ck_dir))
    names = _unique_names(ckpts)
    out_dir = root / "eval" / cfg["experiment"]
    out_dir.mkdir(parents=True, exist_ok=True)

    oracle = ev.oracle_for(ds)
    n = int(ecfg["n_ensemble"])
    seed = int(ecfg["seed"])
    scale = ckpts[0].v_scale
    floor = ev.oracle_self_distance(ds, n=n, seed=seed, scale=scale, oracle=oracle)

    methods = {}
    for name, ck in zip(names, ckpts):
        res = ev.test_energy_distance(
            ck, ds, n=n, seed=seed, self_distance=False, oracle=oracle
        )
        entry = {
            "energy_distance": res["energy_distance"],
            "energy_distance_spread": res["energy_distance_spread"],
            "diverged": bool(ck.manifest["history"]["diverged"]),
            "best_val": ck.manifest["history"]["best_val"],
        }
        if ecfg["mean_l2"]:
            entry["mean_l2"] = ev.mean_l2_error(
                ck, ds, n_mean=int(ecfg["n_mean"]), seed=seed
            )["mean_l2"]
        methods[name] = entry
        print(f"{name}: energy distance {res['energy_distance']:.6g} "
              f"(oracle floor {floor:.6g})")

    # band / histogram / scatter artifacts at one held-out input
    test_idx = ds.indices(2)
    band_input = int(ecfg["band_input"])
    if not 0 <= band_input < len(test_idx):
        raise ConfigError("eval.band_input is outside the test split")
    u_band = ds.u[test_idx[band_input]]
    art_streams = np.random.SeedSequence(seed).spawn(len(names) + 1)
    ensembles = {"oracle": oracle.ensemble(u_band, n, art_streams[0])}
    for k, (name, ck) in enumerate(zip(names, ckpts)):
        ensembles[name] = ev.sample_ensemble(
            ck, u_band, n, int(art_streams[k + 1].generate_state(1)[0])
        ).samples

    levels = tuple(ecfg["band_levels"])
    bands = {nm: ev.predictive_bands(s, levels) for nm, s in ensembles.items()}
    ev.write_bands_csv(out_dir / "bands.csv", ds.grid.points(), bands)

    for hist in ev.point_histograms(
        ensembles, ds.grid, ecfg["hist_points"], bins=int(ecfg["hist_bins"])
    ):
        ev.write_hist_csv(out_dir / f"hist_{hist.requested:g}.csv", hist)

    x0 = float(ecfg["scatter_x0"])
    correlations = {}
    for x1 in ecfg["scatter_x1"]:
        per_source = {
            nm: ev.pairwise_scatter(s, ds.grid, x0, [x1])[0]
            for nm, s in ensembles.items()
        }
        ev.write_scatter_csv(out_dir / f"scatter_{x0:g}_{float(x1):g}.csv", per_source)
        correlations[f"{x0:g}->{float(x1):g}"] = {
            nm: sc.correlation for nm, sc in per_source.items()
        }

    metrics = {
        "experiment": cfg["experiment"],
        "dataset": ds_path.name,
        "n_ensemble": n,
        "seed": seed,
        "band_input": band_input,
        "oracle_self_distance": floor,
        "methods": methods,
        "scatter_correlations": correlations,
    }
    metrics["thresholds"] = _check_thresholds(metrics, ecfg["thresholds"])
    metrics["passed"] = all(t["pass"] for t in metrics["thresholds"])
    ev.write_metrics_json(out_dir / "metrics.json", metrics)
    print(f"artifacts in {out_dir}")
    if not metrics["passed"]:
        for t in metrics["thresholds"]:
            if not t["pass"]:
                print(
                    f"threshold failed: {t['metric']} = {t['value']:.6g} "
                    f"not {t['op']} {t['bound']:.6g}",
                    file=sys.stderr,
                )
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_sweep(args):
    cfg = _resolve(args, "sweep")
    root = cfgmod.out_root(cfg, args.out)
    ds, _ = _load_dataset(cfg, root)
    scfg = cfg["sweep"]
    base = cfgmod.train_config_from(cfg)
    out_dir = root / "sweep" / cfg["experiment"]
    sweep = ev.run_sweep(
        ds,
        base,
        scfg["mask_proportions"],
        scfg["latent_fractions"],
        out_dir=out_dir,
        n_ensemble=int(scfg["n_ensemble"]),
        n_mean=int(scfg["n_mean"]),
        seed=int(scfg["seed"]),
        jobs=args.jobs,
    )
    ev.write_sweep_csv(out_dir / "sweep.csv", sweep)
    print(f"{'R':>8} {'d':>6} {'S':>8} {'dim':>6} {'energy_dist':>12} "
          f"{'mean_l2':>10} conv")
    for c in sweep.cells:
        print(
            f"{c.mask_proportion:>8g} {c.latent_fraction:>6g} {c.subset_size:>8d} "
            f"{c.latent_dim:>6d} {c.energy_distance:>12.4g} {c.mean_l2:>10.3g} "
            f"{'yes' if c.converged else 'DnC'}"
        )
    print(f"sweep table: {out_dir / 'sweep.csv'}")
    return EXIT_OK


def cmd_plot(args):
    from . import plots

    made = plots.render_dir(Path(args.artifacts))
    if not made:
        print(f"no known artifact CSVs under {args.artifacts}", file=sys.stderr)
        return EXIT_CONFIG
    for p in made:
        print(f"wrote {p}")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="genuq",
        description="Generative hyper-network uncertainty quantification "
        "for learned stochastic operators",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="generate a function-pair dataset")
    _add_common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = subs.add_parser("train", help="train one model on the dataset")
    _add_common(p)
    p.add_argument("--run-dir", help="write the run here instead of <out>/runs/...")
    p.set_defaults(fn=cmd_train)

    p = subs.add_parser("eval", help="evaluate trained runs against the oracle")
    _add_common(p)
    p.add_argument("runs", nargs="+", help="run directories from `genuq train`")
    p.set_defaults(fn=cmd_eval)

    p = subs.add_parser("sweep", help="train the (R, d) grid and tabulate it")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    p.set_defaults(fn=cmd_sweep)

    p = subs.add_parser("plot", help="render SVG charts from artifact CSVs")
    p.add_argument("artifacts", help="directory holding eval or sweep CSVs")
    p.set_defaults(fn=cmd_plot)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
