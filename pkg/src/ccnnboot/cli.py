"""Batch command-line frontend.

Each subcommand takes one declarative config document (YAML or JSON) naming
datasets, hyperparameters, seeds, and an output directory; a run is a pure
function of its config.  Exit codes: 0 success, 2 usage/config error,
3 runtime error.  Failures emit a machine-readable JSON object
{stage, kind, message} on stderr (and error.json in the output directory
when it exists).

Timestamps live only in the sidecar run.log so artifacts stay byte-identical
across reruns.
"""

from __future__ import annotations

import datetime
import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import bootstrap as boot
from . import data_io, extractor, kernelizer, metrics, model, plots, trainer
from .errors import CcnnBootError, ConfigError
from .patching import PatchConfig, patchify


def _load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found", kind="missing-input")
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return cfg


def _require(cfg, key, context):
    if key not in cfg:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return cfg[key]


def _existing_path(raw, context):
    path = Path(raw)
    if not path.exists():
        raise ConfigError(f"{context}: file {path} not found", kind="missing-input")
    return path


def _load_dataset(cfg, context):
    kind = _require(cfg, "kind", context)
    if kind == "idx":
        images = _existing_path(_require(cfg, "images", context), context)
        labels = _existing_path(_require(cfg, "labels", context), context)
        data = data_io.load_idx(images, labels, num_classes=cfg.get("num_classes"))
    elif kind == "features":
        data = data_io.load_features(_existing_path(_require(cfg, "path", context), context))
    elif kind == "synthetic":
        spec = data_io.SyntheticSpec(
            input_dim=_require(cfg, "input_dim", context),
            true_coefficients=np.asarray(_require(cfg, "coefficients", context), dtype=np.float64),
            noise_kind=cfg.get("noise", "logistic"),
            margin_width=cfg.get("margin_width", 0.0),
            seed=_require(cfg, "seed", context),
        )
        data = data_io.generate_synthetic(spec, _require(cfg, "n", context))
    else:
        raise ConfigError(f"{context}: unknown dataset kind {kind!r}")
    limit = cfg.get("limit")
    if limit is not None:
        data = data_io.Dataset(
            inputs=data.inputs[:limit],
            labels=data.labels[:limit],
            num_classes=data.num_classes,
            source_kind=data.source_kind,
        )
    return data


def _patch_config(cfg):
    section = cfg.get("patch", {"size": 1, "stride": 1})
    return PatchConfig(patch_size=section["size"], stride=section["stride"])


def _trainer_config(section, context):
    if "seed" not in section:
        raise ConfigError(f"{context}: trainer seed is required")
    return trainer.TrainerConfig(
        mode=_require(section, "mode", context),
        step_size=_require(section, "step_size", context),
        batch_size=_require(section, "batch_size", context),
        epochs=_require(section, "epochs", context),
        seed=section["seed"],
        radius=section.get("radius"),
        penalty=section.get("penalty"),
        smoothing=section.get("smoothing"),
        step_decay=section.get("step_decay", 1.0),
    )


def _maybe_featurize(cfg, train_pset, other_psets, context):
    """Build a kernel feature map from config and apply it everywhere."""
    section = cfg.get("kernel")
    if section is None:
        return train_pset, other_psets, None
    if "seed" not in section:
        raise ConfigError(f"{context}: kernel seed is required")
    secondary = None
    if "secondary" in section:
        sec_data = _load_dataset(section["secondary"], f"{context}.kernel.secondary")
        secondary = kernelizer.patch_pool(patchify(sec_data, _patch_config(cfg)))
    kcfg = kernelizer.KernelConfig(
        gamma=_require(section, "gamma", context),
        anchor_count=_require(section, "anchors", context),
        secondary_pool=secondary,
    )
    fmap = kernelizer.build_feature_map(
        kernelizer.patch_pool(train_pset), kcfg, section["seed"]
    )
    train_out = kernelizer.featurize_set(fmap, train_pset)
    others_out = [kernelizer.featurize_set(fmap, p) for p in other_psets]
    return train_out, others_out, fmap


def _out_dir(cfg):
    out = Path(_require(cfg, "output_dir", "config"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(out_dir, message):
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with open(out_dir / "run.log", "a") as fh:
        fh.write(f"{stamp} {message}\n")


def _fail(stage, exc, out_dir=None):
    code = 2 if isinstance(exc, ConfigError) else 3
    payload = {"stage": stage, "kind": getattr(exc, "kind", "error"), "message": str(exc)}
    sys.stderr.write(json.dumps(payload) + "\n")
    if out_dir is not None:
        with open(Path(out_dir) / "error.json", "w") as fh:
            json.dump(payload, fh, indent=2)
    sys.exit(code)


def _run(stage, config_path, body):
    out_dir = None
    try:
        cfg = _load_config(config_path)
        out_dir = _out_dir(cfg)
        body(cfg, out_dir)
    except (CcnnBootError, FileNotFoundError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FileNotFoundError):
            exc = ConfigError(str(exc), kind="missing-input")
        _fail(stage, exc, out_dir)


@click.group()
def main():
    """Convex-network bootstrap prediction intervals."""


@main.command()
@click.argument("config_path", type=click.Path())
def train(config_path):
    """Fit one model and write params, trace CSV, and trace figure."""

    def body(cfg, out):
        data = _load_dataset(_require(cfg, "dataset", "train"), "train.dataset")
        pset = patchify(data, _patch_config(cfg))
        pset, _, fmap = _maybe_featurize(cfg, pset, [], "train")
        tcfg = _trainer_config(_require(cfg, "trainer", "train"), "train.trainer")
        result = trainer.fit(pset, tcfg)
        model.save_params(result.params, out / "params.ccna")
        trainer.export_trace_csv(result, out / "trace.csv")
        if result.objective_trace:
            plots.render_trace(
                result.objective_trace, result.nuclear_norm_trace, out / "trace.png"
            )
        if fmap is not None:
            kernelizer.save_feature_map(fmap, out / "feature_map.ccnk")
        _log(out, f"train done: objective {result.final_objective!r}")

    _run("train", config_path, body)


@main.command(name="bootstrap")
@click.argument("config_path", type=click.Path())
def bootstrap_cmd(config_path):
    """Run the bootstrap chain; write cube, intervals, histograms, figures."""

    def body(cfg, out):
        train_data = _load_dataset(_require(cfg, "dataset", "bootstrap"), "bootstrap.dataset")
        test_data = _load_dataset(_require(cfg, "test_dataset", "bootstrap"), "bootstrap.test_dataset")
        pcfg = _patch_config(cfg)
        train_pset = patchify(train_data, pcfg)
        test_pset = patchify(test_data, pcfg)
        train_pset, (test_pset,), _ = _maybe_featurize(
            cfg, train_pset, [test_pset], "bootstrap"
        )
        section = _require(cfg, "bootstrap", "bootstrap")
        if "seed" not in section:
            raise ConfigError("bootstrap: seed is required")
        tcfg = _trainer_config(_require(cfg, "trainer", "bootstrap"), "bootstrap.trainer")
        base_cfg = None
        if "base_trainer" in cfg:
            base_cfg = _trainer_config(cfg["base_trainer"], "bootstrap.base_trainer")
        bcfg = boot.BootstrapConfig(
            num_bootstraps=_require(section, "num_bootstraps", "bootstrap"),
            alpha=_require(section, "alpha", "bootstrap"),
            trainer=tcfg,
            seed=section["seed"],
            chain_mode=section.get("chain_mode", boot.MODE_WARM_CHAIN),
            base_trainer=base_cfg,
        )
        cube, digests = boot.run_bootstrap(train_pset, test_pset, bcfg)
        table = boot.intervals(cube, bcfg.alpha)
        records = boot.interval_report(cube, table, test_pset.labels)
        boot.save_cube(cube, out / "cube.ccnp")
        boot.write_report_csv(records, out / "intervals.csv", bcfg.alpha)
        hist_count = cfg.get("histogram_samples", min(cube.num_samples, 10))
        sample_indices = list(range(min(hist_count, cube.num_samples)))
        boot.export_histograms(cube, out / "histograms", sample_indices)
        summary = metrics.summarize(cube, table, test_pset.labels)
        summary.to_json(out / "summary.json")
        with open(out / "digests.json", "w") as fh:
            json.dump(digests, fh, indent=2)
        plots.render_histograms(
            cube, table, test_pset.labels, out / "figures", sample_indices
        )
        plots.render_interval_widths(table, out / "figures" / "interval_widths.png")
        _log(out, f"bootstrap done: B={cube.num_bootstraps}, n'={cube.num_samples}")

    _run("bootstrap", config_path, body)


@main.command()
@click.argument("config_path", type=click.Path())
def extract(config_path):
    """Run a weight bundle over a dataset and write a feature bundle."""

    def body(cfg, out):
        weights = _existing_path(_require(cfg, "weights", "extract"), "extract.weights")
        if weights.suffix == ".json":
            bundle = extractor.bundle_from_manifest(weights)
        else:
            bundle = extractor.load_bundle(weights)
        data = _load_dataset(_require(cfg, "dataset", "extract"), "extract.dataset")
        features = extractor.extract_features(bundle, data)
        data_io.write_features(features, out / "features.ccnf")
        _log(out, f"extract done: {len(features)} samples")

    _run("extract", config_path, body)


@main.command()
@click.argument("config_path", type=click.Path())
def perturb(config_path):
    """Randomize bundle weights until its accuracy matches random guessing."""

    def body(cfg, out):
        weights = _existing_path(_require(cfg, "weights", "perturb"), "perturb.weights")
        if weights.suffix == ".json":
            bundle = extractor.bundle_from_manifest(weights)
        else:
            bundle = extractor.load_bundle(weights)
        calibration = _load_dataset(
            _require(cfg, "calibration_dataset", "perturb"), "perturb.calibration_dataset"
        )
        if "seed" not in cfg:
            raise ConfigError("perturb: seed is required")
        spec = extractor.PerturbSpec(
            sigma=_require(cfg, "sigma", "perturb"),
            target_accuracy=_require(cfg, "target_accuracy", "perturb"),
            calibration_data=calibration,
            seed=cfg["seed"],
        )
        result = extractor.perturb(bundle, spec)
        extractor.save_bundle(result.bundle, out / "perturbed.ccnw")
        with open(out / "calibration.json", "w") as fh:
            json.dump(
                {
                    "sigma": result.sigma,
                    "accuracy": result.accuracy,
                    "attempts": result.attempts,
                    "targetAccuracy": spec.target_accuracy,
                },
                fh,
                indent=2,
            )
        _log(out, f"perturb done: sigma {result.sigma}, accuracy {result.accuracy}")

    _run("perturb", config_path, body)


@main.command()
@click.argument("config_path", type=click.Path())
def consistency(config_path):
    """Compare sampling vs bootstrap deviation CDFs over a sample-size grid."""

    def body(cfg, out):
        section = _require(cfg, "synthetic", "consistency")
        spec = data_io.SyntheticSpec(
            input_dim=_require(section, "input_dim", "consistency.synthetic"),
            true_coefficients=np.asarray(
                _require(section, "coefficients", "consistency.synthetic"), dtype=np.float64
            ),
            noise_kind=section.get("noise", "logistic"),
            margin_width=section.get("margin_width", 0.0),
            seed=_require(section, "seed", "consistency.synthetic"),
        )
        tcfg = _trainer_config(_require(cfg, "trainer", "consistency"), "consistency.trainer")
        seeds = cfg.get("seeds")
        if not seeds:
            raise ConfigError("consistency: seeds list is required")
        rows = []
        for seed in seeds:
            rows.extend(
                metrics.consistency_check(
                    spec,
                    n_grid=_require(cfg, "n_grid", "consistency"),
                    mc_reps=_require(cfg, "mc_reps", "consistency"),
                    num_bootstraps=_require(cfg, "num_bootstraps", "consistency"),
                    cfg=tcfg,
                    probe=np.asarray(_require(cfg, "probe", "consistency"), dtype=np.float64),
                    seed=seed,
                )
            )
        metrics.write_consistency_csv(rows, out / "consistency.csv")
        _log(out, f"consistency done: {len(rows)} rows")

    _run("consistency", config_path, body)


if __name__ == "__main__":
    main()
