"""Batch command-line front end.

Subcommands: synth, detect, encode, train, eval, pipeline.  A single
TOML or JSON config file drives every stage; command-line flags win over
config values.  Progress goes to standard error, results to files (and
standard output where noted).  Exit codes: 0 success, 1 usage or
validation failure, 2 numerical failure.

Every run writes a manifest embedding the seed and a hash of the
effective config; JSON outputs embed both inline as well.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bccpm, evalharness, lbem, plots, timeseries
from .elmkit import (
    FistaConfig,
    KernelSpec,
    LabeledDataset,
    load_model,
    predict_khelm,
    save_model,
    train_kelm,
    train_khelm,
)
from .errors import ConfigError, NumericalError, PipelineError
from .seeding import derive_seed

log = logging.getLogger("segelm")

DEFAULT_CONFIG = {
    "seed": 0,
    "jobs": 1,
    "orientation": "rows",
    "input_dir": None,
    "synth": None,
    "prior": {"kappa0": 1.0, "nu0": None, "lambda0_scale": None},
    "mcmc": {"burn_in": 500, "samples": 1500, "min_block_length": None},
    "lbem": {"normalized": True},
    "classifier": {
        "model": "kelm",
        "layer_sizes": [64],
        "kernel": "rbf",
        "sigma": None,
        "rho": 1.0,
        "l1_weight": 1e-3,
        "fista_iterations": 200,
        "lipschitz_boost": 1.01,
        "activation": "sigmoid",
    },
    "eval": {"k": 5, "repeats": 30, "experiment": None},
}

_SYNTH_KEYS = {
    "subjects_per_class",
    "roi_count",
    "length",
    "change_points_class_a",
    "change_points_class_b",
    "mean_shift",
    "covariance_perturbation",
    "noise_scale",
}


def _check_keys(section: str, value: dict, allowed: set[str]) -> None:
    for key in value:
        if key not in allowed:
            where = f"{section}.{key}" if section else key
            raise ConfigError(f"unknown config key {where!r}")


def _merge_section(name: str, base: dict, override: dict) -> dict:
    _check_keys(name, override, set(base))
    merged = dict(base)
    merged.update(override)
    return merged


def load_config(path: str | Path | None, overrides: dict | None = None) -> dict:
    """Read a TOML/JSON config, validate keys, and apply flag overrides."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib  # type: ignore[import-not-found]
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        else:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a table/object")
    _check_keys("", raw, set(DEFAULT_CONFIG))
    config = {}
    for key, default in DEFAULT_CONFIG.items():
        value = raw.get(key, default)
        if isinstance(default, dict) and value is not default:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be a table/object")
            value = _merge_section(key, default, value)
        config[key] = value
    if config["synth"] is not None:
        _check_keys("synth", config["synth"], _SYNTH_KEYS)
    for key, value in (overrides or {}).items():
        if value is not None:
            config[key] = value
    if config["classifier"]["model"] not in ("kelm", "khelm"):
        raise ConfigError("classifier.model must be 'kelm' or 'khelm'")
    return config


def config_hash(config: dict) -> str:
    """Hash of the experiment-relevant config (worker count excluded, so
    parallel and serial runs of the same experiment hash identically)."""
    trimmed = {k: v for k, v in config.items() if k != "jobs"}
    canonical = json.dumps(trimmed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _synth_spec(config: dict) -> timeseries.SyntheticCohortSpec:
    section = config.get("synth")
    if not section:
        raise ConfigError("config has no 'synth' section")
    kwargs = dict(section)
    for key in ("change_points_class_a", "change_points_class_b"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return timeseries.SyntheticCohortSpec(**kwargs)


def _prior_for(series: timeseries.RoiTimeSeries, config: dict) -> bccpm.NiwPrior:
    section = config["prior"]
    m = series.roi_count
    nu0 = section["nu0"] if section["nu0"] is not None else float(m + 2)
    scale = section["lambda0_scale"]
    if scale is None:
        scale = float(series.values.var(axis=1).mean()) or 1.0
    return bccpm.NiwPrior(
        kappa0=float(section["kappa0"]),
        nu0=float(nu0),
        lambda0=scale * np.eye(m),
        mu0=series.values.mean(axis=1),
    )


def _mcmc_for(config: dict, roi_count: int, length: int, seed: int) -> bccpm.McmcConfig:
    section = config["mcmc"]
    base = bccpm.default_mcmc_config(roi_count, seed, length)
    minlen = section["min_block_length"]
    return bccpm.McmcConfig(
        burn_in=int(section["burn_in"]),
        samples=int(section["samples"]),
        seed=seed,
        min_block_length=int(minlen) if minlen is not None else base.min_block_length,
    )


def _kernel_for(config: dict) -> KernelSpec:
    section = config["classifier"]
    sigma = section["sigma"]
    return KernelSpec(section["kernel"], float(sigma) if sigma is not None else None)


def _fista_for(config: dict) -> FistaConfig:
    section = config["classifier"]
    return FistaConfig(
        iterations=int(section["fista_iterations"]),
        l1_weight=float(section["l1_weight"]),
        lipschitz_boost=float(section["lipschitz_boost"]),
    )


def _trainer_for(config: dict) -> evalharness.Trainer:
    section = config["classifier"]
    kernel = _kernel_for(config)
    if section["model"] == "kelm":
        return evalharness.kelm_trainer(kernel, float(section["rho"]))
    return evalharness.khelm_trainer(
        [int(n) for n in section["layer_sizes"]],
        kernel,
        float(section["rho"]),
        _fista_for(config),
        section["activation"],
    )


def _write_manifest(out_dir: Path, command: str, config: dict, outputs: list[str]) -> None:
    payload = {
        "command": command,
        "seed": config["seed"],
        "config_hash": config_hash(config),
        "config": {k: v for k, v in config.items() if k != "jobs"},
        "outputs": sorted(outputs),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _labels_to_classes(labels: np.ndarray) -> np.ndarray:
    return (np.asarray(labels) < 0).astype(int)


def cmd_synth(args: argparse.Namespace) -> int:
    config = load_config(args.config, {"seed": args.seed})
    if args.spec_file is not None:
        spec_config = load_config(args.spec_file)
        config["synth"] = spec_config["synth"]
    spec = _synth_spec(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series, truth = timeseries.generate_synthetic(spec, config["seed"])
    outputs = []
    for i, subject in enumerate(series):
        name = f"subject_{i:03d}.csv"
        timeseries.save_series(subject, out_dir / name)
        outputs.append(name)
    timeseries.write_ground_truth(truth, out_dir / "ground_truth.json")
    outputs.append("ground_truth.json")
    _write_manifest(out_dir, "synth", config, outputs)
    log.info("synth: wrote %d subjects to %s", len(series), out_dir)
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    config = load_config(args.config, {"seed": args.seed, "orientation": args.orientation})
    series = timeseries.load_series(args.input, config["orientation"])
    prior = _prior_for(series, config)
    mcmc = _mcmc_for(config, series.roi_count, series.length, config["seed"])
    summary = bccpm.sample_posterior(series, prior, mcmc)
    out = Path(args.output)
    bccpm.write_posterior_report(
        summary, out, mcmc,
        extra={"seed": config["seed"], "config_hash": config_hash(config)},
    )
    figure = Path(args.figure) if args.figure else out.with_suffix(".png")
    plots.plot_posterior(summary, figure)
    log.info("detect: change points %s -> %s", summary.map_mask.change_points, out)
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    config = load_config(args.config, {"orientation": args.orientation})
    series = timeseries.load_series(args.series, config["orientation"])
    mask = bccpm.read_mask(args.mask)
    vector = lbem.features_for_sample(
        series, mask, normalized=config["lbem"]["normalized"]
    )
    lbem.write_features_csv(vector[None, :], np.array([args.label]), args.output)
    log.info("encode: %d features -> %s", vector.size, args.output)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config, {"seed": args.seed})
    features, labels = lbem.read_features_csv(args.features)
    data = LabeledDataset.from_class_indices(
        features, _labels_to_classes(labels), class_count=2
    )
    section = config["classifier"]
    if section["model"] == "kelm":
        model = _train_scaled_kelm(data, _kernel_for(config), float(section["rho"]))
    else:
        model = train_khelm(
            data,
            [int(n) for n in section["layer_sizes"]],
            _kernel_for(config),
            float(section["rho"]),
            _fista_for(config),
            config["seed"],
            section["activation"],
        )
    out = Path(args.output)
    save_model(model, out)
    sidecar = out.with_suffix(out.suffix + ".manifest.json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(
            {"seed": config["seed"], "config_hash": config_hash(config)},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    log.info("train: %s model on %d samples -> %s", section["model"], features.shape[0], out)
    return 0


def _train_scaled_kelm(data: LabeledDataset, kernel: KernelSpec, rho: float):
    """Plain kernel head saved in the layered-model format: zero layers,
    real min/max scaling, head trained on the scaled features."""
    from .elmkit import KhElmModel, _scale_unit

    lo = data.features.min(axis=0)
    hi = data.features.max(axis=0)
    scaled = _scale_unit(data.features, lo, hi, clip=False)
    head = train_kelm(LabeledDataset(scaled, data.targets), kernel, rho)
    return KhElmModel(layers=(), head=head, feature_min=lo, feature_max=hi)


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    features, _ = lbem.read_features_csv(args.features)
    _, classes = predict_khelm(model, features)
    labels = np.where(classes == 0, 1, -1)
    for value in labels:
        print(int(value))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config, {"seed": args.seed, "jobs": args.jobs})
    features, labels = lbem.read_features_csv(args.features)
    classes = _labels_to_classes(labels)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evalharness.cross_validate(
        features,
        classes,
        _trainer_for(config),
        k=int(config["eval"]["k"]),
        repeats=int(config["eval"]["repeats"]),
        seed=config["seed"],
        config={"classifier": config["classifier"]["model"]},
    )
    outputs = _emit_report(report, out_dir, "report", config)
    _write_manifest(out_dir, "eval", config, outputs)
    print(evalharness.render_report_text(report), end="")
    return 0


def _emit_report(report, out_dir: Path, stem: str, config: dict) -> list[str]:
    extra = {"config_hash": config_hash(config)}
    evalharness.write_report(report, out_dir / f"{stem}.json", extra=extra)
    with open(out_dir / f"{stem}.txt", "w", encoding="utf-8") as fh:
        fh.write(evalharness.render_report_text(report))
    plots.plot_report(report, out_dir / f"{stem}.png")
    return [f"{stem}.json", f"{stem}.txt", f"{stem}.png"]


def _load_cohort(
    config: dict,
) -> tuple[list[timeseries.RoiTimeSeries], timeseries.GroundTruth, bool]:
    """Cohort from input_dir, or synthesized from the config's synth section.

    The flag in the result marks a synthesized cohort (whose ground truth
    is then worth persisting alongside the other outputs).
    """
    if config["input_dir"]:
        in_dir = Path(config["input_dir"])
        truth = timeseries.read_ground_truth(in_dir / "ground_truth.json")
        paths = sorted(in_dir.glob("subject_*.csv"))
        if len(paths) != truth.labels.size:
            raise ConfigError(
                f"{in_dir}: {len(paths)} subject files but "
                f"{truth.labels.size} ground-truth entries"
            )
        series = [timeseries.load_series(p, config["orientation"]) for p in paths]
        return series, truth, False
    spec = _synth_spec(config)
    series, truth = timeseries.generate_synthetic(spec, config["seed"])
    return series, truth, True


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = load_config(args.config, {"seed": args.seed, "jobs": args.jobs})
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    seed = config["seed"]
    jobs = int(config["jobs"])

    log.info("pipeline: preparing cohort")
    series, truth, synthesized = _load_cohort(config)
    classes = truth.class_indices
    if synthesized:
        timeseries.write_ground_truth(truth, out_dir / "ground_truth.json")
        outputs.append("ground_truth.json")

    log.info("pipeline: detecting change points (%d subjects, jobs=%d)", len(series), jobs)
    mcmc = _mcmc_for(config, series[0].roi_count, series[0].length, derive_seed(seed, 0))
    masks = evalharness.subject_masks(series, mcmc, jobs=jobs)
    masks_dir = out_dir / "masks"
    masks_dir.mkdir(exist_ok=True)
    for i, mask in enumerate(masks):
        name = f"masks/mask_{i:03d}.json"
        bccpm.write_mask(mask, out_dir / name)
        outputs.append(name)

    log.info("pipeline: encoding features")
    features = np.vstack(
        [
            lbem.features_for_sample(s, m, normalized=config["lbem"]["normalized"])
            for s, m in zip(series, masks)
        ]
    )
    lbem.write_features_csv(features, truth.labels, out_dir / "features.csv")
    outputs.append("features.csv")

    experiment = config["eval"]["experiment"]
    k = int(config["eval"]["k"])
    repeats = int(config["eval"]["repeats"])
    section = config["classifier"]
    if experiment is None:
        log.info("pipeline: cross-validating (%d-fold x %d repeats)", k, repeats)
        report = evalharness.cross_validate(
            features, classes, _trainer_for(config),
            k=k, repeats=repeats, seed=seed,
            config={"classifier": section["model"]},
        )
        outputs += _emit_report(report, out_dir, "report", config)
        print(evalharness.render_report_text(report), end="")
    else:
        log.info("pipeline: running %s (%d-fold x %d repeats)", experiment, k, repeats)
        reports = evalharness.run_comparison(
            series, classes, experiment,
            mcmc=mcmc, k=k, repeats=repeats, seed=seed,
            layer_sizes=[int(n) for n in section["layer_sizes"]],
            kernel=_kernel_for(config), rho=float(section["rho"]),
            fista=_fista_for(config), activation=section["activation"],
            jobs=jobs, masks=masks,
        )
        for report in reports:
            stem = "report_" + _variant_name(report.config)
            outputs += _emit_report(report, out_dir, stem, config)
            print(evalharness.render_report_text(report), end="")
            print()
        if experiment == "depth-sweep":
            plots.plot_depth_sweep(reports, out_dir / "depth_sweep.png")
            outputs.append("depth_sweep.png")
    _write_manifest(out_dir, "pipeline", config, outputs)
    return 0


def _variant_name(report_config: dict) -> str:
    if "bccpm" in report_config:
        return "bccpm" if report_config["bccpm"] else "ablation"
    if "kernel" in report_config:
        return str(report_config["kernel"])
    if "layers" in report_config:
        return f"depth_{report_config['layers']}"
    return "variant"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segelm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, orientation=False):
        p.add_argument("--config", default=None, help="TOML or JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--jobs", type=int, default=None, help="worker count")
        if orientation:
            p.add_argument(
                "--orientation", choices=("rows", "cols"), default=None,
                help="CSV layout: ROIs as rows (default) or columns",
            )

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    common(p)
    p.add_argument("--spec-file", default=None, help="cohort spec file (synth section)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="sample change-point masks for one series")
    common(p, orientation=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--figure", default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("encode", help="encode one series into a feature row")
    common(p, orientation=True)
    p.add_argument("--series", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--label", type=int, default=0, help="label placeholder")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train a classifier on a feature CSV")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict labels with a saved model")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="cross-validate a feature CSV")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run synth-or-load, detect, encode, eval")
    common(p, orientation=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "orientation"):
            args.orientation = None
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
