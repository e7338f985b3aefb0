"""Stratified repeated cross-validation and the scripted comparisons.

Per-class accuracy is the primary metric: each report row is one fold,
each column one class, and every cell is the fraction of that class's
held-out samples labeled correctly, averaged over repeats.  Fold plans
are re-randomized per repeat from (seed, repeat); model training inside a
repeat draws from (seed, repeat, fold), so two experiment arms given the
same seed share fold plans exactly.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import bccpm, lbem
from .elmkit import (
    FistaConfig,
    KernelSpec,
    LabeledDataset,
    predict_kelm,
    predict_khelm,
    train_kelm,
    train_khelm,
)
from .errors import ConfigError, PlanError
from .seeding import derive_seed
from .timeseries import ChangePointMask, RoiTimeSeries

__all__ = [
    "FoldPlan",
    "EvalReport",
    "stratified_folds",
    "cross_validate",
    "run_comparison",
    "kelm_trainer",
    "khelm_trainer",
    "subject_masks",
    "cohort_features",
    "render_report_text",
    "write_report",
    "read_report",
]

# Stage tags keep derived random streams from colliding across pipeline steps.
_STAGE_DETECT = 0
_STAGE_FOLD = 1
_STAGE_TRAIN = 2

Trainer = Callable[[np.ndarray, np.ndarray, int], Callable[[np.ndarray], np.ndarray]]

EXPERIMENTS = ("bccpm-ablation", "kernel-compare", "depth-sweep")


@dataclass(frozen=True)
class FoldPlan:
    """Per-sample fold assignment for one repeat."""

    k: int
    assignments: np.ndarray
    repeat_index: int
    seed: int

    def __post_init__(self):
        assignments = np.asarray(self.assignments, dtype=int)
        assignments.setflags(write=False)
        object.__setattr__(self, "assignments", assignments)


@dataclass(frozen=True)
class EvalReport:
    """Fold-by-class accuracy table (averaged over repeats) plus config echo."""

    fold_class_accuracy: np.ndarray
    class_averages: np.ndarray
    k: int
    repeats: int
    seed: int
    config: dict

    def __post_init__(self):
        table = np.asarray(self.fold_class_accuracy, dtype=float)
        avg = np.asarray(self.class_averages, dtype=float)
        table.setflags(write=False)
        avg.setflags(write=False)
        object.__setattr__(self, "fold_class_accuracy", table)
        object.__setattr__(self, "class_averages", avg)

    @property
    def mean_accuracy(self) -> float:
        """Mean of the per-class averages."""
        return float(self.class_averages.mean())


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> FoldPlan:
    """Shuffled round-robin fold assignment within each class.

    Guarantees every fold holds at least one sample of each class and
    per-class fold sizes that differ by at most one.
    """
    labels = np.asarray(labels, dtype=int)
    if k < 2:
        raise PlanError("k must be >= 2")
    rng = np.random.default_rng(seed)
    assignments = np.full(labels.size, -1, dtype=int)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise PlanError(
                f"class {cls} has {idx.size} samples, fewer than k={k}"
            )
        perm = rng.permutation(idx)
        assignments[perm] = np.arange(perm.size) % k
    return FoldPlan(k=k, assignments=assignments, repeat_index=0, seed=seed)


def kelm_trainer(kernel: KernelSpec, rho: float) -> Trainer:
    """Kernel ELM trainer (deterministic; the seed argument is unused)."""

    def train(features, class_indices, seed):
        data = LabeledDataset.from_class_indices(features, class_indices)
        model = train_kelm(data, kernel, rho)
        return lambda x: predict_kelm(model, x)[1]

    return train


def khelm_trainer(
    layer_sizes: Sequence[int],
    kernel: KernelSpec,
    rho: float,
    fista: FistaConfig,
    activation: str = "sigmoid",
) -> Trainer:
    """Hierarchical model trainer; layer streams derive from the fold seed."""

    def train(features, class_indices, seed):
        data = LabeledDataset.from_class_indices(features, class_indices)
        model = train_khelm(
            data, list(layer_sizes), kernel, rho, fista, seed, activation
        )
        return lambda x: predict_khelm(model, x)[1]

    return train


def cross_validate(
    features: np.ndarray,
    class_indices: np.ndarray,
    trainer: Trainer,
    *,
    k: int,
    repeats: int,
    seed: int,
    config: dict | None = None,
) -> EvalReport:
    """Repeated stratified k-fold evaluation with per-class accuracy cells."""
    features = np.asarray(features, dtype=float)
    class_indices = np.asarray(class_indices, dtype=int)
    if repeats < 1:
        raise PlanError("repeats must be >= 1")
    class_count = int(class_indices.max()) + 1
    table = np.zeros((k, class_count))
    for repeat in range(repeats):
        plan = stratified_folds(class_indices, k, derive_seed(seed, _STAGE_FOLD, repeat))
        for fold in range(k):
            test = plan.assignments == fold
            predictor = trainer(
                features[~test],
                class_indices[~test],
                derive_seed(seed, _STAGE_TRAIN, repeat, fold),
            )
            predicted = np.asarray(predictor(features[test]))
            truth = class_indices[test]
            for cls in range(class_count):
                of_class = truth == cls
                table[fold, cls] += float(np.mean(predicted[of_class] == cls))
    table /= repeats
    return EvalReport(
        fold_class_accuracy=table,
        class_averages=table.mean(axis=0),
        k=k,
        repeats=repeats,
        seed=seed,
        config=dict(config or {}),
    )


def _detect_one(args) -> tuple[int, np.ndarray]:
    index, values, mcmc = args
    series = RoiTimeSeries(values)
    prior = bccpm.NiwPrior.default_for(series)
    config = replace(mcmc, seed=derive_seed(mcmc.seed, _STAGE_DETECT, index))
    summary = bccpm.sample_posterior(series, prior, config)
    return index, np.asarray(summary.map_mask.bits)


def subject_masks(
    series_list: Sequence[RoiTimeSeries],
    mcmc: bccpm.McmcConfig,
    jobs: int = 1,
) -> list[ChangePointMask]:
    """Detect a mask per subject with its default prior; subject i samples
    from a stream derived from the config seed and i, so serial and
    parallel runs produce identical masks."""
    tasks = [(i, s.values, mcmc) for i, s in enumerate(series_list)]
    bits_by_index: dict[int, np.ndarray] = {}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for index, bits in pool.map(_detect_one, tasks):
                bits_by_index[index] = bits
    else:
        for task in tasks:
            index, bits = _detect_one(task)
            bits_by_index[index] = bits
    return [ChangePointMask(bits_by_index[i]) for i in range(len(tasks))]


def cohort_features(
    series_list: Sequence[RoiTimeSeries],
    masks: Sequence[ChangePointMask],
) -> np.ndarray:
    return np.vstack(
        [lbem.features_for_sample(s, m) for s, m in zip(series_list, masks)]
    )


def run_comparison(
    series_list: Sequence[RoiTimeSeries],
    class_indices: np.ndarray,
    experiment: str,
    *,
    mcmc: bccpm.McmcConfig,
    k: int,
    repeats: int,
    seed: int,
    layer_sizes: Sequence[int] = (64,),
    kernel: KernelSpec = KernelSpec("rbf", None),
    rho: float = 1.0,
    fista: FistaConfig = FistaConfig(),
    activation: str = "sigmoid",
    jobs: int = 1,
    masks: Sequence[ChangePointMask] | None = None,
) -> list[EvalReport]:
    """Run one scripted comparison over a cohort and return its reports.

    bccpm-ablation: kernel ELM on features from sampled masks versus the
    trivial single-block mask, same seeds (so fold plans coincide).
    kernel-compare: hierarchical model with an rbf head versus a linear
    head.  depth-sweep: hierarchical model with 1 through 6 stacked
    layers.  Precomputed masks may be passed to skip detection.
    """
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected {EXPERIMENTS}")
    class_indices = np.asarray(class_indices, dtype=int)
    if masks is None:
        masks = subject_masks(series_list, mcmc, jobs)
    features = cohort_features(series_list, masks)
    common = dict(k=k, repeats=repeats, seed=seed)

    if experiment == "bccpm-ablation":
        trivial = [ChangePointMask.single_block(s.length) for s in series_list]
        features_trivial = cohort_features(series_list, trivial)
        trainer = kelm_trainer(kernel, rho)
        return [
            cross_validate(
                features, class_indices, trainer,
                config={"experiment": experiment, "bccpm": True}, **common,
            ),
            cross_validate(
                features_trivial, class_indices, trainer,
                config={"experiment": experiment, "bccpm": False}, **common,
            ),
        ]

    if experiment == "kernel-compare":
        reports = []
        for kind in ("rbf", "linear"):
            head = KernelSpec(kind, kernel.sigma if kind == "rbf" else None)
            trainer = khelm_trainer(layer_sizes, head, rho, fista, activation)
            reports.append(
                cross_validate(
                    features, class_indices, trainer,
                    config={"experiment": experiment, "kernel": kind}, **common,
                )
            )
        return reports

    reports = []
    for depth in range(1, 7):
        sizes = list(layer_sizes) * depth if len(layer_sizes) == 1 else list(layer_sizes)[:depth]
        sizes = (sizes + [sizes[-1]] * depth)[:depth]
        trainer = khelm_trainer(sizes, kernel, rho, fista, activation)
        reports.append(
            cross_validate(
                features, class_indices, trainer,
                config={"experiment": experiment, "layers": depth}, **common,
            )
        )
    return reports


def render_report_text(report: EvalReport, class_names: Sequence[str] | None = None) -> str:
    """Plain-text table: one row per fold, one column per class, plus the
    average row."""
    g = report.fold_class_accuracy.shape[1]
    names = list(class_names) if class_names else [f"class-{c}" for c in range(g)]
    width = max(8, *(len(n) for n in names))
    lines = []
    header = "Fold".ljust(8) + "".join(n.rjust(width + 2) for n in names)
    lines.append(header)
    for fold in range(report.k):
        cells = "".join(
            f"{report.fold_class_accuracy[fold, c]:.4f}".rjust(width + 2)
            for c in range(g)
        )
        lines.append(f"Fold{fold + 1}".ljust(8) + cells)
    avg = "".join(
        f"{report.class_averages[c] * 100:.2f}%".rjust(width + 2) for c in range(g)
    )
    lines.append("Average".ljust(8) + avg)
    if report.config:
        lines.append("")
        lines.append(
            "config: " + json.dumps(report.config, sort_keys=True)
            + f" seed={report.seed} repeats={report.repeats}"
        )
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path: str | Path, extra: dict | None = None) -> None:
    payload = {
        "k": report.k,
        "repeats": report.repeats,
        "seed": report.seed,
        "config": report.config,
        "fold_class_accuracy": report.fold_class_accuracy.tolist(),
        "class_averages": report.class_averages.tolist(),
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path: str | Path) -> EvalReport:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return EvalReport(
        fold_class_accuracy=np.array(payload["fold_class_accuracy"], dtype=float),
        class_averages=np.array(payload["class_averages"], dtype=float),
        k=int(payload["k"]),
        repeats=int(payload["repeats"]),
        seed=int(payload["seed"]),
        config=payload.get("config", {}),
    )
