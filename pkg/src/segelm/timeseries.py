"""Data model, CSV/JSON I/O, standardization, and synthetic cohort generation.

A series is held as an m x T matrix with one row per ROI (signal channel)
and one column per time point.  The loader normalizes either file
orientation to this layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionError,
    EmptyInputError,
    FormatError,
    ParseError,
    SpecError,
)

__all__ = [
    "RoiTimeSeries",
    "ChangePointMask",
    "SyntheticCohortSpec",
    "GroundTruth",
    "load_series",
    "save_series",
    "standardize",
    "generate_synthetic",
    "write_ground_truth",
    "read_ground_truth",
]


@dataclass(frozen=True)
class RoiTimeSeries:
    """An m x T matrix of ROI signals over time (rows = ROIs, columns = time).

    Full-length series have T >= 2; single-column instances are allowed so
    that blocks cut out between adjacent change points stay representable.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionError(f"series must be a 2-D matrix, got ndim={values.ndim}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionError(f"series matrix must be non-empty, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DimensionError("series contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def roi_count(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ChangePointMask:
    """Binary indicator over time points; bit t marks the start of a block.

    The first bit is always set, so the positions of set bits are exactly
    the (1-indexed) starting times of the stationary blocks.
    """

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 1 or bits.size < 1:
            raise DimensionError("mask must be a non-empty 1-D bit vector")
        if not bits[0]:
            raise DimensionError("mask must have its first bit set")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_change_points(cls, length: int, change_points: Sequence[int]) -> "ChangePointMask":
        """Build a mask of `length` from 1-indexed change times (1 implied)."""
        bits = np.zeros(length, dtype=bool)
        bits[0] = True
        for t in change_points:
            if not 1 <= t <= length:
                raise DimensionError(f"change point {t} outside [1, {length}]")
            bits[t - 1] = True
        return cls(bits)

    @classmethod
    def single_block(cls, length: int) -> "ChangePointMask":
        return cls.from_change_points(length, [1])

    @property
    def length(self) -> int:
        return self.bits.size

    @property
    def change_points(self) -> list[int]:
        """1-indexed positions of set bits, always starting with 1."""
        return [int(i) + 1 for i in np.flatnonzero(self.bits)]

    @property
    def block_count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class SyntheticCohortSpec:
    """Parameters of a two-class piecewise-stationary Gaussian cohort.

    Classes share every generative parameter except their change-point
    lists.  At each change point the segment mean shifts by `mean_shift`
    along a per-subject random direction, and the segment covariance is
    blended toward a randomly rotated copy of itself with weight
    `covariance_perturbation` (rotations are drawn once per class so the
    covariance sequence is a stable class signature).
    """

    subjects_per_class: int
    roi_count: int
    length: int
    change_points_class_a: tuple[int, ...] = ()
    change_points_class_b: tuple[int, ...] = ()
    mean_shift: float = 0.0
    covariance_perturbation: float = 0.0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.subjects_per_class < 1:
            raise SpecError("subjects_per_class must be >= 1")
        if self.roi_count < 1:
            raise SpecError("roi_count must be >= 1")
        if self.length < 2:
            raise SpecError("length must be >= 2")
        if self.noise_scale <= 0:
            raise SpecError("noise_scale must be positive")
        if not 0.0 <= self.covariance_perturbation <= 1.0:
            raise SpecError("covariance_perturbation must lie in [0, 1]")
        for name in ("change_points_class_a", "change_points_class_b"):
            pts = tuple(int(t) for t in getattr(self, name))
            object.__setattr__(self, name, pts)
            if any(b <= a for a, b in zip(pts, pts[1:])):
                raise SpecError(f"{name} must be strictly increasing")
            for t in pts:
                if t < 2 or t > self.length:
                    raise SpecError(
                        f"{name}: change point {t} outside [2, {self.length}]"
                    )

    def change_points_for_class(self, class_index: int) -> tuple[int, ...]:
        return (self.change_points_class_a, self.change_points_class_b)[class_index]


@dataclass(frozen=True)
class GroundTruth:
    """Per-subject true masks and class labels (+1 = class 0, -1 = class 1)."""

    masks: tuple[ChangePointMask, ...]
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if labels.ndim != 1 or labels.size != len(self.masks):
            raise DimensionError("one label per mask required")
        if not np.all(np.isin(labels, (-1, 1))):
            raise DimensionError("labels must be +1 or -1")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "masks", tuple(self.masks))

    @property
    def class_indices(self) -> np.ndarray:
        """0 where the label is +1, 1 where it is -1."""
        return (self.labels < 0).astype(int)


def _parse_cell(token: str, row: int, col: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(
            f"non-numeric cell {token!r} at row {row}, column {col}", row=row, col=col
        ) from None


def _row_is_numeric(tokens: list[str]) -> bool:
    for tok in tokens:
        try:
            float(tok)
        except ValueError:
            return False
    return True


def load_series(path: str | Path, orientation: str = "rows") -> RoiTimeSeries:
    """Load a series CSV, normalizing to rows-as-ROIs orientation.

    `orientation` declares the file layout: "rows" means ROIs are rows,
    "cols" means ROIs are columns (the matrix is transposed on load).  A
    non-numeric first row is treated as a header and skipped.  Cell and
    row coordinates in errors are 1-indexed positions in the raw file.
    """
    if orientation not in ("rows", "cols"):
        raise FormatError(f"unknown orientation {orientation!r}")
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh]
    rows = [(i + 1, ln.split(",")) for i, ln in enumerate(lines) if ln.strip() != ""]
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    if not _row_is_numeric(rows[0][1]):
        rows = rows[1:]
        if not rows:
            raise EmptyInputError(f"{path}: header only, no data rows")
    width = len(rows[0][1])
    data = np.empty((len(rows), width), dtype=float)
    for out_i, (file_row, tokens) in enumerate(rows):
        if len(tokens) != width:
            raise FormatError(
                f"ragged row {file_row}: expected {width} cells, got {len(tokens)}",
                row=file_row,
            )
        for j, tok in enumerate(tokens):
            data[out_i, j] = _parse_cell(tok.strip(), file_row, j + 1)
    if orientation == "cols":
        data = data.T
    if data.shape[1] < 2:
        raise FormatError(f"{path}: a series needs at least 2 time points")
    return RoiTimeSeries(data)


def save_series(series: RoiTimeSeries, path: str | Path) -> None:
    """Write a series CSV (rows = ROIs) with round-trip-exact floats."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in series.values:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def standardize(series: RoiTimeSeries) -> RoiTimeSeries:
    """Center and scale each ROI row to mean 0 and standard deviation 1.

    Uses the population standard deviation, so duplicating a series along
    time leaves the standardized values unchanged.  A zero-variance row
    becomes all zeros instead of raising.
    """
    if series.length < 2:
        raise DimensionError("standardize needs at least 2 time points")
    return RoiTimeSeries(_standardize_rows(series.values))


def _standardize_rows(values: np.ndarray) -> np.ndarray:
    mean = values.mean(axis=1, keepdims=True)
    sd = values.std(axis=1, keepdims=True)
    centered = values - mean
    out = np.divide(centered, sd, out=np.zeros_like(centered), where=sd > 0)
    return out


def _structure_rng(seed: int, class_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 0, int(class_index)])

def _subject_rng(seed: int, subject_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 1, int(subject_index)])


def _base_covariance(m: int, noise_scale: float) -> np.ndarray:
    # Fixed AR-style correlation so the base regime is shared by all subjects.
    idx = np.arange(m)
    corr = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    return (noise_scale**2) * corr


def _random_rotation(rng: np.random.Generator, m: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((m, m)))
    return q * np.sign(np.diag(r))


def _class_covariances(
    spec: SyntheticCohortSpec, seed: int, class_index: int
) -> list[np.ndarray]:
    """Covariance per segment for one class; shared by all its subjects."""
    rng = _structure_rng(seed, class_index)
    cov = _base_covariance(spec.roi_count, spec.noise_scale)
    covs = [cov]
    p = spec.covariance_perturbation
    for _ in spec.change_points_for_class(class_index):
        rot = _random_rotation(rng, spec.roi_count)
        cov = (1.0 - p) * cov + p * (rot @ cov @ rot.T)
        cov = 0.5 * (cov + cov.T)
        covs.append(cov)
    return covs


def generate_synthetic(
    spec: SyntheticCohortSpec, seed: int
) -> tuple[list[RoiTimeSeries], GroundTruth]:
    """Generate a two-class cohort of piecewise-stationary Gaussian series.

    Deterministic in (spec, seed): subjects draw noise and mean-shift
    directions from per-subject streams, while segment covariances come
    from a per-class stream.  Returns subjects of class a (label +1)
    followed by class b (label -1).
    """
    m, big_t = spec.roi_count, spec.length
    chols = {
        c: [np.linalg.cholesky(cov) for cov in _class_covariances(spec, seed, c)]
        for c in (0, 1)
    }
    series: list[RoiTimeSeries] = []
    masks: list[ChangePointMask] = []
    labels: list[int] = []
    subject_index = 0
    for class_index, label in ((0, 1), (1, -1)):
        changes = spec.change_points_for_class(class_index)
        bounds = [1, *changes, big_t + 1]
        for _ in range(spec.subjects_per_class):
            rng = _subject_rng(seed, subject_index)
            subject_index += 1
            mean = np.zeros(m)
            cols = np.empty((m, big_t))
            for k in range(len(bounds) - 1):
                if k > 0:
                    direction = rng.standard_normal(m)
                    direction /= np.linalg.norm(direction)
                    mean = mean + spec.mean_shift * direction
                start, stop = bounds[k] - 1, bounds[k + 1] - 1
                noise = rng.standard_normal((m, stop - start))
                cols[:, start:stop] = mean[:, None] + chols[class_index][k] @ noise
            series.append(RoiTimeSeries(cols))
            masks.append(ChangePointMask.from_change_points(big_t, [1, *changes]))
            labels.append(label)
    return series, GroundTruth(tuple(masks), np.array(labels))


def write_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    payload = {
        "T": truth.masks[0].length if truth.masks else 0,
        "subjects": [
            {"label": int(label), "change_points": mask.change_points}
            for label, mask in zip(truth.labels, truth.masks)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_ground_truth(path: str | Path) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    length = int(payload["T"])
    masks = [
        ChangePointMask.from_change_points(length, s["change_points"])
        for s in payload["subjects"]
    ]
    labels = np.array([int(s["label"]) for s in payload["subjects"]])
    return GroundTruth(tuple(masks), labels)
