"""Order-comparison binary encoding and 64-bin code histograms.

Every time column of an m-ROI series is replaced by 2(m-1) bits that
record whether each ROI value is <= its neighbours (previous, next, and
first-vs-last wrap-around), interleaved as
(left_2, right_2, left_3, right_3, ..., left_m, wrap).  Consecutive
6-bit groups are read most-significant-bit first as integers in [0, 63],
and each group's codes are histogrammed over time.  Because only
orderings matter, the encoding is invariant under any strictly
increasing transform of a column.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, GroupingError, ParseError
from .timeseries import ChangePointMask, RoiTimeSeries, _standardize_rows

__all__ = [
    "encode_binary",
    "bits_to_decimal",
    "encode_series",
    "histogram_features",
    "features_for_sample",
    "LocalBinaryFeature",
    "group_count",
    "feature_length",
    "write_features_csv",
    "read_features_csv",
]

_GROUP_BITS = 6
_CODE_RANGE = 64
_WEIGHTS = 2 ** np.arange(_GROUP_BITS - 1, -1, -1)


def _bit_matrix(values: np.ndarray) -> np.ndarray:
    """Bit rows (2(m-1) x T) for every column of an m x T matrix."""
    m = values.shape[0]
    if m < 2:
        raise DimensionError("encoding needs at least 2 ROIs")
    left = values[1:, :] <= values[:-1, :]
    bits = np.empty((2 * (m - 1), values.shape[1]), dtype=np.uint8)
    bits[0::2] = left
    if m > 2:
        bits[1:-1:2] = values[1 : m - 1, :] <= values[2:, :]
    bits[-1] = values[m - 1, :] <= values[0, :]
    return bits


def encode_binary(column: np.ndarray) -> np.ndarray:
    """Neighbour-comparison bits of one m-vector, length 2(m-1).

    Ties encode as 1 (the comparisons use <=).
    """
    column = np.asarray(column, dtype=float)
    if column.ndim != 1:
        raise DimensionError("expected a 1-D column vector")
    return _bit_matrix(column[:, None])[:, 0]


def bits_to_decimal(code: np.ndarray) -> np.ndarray:
    """Read consecutive 6-bit groups as integers, first bit most significant."""
    code = np.asarray(code)
    if code.ndim != 1:
        raise DimensionError("expected a 1-D bit vector")
    if code.size % _GROUP_BITS != 0:
        raise GroupingError(
            f"bit count {code.size} is not divisible by {_GROUP_BITS}"
        )
    groups = code.reshape(-1, _GROUP_BITS).astype(np.int64)
    return groups @ _WEIGHTS


def _pad_bits(bits: np.ndarray) -> np.ndarray:
    """Append zero bits until the row count is a multiple of 6."""
    remainder = bits.shape[0] % _GROUP_BITS
    if remainder == 0:
        return bits
    pad = np.zeros((_GROUP_BITS - remainder, bits.shape[1]), dtype=bits.dtype)
    return np.vstack([bits, pad])


def group_count(roi_count: int) -> int:
    """Number of 6-bit groups for m ROIs (358 ROIs give 119 groups)."""
    bits = 2 * (roi_count - 1)
    return -(-bits // _GROUP_BITS)


def feature_length(roi_count: int) -> int:
    return group_count(roi_count) * _CODE_RANGE


def encode_series(block: RoiTimeSeries) -> np.ndarray:
    """Code matrix (groups x T) of a block, one column encoded at a time."""
    if block.roi_count < 4:
        raise DimensionError("series encoding needs at least 4 ROIs")
    bits = _pad_bits(_bit_matrix(block.values))
    g = bits.shape[0] // _GROUP_BITS
    return np.einsum(
        "gbt,b->gt", bits.reshape(g, _GROUP_BITS, -1).astype(np.int64), _WEIGHTS
    )


@dataclass(frozen=True)
class LocalBinaryFeature:
    """Per-group histograms over the 64 code values."""

    histograms: np.ndarray
    normalized: bool

    def __post_init__(self):
        hist = np.asarray(self.histograms, dtype=float)
        if hist.ndim != 2 or hist.shape[1] != _CODE_RANGE:
            raise DimensionError(f"histograms must be g x {_CODE_RANGE}")
        if np.any(hist < 0):
            raise DimensionError("histogram entries must be non-negative")
        hist.setflags(write=False)
        object.__setattr__(self, "histograms", hist)

    def flatten(self) -> np.ndarray:
        return self.histograms.reshape(-1).copy()


def histogram_features(codes: np.ndarray, normalized: bool) -> LocalBinaryFeature:
    """Count code occurrences per group row; optionally divide by the
    number of columns so each row sums to 1."""
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.size == 0:
        raise DimensionError("code matrix must be a non-empty 2-D array")
    g, t_b = codes.shape
    hist = np.zeros((g, _CODE_RANGE))
    rows = np.repeat(np.arange(g), t_b)
    np.add.at(hist, (rows, codes.reshape(-1)), 1.0)
    if normalized:
        hist /= t_b
    return LocalBinaryFeature(hist, normalized)


def features_for_sample(
    series: RoiTimeSeries, mask: ChangePointMask, normalized: bool = True
) -> np.ndarray:
    """Feature vector of one sample: per-block code histograms combined.

    Each block is row-standardized on its own extent before encoding, so
    the histograms describe ordering structure within a stationary block
    rather than between-block level offsets; the blocks' normalized
    histograms are then averaged weighted by block length and flattened
    row-major (length groups x 64).  With normalized=False the vector is
    scaled by the series length, turning entries back into code counts.
    """
    if mask.length != series.length:
        raise DimensionError(
            f"mask length {mask.length} does not match series length {series.length}"
        )
    starts = np.flatnonzero(mask.bits)
    stops = np.append(starts[1:], series.length)
    g = group_count(series.roi_count)
    combined = np.zeros((g, _CODE_RANGE))
    for start, stop in zip(starts, stops):
        block = _standardize_rows(series.values[:, start:stop])
        codes = encode_series(RoiTimeSeries(block))
        weight = (stop - start) / series.length
        combined += weight * histogram_features(codes, normalized=True).histograms
    if not normalized:
        combined *= series.length
    return combined.reshape(-1)


def write_features_csv(
    features: np.ndarray, labels: np.ndarray, path: str | Path
) -> None:
    """One row per sample: integer label first, then the feature values."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if labels.size != features.shape[0]:
        raise DimensionError("one label per feature row required")
    with open(path, "w", encoding="utf-8") as fh:
        for label, row in zip(labels, features):
            fh.write(str(int(label)))
            for v in row:
                fh.write(",")
                fh.write(repr(float(v)))
            fh.write("\n")


def read_features_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    labels: list[int] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(",")
            try:
                labels.append(int(float(tokens[0])))
                rows.append([float(tok) for tok in tokens[1:]])
            except ValueError:
                raise ParseError(f"bad numeric value on line {i + 1}", row=i + 1) from None
    if not rows:
        raise FormatError(f"{path}: no feature rows")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(f"ragged feature row {i + 1}", row=i + 1)
    return np.array(rows), np.array(labels)
