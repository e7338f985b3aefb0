"""Extreme learning machine family.

Covers the random-feature ELM (random hidden layer, pseudo-inverse output
weights), the kernel ELM (ridge-regularized kernel system solved by a
Cholesky factorization), an L1 sparse autoencoder trained with
constant-step FISTA against a random feature mapping, and the stacked
hierarchical model: greedily trained autoencoder layers, no fine-tuning,
with a kernel ELM head on the deepest representation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from .errors import ConfigError, DimensionError, NumericalError
from .seeding import derive_seed

__all__ = [
    "LabeledDataset",
    "ElmHiddenLayer",
    "KernelSpec",
    "KelmModel",
    "SparseLayer",
    "KhElmModel",
    "FistaConfig",
    "elm_hidden",
    "solve_output_weights",
    "kernel_matrix",
    "median_heuristic_sigma",
    "train_kelm",
    "predict_kelm",
    "fista_lasso",
    "train_sparse_layer",
    "forward_layer",
    "train_khelm",
    "predict_khelm",
    "save_model",
    "load_model",
]

_ACTIVATIONS = {
    "sigmoid": expit,
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
}


def _activation(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(
            f"unknown activation {name!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None


@dataclass(frozen=True)
class LabeledDataset:
    """Feature rows with one-vs-rest +/-1 target rows (exactly one +1 each)."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        if features.ndim != 2 or targets.ndim != 2:
            raise DimensionError("features and targets must be 2-D")
        if features.shape[0] != targets.shape[0]:
            raise DimensionError("features and targets must have equal row counts")
        if targets.shape[1] < 2 or features.shape[0] < targets.shape[1]:
            raise DimensionError("need N >= G >= 2")
        if not np.all(np.isin(targets, (-1.0, 1.0))):
            raise DimensionError("targets must be +1/-1")
        if not np.all((targets == 1.0).sum(axis=1) == 1):
            raise DimensionError("each target row must have exactly one +1")
        features.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)

    @classmethod
    def from_class_indices(
        cls, features: np.ndarray, class_indices: np.ndarray, class_count: int | None = None
    ) -> "LabeledDataset":
        class_indices = np.asarray(class_indices, dtype=int)
        g = int(class_indices.max()) + 1 if class_count is None else class_count
        targets = -np.ones((class_indices.size, g))
        targets[np.arange(class_indices.size), class_indices] = 1.0
        return cls(np.asarray(features, dtype=float), targets)

    @property
    def class_indices(self) -> np.ndarray:
        return np.argmax(self.targets, axis=1)

    @property
    def class_count(self) -> int:
        return self.targets.shape[1]


@dataclass(frozen=True)
class ElmHiddenLayer:
    """Random hidden layer: weights (L x d), biases (L,), activation name."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        biases = np.asarray(self.biases, dtype=float)
        if weights.ndim != 2 or biases.shape != (weights.shape[0],):
            raise DimensionError("weights must be L x d with one bias per node")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
            raise DimensionError("layer parameters must be finite")
        _activation(self.activation)
        weights.setflags(write=False)
        biases.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @classmethod
    def random(
        cls, node_count: int, input_dim: int, seed: int, activation: str = "sigmoid"
    ) -> "ElmHiddenLayer":
        rng = np.random.default_rng(seed)
        return cls(
            weights=rng.uniform(-1.0, 1.0, size=(node_count, input_dim)),
            biases=rng.uniform(-1.0, 1.0, size=node_count),
            activation=activation,
        )


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice: rbf with width sigma, or linear.

    sigma=None requests the median pairwise-distance heuristic, resolved
    when a model is trained.
    """

    kind: str = "rbf"
    sigma: float | None = None

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf" and self.sigma is not None and self.sigma <= 0:
            raise ConfigError("rbf sigma must be positive")


def _frozen_array(value) -> np.ndarray:
    # C-contiguous layout keeps predictions bit-reproducible after a
    # save/load round trip (BLAS results depend on memory order).
    out = np.ascontiguousarray(value, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class KelmModel:
    """Kernel ELM: training rows plus solved coefficients alpha (N x G)."""

    training_features: np.ndarray
    alpha: np.ndarray
    kernel: KernelSpec
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "training_features", _frozen_array(self.training_features))
        object.__setattr__(self, "alpha", _frozen_array(self.alpha))


@dataclass(frozen=True)
class SparseLayer:
    """One sparse-autoencoder layer: weight matrix beta (L x d) and its
    activation; forward output is activation(input @ beta.T)."""

    beta: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen_array(self.beta))


@dataclass(frozen=True)
class KhElmModel:
    """Stacked sparse-autoencoder layers with a kernel ELM head and the
    per-feature min/max used to scale inputs to [0, 1]."""

    layers: tuple[SparseLayer, ...]
    head: KelmModel
    feature_min: np.ndarray
    feature_max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "feature_min", _frozen_array(self.feature_min))
        object.__setattr__(self, "feature_max", _frozen_array(self.feature_max))


@dataclass(frozen=True)
class FistaConfig:
    """FISTA schedule: iteration count, L1 weight, and a safety factor
    applied to the estimated Lipschitz constant."""

    iterations: int = 200
    l1_weight: float = 1e-3
    lipschitz_boost: float = 1.01

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.l1_weight < 0:
            raise ConfigError("l1_weight must be non-negative")
        if self.lipschitz_boost < 1.0:
            raise ConfigError("lipschitz_boost must be >= 1")


def elm_hidden(features: np.ndarray, layer: ElmHiddenLayer) -> np.ndarray:
    """Hidden-layer response: activation(features @ weights.T + biases)."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != layer.weights.shape[1]:
        raise DimensionError(
            f"features must be N x {layer.weights.shape[1]} for this layer"
        )
    return _activation(layer.activation)(features @ layer.weights.T + layer.biases)


def solve_output_weights(hidden: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares output weights via the pseudo-inverse."""
    hidden = np.asarray(hidden, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if hidden.shape[0] != targets.shape[0]:
        raise DimensionError("hidden and target row counts differ")
    beta, *_ = np.linalg.lstsq(hidden, targets, rcond=None)
    return beta


def kernel_matrix(x: np.ndarray, y: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Gram block K[p, q] = k(x_p, y_q) for the chosen kernel."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise DimensionError("feature dimensions differ")
    if kernel.kind == "linear":
        return x @ y.T
    if kernel.sigma is None:
        raise ConfigError("rbf kernel needs a concrete sigma")
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * (x @ y.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * kernel.sigma**2))


def median_heuristic_sigma(features: np.ndarray) -> float:
    """Median pairwise Euclidean distance (1.0 if degenerate)."""
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    if n < 2:
        return 1.0
    sq = (
        np.sum(features * features, axis=1)[:, None]
        + np.sum(features * features, axis=1)[None, :]
        - 2.0 * (features @ features.T)
    )
    np.maximum(sq, 0.0, out=sq)
    dists = np.sqrt(sq[np.triu_indices(n, k=1)])
    med = float(np.median(dists))
    return med if med > 0 else 1.0


def _resolve_kernel(kernel: KernelSpec, features: np.ndarray) -> KernelSpec:
    if kernel.kind == "rbf" and kernel.sigma is None:
        return replace(kernel, sigma=median_heuristic_sigma(features))
    return kernel


def train_kelm(data: LabeledDataset, kernel: KernelSpec, rho: float) -> KelmModel:
    """Solve (I/rho + K) alpha = targets with a symmetric positive-definite
    factorization (never an explicit inverse)."""
    if rho <= 0:
        raise ConfigError("rho must be positive")
    kernel = _resolve_kernel(kernel, data.features)
    omega = kernel_matrix(data.features, data.features, kernel)
    system = omega + np.eye(omega.shape[0]) / rho
    try:
        factor = cho_factor(system, lower=True)
        alpha = cho_solve(factor, data.targets)
    except np.linalg.LinAlgError:
        raise NumericalError("kernel system is not positive definite") from None
    if not np.all(np.isfinite(alpha)):
        raise NumericalError("kernel solve produced non-finite coefficients")
    return KelmModel(
        training_features=data.features, alpha=alpha, kernel=kernel, rho=float(rho)
    )


def predict_kelm(model: KelmModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scores (M x G) and argmax class labels (ties go to the lowest index)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.training_features.shape[1]:
        raise DimensionError(
            f"expected {model.training_features.shape[1]} features, got {x.shape[1]}"
        )
    scores = kernel_matrix(x, model.training_features, model.kernel) @ model.alpha
    return scores, np.argmax(scores, axis=1)


def _soft_threshold(values: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(values) * np.maximum(np.abs(values) - threshold, 0.0)


def _estimate_gamma(a: np.ndarray, boost: float) -> float:
    """Step constant: boost * 2 * sigma_max(A)^2, from 100 power-iteration
    steps on A^T A with a deterministic start vector."""
    l_dim = a.shape[1]
    v = np.full(l_dim, 1.0 / math.sqrt(l_dim))
    eig = 0.0
    for _ in range(100):
        w = a.T @ (a @ v)
        eig = float(np.linalg.norm(w))
        if eig == 0.0:
            break
        v = w / eig
    return boost * 2.0 * max(eig, np.finfo(float).tiny)


def fista_lasso(a: np.ndarray, x: np.ndarray, config: FistaConfig) -> np.ndarray:
    """Columnwise lasso solve of min ||A beta - X||_F^2 + lambda ||beta||_1.

    Constant-step FISTA: beta_0 = 0, y_1 = beta_0, t_1 = 1; each step
    soft-thresholds the gradient update y - (2/gamma) A^T (A y - X) at
    lambda/gamma, then advances the momentum schedule
    t_{i+1} = (1 + sqrt(1 + 4 t_i^2)) / 2 and extrapolates with
    coefficient (t_i - 1) / t_{i+1}.  Runs exactly config.iterations
    steps; deterministic.
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if a.ndim != 2 or x.ndim != 2 or a.shape[0] != x.shape[0]:
        raise DimensionError("A and X must be 2-D with equal row counts")
    gamma = _estimate_gamma(a, config.lipschitz_boost)
    ata = a.T @ a
    atx = a.T @ x
    thresh = config.l1_weight / gamma
    beta_prev = np.zeros((a.shape[1], x.shape[1]))
    y = beta_prev
    t = 1.0
    for i in range(1, config.iterations + 1):
        grad = 2.0 * (ata @ y - atx)
        beta = _soft_threshold(y - grad / gamma, thresh)
        if not np.all(np.isfinite(beta)):
            raise NumericalError(f"non-finite iterate at FISTA step {i}")
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y = beta + ((t - 1.0) / t_next) * (beta - beta_prev)
        beta_prev = beta
        t = t_next
    return beta_prev


def train_sparse_layer(
    x: np.ndarray,
    node_count: int,
    activation: str,
    fista: FistaConfig,
    seed: int,
) -> SparseLayer:
    """Fit one autoencoder layer: map the input through a random hidden
    layer (uniform [-1, 1] weights and biases) and solve the L1
    reconstruction problem for the layer weights."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or node_count < 1:
        raise DimensionError("need a non-empty 2-D input and node_count >= 1")
    mapping = ElmHiddenLayer.random(node_count, x.shape[1], seed, activation)
    a = elm_hidden(x, mapping)
    beta = fista_lasso(a, x, fista)
    return SparseLayer(beta=beta, activation=activation)


def forward_layer(h_prev: np.ndarray, layer: SparseLayer) -> np.ndarray:
    """Next representation: activation(h_prev @ beta.T)."""
    h_prev = np.asarray(h_prev, dtype=float)
    if h_prev.ndim != 2 or h_prev.shape[1] != layer.beta.shape[1]:
        raise DimensionError(
            f"layer expects {layer.beta.shape[1]} inputs, got {h_prev.shape[1]}"
        )
    return _activation(layer.activation)(h_prev @ layer.beta.T)


def _scale_unit(
    x: np.ndarray, lo: np.ndarray, hi: np.ndarray, clip: bool
) -> np.ndarray:
    span = hi - lo
    scaled = np.divide(
        x - lo, span, out=np.zeros_like(x, dtype=float), where=span > 0
    )
    if clip:
        np.clip(scaled, 0.0, 1.0, out=scaled)
    return scaled


def train_khelm(
    data: LabeledDataset,
    layer_sizes: list[int],
    kernel: KernelSpec,
    rho: float,
    fista: FistaConfig,
    seed: int,
    activation: str = "sigmoid",
) -> KhElmModel:
    """Greedy layerwise training of the hierarchical model.

    Features are min-max scaled to [0, 1] (the scaling is kept in the
    model); each sparse layer is trained on the previous layer's output
    with no fine-tuning, using a stream derived from (seed, layer index);
    the kernel ELM head is trained on the deepest representation.
    """
    if not layer_sizes:
        raise ConfigError("layer_sizes must be non-empty")
    lo = data.features.min(axis=0)
    hi = data.features.max(axis=0)
    h = _scale_unit(data.features, lo, hi, clip=False)
    layers = []
    for index, node_count in enumerate(layer_sizes):
        layer = train_sparse_layer(
            h, node_count, activation, fista, derive_seed(seed, index)
        )
        layers.append(layer)
        h = forward_layer(h, layer)
    head = train_kelm(LabeledDataset(h, data.targets), kernel, rho)
    return KhElmModel(
        layers=tuple(layers), head=head, feature_min=lo, feature_max=hi
    )


def predict_khelm(model: KhElmModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale (clipping to the training range), run the layers, then the head."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.feature_min.size:
        raise DimensionError(
            f"expected {model.feature_min.size} features, got {x.shape[1]}"
        )
    h = _scale_unit(x, model.feature_min, model.feature_max, clip=True)
    for layer in model.layers:
        h = forward_layer(h, layer)
    return predict_kelm(model.head, h)


def save_model(model: KhElmModel, path: str | Path) -> None:
    """Versioned JSON serialization with round-trip-exact numbers."""
    payload = {
        "format_version": 1,
        "scaling": {
            "min": model.feature_min.tolist(),
            "max": model.feature_max.tolist(),
        },
        "layers": [
            {"beta": layer.beta.tolist(), "activation": layer.activation}
            for layer in model.layers
        ],
        "head": {
            "kernel": {"kind": model.head.kernel.kind, "sigma": model.head.kernel.sigma},
            "rho": model.head.rho,
            "alpha": model.head.alpha.tolist(),
            "training_features": model.head.training_features.tolist(),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path: str | Path) -> KhElmModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != 1:
        raise ConfigError(f"unsupported model format version {version!r}")
    head = payload["head"]
    kernel = KernelSpec(kind=head["kernel"]["kind"], sigma=head["kernel"]["sigma"])
    kelm = KelmModel(
        training_features=np.array(head["training_features"], dtype=float),
        alpha=np.array(head["alpha"], dtype=float),
        kernel=kernel,
        rho=float(head["rho"]),
    )
    layers = tuple(
        SparseLayer(beta=np.array(item["beta"], dtype=float), activation=item["activation"])
        for item in payload["layers"]
    )
    return KhElmModel(
        layers=layers,
        head=kelm,
        feature_min=np.array(payload["scaling"]["min"], dtype=float),
        feature_max=np.array(payload["scaling"]["max"], dtype=float),
    )
