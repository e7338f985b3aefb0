"""Change-point segmentation, order-pattern features, and kernel
hierarchical ELM classification for multivariate time series.

The pipeline has three stages, each usable on its own:

1. `bccpm` scores binary change-point masks by conjugate Gaussian block
   marginals and samples them with a single-site Gibbs sweep.
2. `lbem` turns every time column into neighbour-order bits, reads 6-bit
   groups as codes in [0, 63], and histograms them per block.
3. `elmkit` classifies feature vectors with a kernel ELM, optionally
   behind stacked L1 sparse-autoencoder layers trained by FISTA.

`evalharness` runs the repeated stratified cross-validation protocol and
the scripted comparisons; `cli` wires everything into seeded batch runs.
"""

from .bccpm import (
    McmcConfig,
    NiwPrior,
    PosteriorSummary,
    default_mcmc_config,
    extract_segments,
    log_marginal_likelihood,
    log_posterior,
    sample_posterior,
)
from .elmkit import (
    FistaConfig,
    KelmModel,
    KernelSpec,
    KhElmModel,
    LabeledDataset,
    SparseLayer,
    fista_lasso,
    load_model,
    predict_kelm,
    predict_khelm,
    save_model,
    train_kelm,
    train_khelm,
)
from .evalharness import (
    EvalReport,
    FoldPlan,
    cross_validate,
    run_comparison,
    stratified_folds,
)
from .lbem import (
    bits_to_decimal,
    encode_binary,
    encode_series,
    features_for_sample,
    histogram_features,
)
from .timeseries import (
    ChangePointMask,
    GroundTruth,
    RoiTimeSeries,
    SyntheticCohortSpec,
    generate_synthetic,
    load_series,
    save_series,
    standardize,
)

__version__ = "0.1.0"
