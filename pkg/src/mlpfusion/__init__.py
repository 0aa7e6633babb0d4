"""MLP fusion and baseline one-shot compressors for two-layer feed-forward blocks.

Compressed blocks are compared with the original through output error and the
SGD / Adam (sign) tangent kernels of a scalar readout.
"""

from .compress import (
    METHODS,
    STRATEGIES,
    DenseCompressedMlp,
    FactoredMlp,
    FusedMlp,
    MaskedMlp,
    clustering_ablation,
    compress,
    compressed_gradients,
    equal_budget_prune_ratio,
    fuse_mlp,
    fuse_mlp_sgd_variant,
    mmd_mlp,
    prune_mlp,
    sketch_mlp,
    svd_mlp,
)
from .errors import (
    InvalidArgument,
    MlpFusionError,
    NumericFailure,
    PreconditionViolation,
    TensorIOError,
    UnsupportedActivation,
)
from .fixtures import FixtureSpec, make_fixture
from .kmeans import ClusterAssignment, kmeans
from .linalg import make_rng, truncated_svd
from .mlp import Activation, MlpWeights, ScalarHead, flops_estimate, forward, mlp_gradients
from .ntk import adam_ntk, kernel_matrix, ntk_error, output_error, sgd_ntk
from .tuning import TuneConfig, check_output_bound, layerwise_tune, train_toy

__version__ = "0.1.0"
