"""One-shot compressors for the FFN block and the compressed-model variants they produce.

Every compressed model exposes the same small surface as :class:`MlpWeights`:
``forward(X)``, ``gradients(X, G)``, ``trainable()``/``with_trainable()`` and
``param_count()``.  ``gradients`` differentiates w.r.t. the variant's own
trainable parameters, which is what the kernels in :mod:`mlpfusion.ntk` use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericFailure, UnsupportedActivation
from .kmeans import ClusterAssignment, kmeans
from .linalg import SvdFactors, as_matrix, as_vector, seeded_gaussian, truncated_svd
from .mlp import (
    Activation,
    GradBundle,
    MlpWeights,
    as_activation,
    dense_forward,
    dense_gradients,
    split_embeddings,
    sub_mlp_embeddings,
)

STRATEGIES = ("standalone_p", "p_into_w2")


class CompressedMlp:
    """Shared input checks; subclasses define the variant-specific algebra."""

    variant = "compressed"

    @property
    def p(self) -> int:
        return self.b2.shape[0]

    def _check_input(self, X):
        X = as_matrix(X, "X")
        if X.shape[1] != self.p:
            raise InvalidArgument(f"X has {X.shape[1]} columns, expected p={self.p}")
        return X

    def _check_upstream(self, X, G):
        G = as_matrix(G, "G")
        if G.shape != (X.shape[0], self.p):
            raise InvalidArgument(f"G has shape {G.shape}, expected {(X.shape[0], self.p)}")
        return G


@dataclass(frozen=True, eq=False)
class FusedMlp(CompressedMlp):
    """``act(X W1 + b1) P W2 + b2`` with the diagonal cluster-size matrix ``P``.

    ``P`` is stored as its diagonal ``sizes`` and is never trained.  With the
    ``standalone_p`` strategy the trainable ``W2`` is the centroid block and its
    gradient carries the factor ``P``; with ``p_into_w2`` the trainable parameter
    is the product ``P W2``.  Both strategies give the same forward pass.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    sizes: np.ndarray
    act: Activation
    strategy: str = "standalone_p"
    assignment: ClusterAssignment | None = field(default=None, repr=False)

    variant = "fused"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidArgument(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        object.__setattr__(self, "act", as_activation(self.act))
        sizes = as_vector(self.sizes, "sizes")
        if np.any(sizes <= 0):
            raise InvalidArgument("cluster sizes must be positive")
        object.__setattr__(self, "sizes", sizes)

    @property
    def P(self) -> np.ndarray:
        return np.diag(self.sizes)

    @property
    def width(self) -> int:
        return self.W1.shape[1]

    def forward(self, X):
        X = self._check_input(X)
        if self.strategy == "p_into_w2":
            return dense_forward(X, self.W1, self.b1, self.sizes[:, None] * self.W2, self.b2, self.act)
        return dense_forward(X, self.W1, self.b1, self.W2, self.b2, self.act, scale=self.sizes)

    def gradients(self, X, G) -> GradBundle:
        X = self._check_input(X)
        G = self._check_upstream(X, G)
        if self.strategy == "p_into_w2":
            return dense_gradients(X, self.W1, self.b1, self.sizes[:, None] * self.W2, self.act, G)
        return dense_gradients(X, self.W1, self.b1, self.W2, self.act, G, scale=self.sizes)

    def trainable(self) -> dict:
        W2 = self.sizes[:, None] * self.W2 if self.strategy == "p_into_w2" else self.W2
        return {"W1": self.W1, "b1": self.b1, "W2": W2, "b2": self.b2}

    def with_trainable(self, params: dict) -> "FusedMlp":
        W2 = params["W2"]
        if self.strategy == "p_into_w2":
            W2 = W2 / self.sizes[:, None]
        return FusedMlp(
            params["W1"], params["b1"], W2, params["b2"], self.sizes, self.act, self.strategy,
            self.assignment,
        )

    def with_strategy(self, strategy: str) -> "FusedMlp":
        return FusedMlp(self.W1, self.b1, self.W2, self.b2, self.sizes, self.act, strategy, self.assignment)

    def param_count(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size


@dataclass(frozen=True, eq=False)
class DenseCompressedMlp(CompressedMlp):
    """``out_scale * act(X W1 + b1) W2 + b2`` at reduced width.

    Used by the SGD-kernel fusion variant (``sgd_fused``), the clustering
    ablation (``ablation``) and the sketching/MMD baselines (``scaled_dense``).
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    act: Activation
    kind: str = "scaled_dense"
    out_scale: float = 1.0

    KINDS = ("sgd_fused", "ablation", "scaled_dense")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidArgument(f"unknown dense variant {self.kind!r}")
        object.__setattr__(self, "act", as_activation(self.act))
        object.__setattr__(self, "out_scale", float(self.out_scale))

    @property
    def variant(self) -> str:
        return self.kind

    @property
    def width(self) -> int:
        return self.W1.shape[1]

    def _scale(self):
        return None if self.out_scale == 1.0 else np.full(self.width, self.out_scale)

    def forward(self, X):
        X = self._check_input(X)
        return dense_forward(X, self.W1, self.b1, self.W2, self.b2, self.act, scale=self._scale())

    def gradients(self, X, G) -> GradBundle:
        X = self._check_input(X)
        G = self._check_upstream(X, G)
        return dense_gradients(X, self.W1, self.b1, self.W2, self.act, G, scale=self._scale())

    def trainable(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def with_trainable(self, params: dict) -> "DenseCompressedMlp":
        return DenseCompressedMlp(
            params["W1"], params["b1"], params["W2"], params["b2"], self.act, self.kind, self.out_scale
        )

    def param_count(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size


@dataclass(frozen=True, eq=False)
class FactoredMlp(CompressedMlp):
    """Rank-``t`` weights kept as SVD factors; the forward pass never forms ``W1`` or ``W2``.

    Gradients are taken w.r.t. the effective dense weights, so the kernels are
    directly comparable with the teacher's.
    """

    f1: SvdFactors
    b1: np.ndarray
    f2: SvdFactors
    b2: np.ndarray
    act: Activation

    variant = "factored"

    def __post_init__(self):
        object.__setattr__(self, "act", as_activation(self.act))

    @property
    def rank(self) -> int:
        return self.f1.rank

    @property
    def width(self) -> int:
        return self.b1.shape[0]

    def _hidden_pre(self, X):
        return ((X @ self.f1.U) * self.f1.S) @ self.f1.V.T + self.b1

    def forward(self, X):
        X = self._check_input(X)
        hidden = self.act.value(self._hidden_pre(X))
        return ((hidden @ self.f2.U) * self.f2.S) @ self.f2.V.T + self.b2

    def gradients(self, X, G) -> GradBundle:
        X = self._check_input(X)
        G = self._check_upstream(X, G)
        pre = self._hidden_pre(X)
        hidden = self.act.value(pre)
        # G @ W2^T with W2 = U2 S2 V2^T
        upstream = ((G @ self.f2.V) * self.f2.S) @ self.f2.U.T
        dpre = upstream * self.act.derivative(pre)
        return GradBundle(dW1=X.T @ dpre, db1=dpre.sum(axis=0), dW2=hidden.T @ G, db2=G.sum(axis=0))

    def dense(self) -> MlpWeights:
        return MlpWeights(self.f1.reconstruct(), self.b1, self.f2.reconstruct(), self.b2, self.act)

    def trainable(self) -> dict:
        d = self.dense()
        return {"W1": d.W1, "b1": d.b1, "W2": d.W2, "b2": d.b2}

    def with_trainable(self, params: dict) -> "FactoredMlp":
        # projected step: re-truncate the updated weights to the same rank
        t = self.rank
        return FactoredMlp(
            truncated_svd(params["W1"], t), np.asarray(params["b1"]),
            truncated_svd(params["W2"], t), np.asarray(params["b2"]), self.act,
        )

    def param_count(self) -> int:
        t = self.rank
        return sum(t * (f.U.shape[0] + f.V.shape[0] + 1) for f in (self.f1, self.f2)) + self.b1.size + self.b2.size


@dataclass(frozen=True, eq=False)
class MaskedMlp(CompressedMlp):
    """Dense block with binary masks on ``W1`` and ``W2``; masked entries stay at zero."""

    base: MlpWeights
    M1: np.ndarray
    M2: np.ndarray

    variant = "masked"

    @property
    def act(self):
        return self.base.act

    @property
    def b1(self):
        return self.base.b1

    @property
    def b2(self):
        return self.base.b2

    @property
    def W1(self):
        return self.base.W1 * self.M1

    @property
    def W2(self):
        return self.base.W2 * self.M2

    @property
    def width(self) -> int:
        return self.base.p_I

    def forward(self, X):
        X = self._check_input(X)
        return dense_forward(X, self.W1, self.b1, self.W2, self.b2, self.act)

    def gradients(self, X, G) -> GradBundle:
        X = self._check_input(X)
        G = self._check_upstream(X, G)
        g = dense_gradients(X, self.W1, self.b1, self.W2, self.act, G)
        return GradBundle(dW1=g.dW1 * self.M1, db1=g.db1, dW2=g.dW2 * self.M2, db2=g.db2)

    def trainable(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def with_trainable(self, params: dict) -> "MaskedMlp":
        base = MlpWeights(params["W1"] * self.M1, params["b1"], params["W2"] * self.M2, params["b2"], self.act)
        return MaskedMlp(base, self.M1, self.M2)

    def param_count(self) -> int:
        return int(self.M1.sum() + self.M2.sum()) + self.b1.size + self.b2.size


def forward_compressed(comp, X) -> np.ndarray:
    return comp.forward(X)


def _check_k(k, upper, name="k"):
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 1 <= k <= upper:
        raise InvalidArgument(f"{name}={k!r} must satisfy 1 <= {name} <= {upper}")
    return int(k)


def cluster_sub_mlps(mlp: MlpWeights, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-10):
    """k-means over the sub-MLP embeddings; returns a :class:`ClusterAssignment`."""
    k = _check_k(k, mlp.p_I)
    E = sub_mlp_embeddings(mlp)
    result = kmeans(E, k, seed=seed, max_iter=max_iter, tol=tol)
    return ClusterAssignment.from_labels(result.labels, k, E)


def fuse_from_assignment(mlp: MlpWeights, assignment: ClusterAssignment, strategy="standalone_p") -> FusedMlp:
    # C_bar @ E holds W1 C_bar^T, C_bar b1 and C_bar W2 side by side
    W1, b1, W2 = split_embeddings(assignment.C_bar @ sub_mlp_embeddings(mlp), mlp.p)
    return FusedMlp(
        W1=W1,
        b1=b1,
        W2=W2,
        b2=mlp.b2.copy(),
        sizes=assignment.sizes,
        act=mlp.act,
        strategy=strategy,
        assignment=assignment,
    )


def fuse_mlp(mlp: MlpWeights, k: int, seed: int = 0, strategy: str = "standalone_p") -> FusedMlp:
    """MLP fusion: replace each sub-MLP by its cluster centroid and keep ``P`` standalone."""
    if strategy not in STRATEGIES:
        raise InvalidArgument(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    return fuse_from_assignment(mlp, cluster_sub_mlps(mlp, k, seed), strategy)


def _sqrt_p_fold(mlp, assignment):
    root = np.sqrt(assignment.sizes)
    Cb = assignment.C_bar
    return (mlp.W1 @ Cb.T) * root, root * (Cb @ mlp.b1), root[:, None] * (Cb @ mlp.W2)


def fuse_mlp_sgd_variant(mlp: MlpWeights, k: int, seed: int = 0) -> DenseCompressedMlp:
    """Fusion with ``P^(1/2)`` folded into both layers; needs a positively homogeneous activation."""
    if not mlp.act.positively_homogeneous:
        raise UnsupportedActivation(
            f"activation {mlp.act.kind!r} is not positively homogeneous; the SGD-kernel variant needs relu"
        )
    assignment = cluster_sub_mlps(mlp, k, seed)
    W1, b1, W2 = _sqrt_p_fold(mlp, assignment)
    return DenseCompressedMlp(W1, b1, W2, mlp.b2.copy(), mlp.act, kind="sgd_fused")


def clustering_ablation(mlp: MlpWeights, k: int, seed: int = 0) -> DenseCompressedMlp:
    """Same folding as :func:`fuse_mlp_sgd_variant`, allowed for any activation."""
    assignment = cluster_sub_mlps(mlp, k, seed)
    W1, b1, W2 = _sqrt_p_fold(mlp, assignment)
    return DenseCompressedMlp(W1, b1, W2, mlp.b2.copy(), mlp.act, kind="ablation")


def sketch_mlp(mlp: MlpWeights, k: int, seed: int = 0) -> DenseCompressedMlp:
    """Gaussian sketch of the intermediate dimension, ``S ~ N(0, 1/k)`` of shape ``p_I x k``."""
    k = _check_k(k, mlp.p_I)
    S = seeded_gaussian(mlp.p_I, k, seed, 1.0 / math.sqrt(k))
    return DenseCompressedMlp(mlp.W1 @ S, S.T @ mlp.b1, S.T @ mlp.W2, mlp.b2.copy(), mlp.act, kind="scaled_dense")


def svd_mlp(mlp: MlpWeights, t: int) -> FactoredMlp:
    """Independent rank-``t`` truncated SVD of ``W1`` and ``W2``; biases untouched."""
    t = _check_k(t, min(mlp.p, mlp.p_I), "t")
    return FactoredMlp(truncated_svd(mlp.W1, t), mlp.b1.copy(), truncated_svd(mlp.W2, t), mlp.b2.copy(), mlp.act)


def prune_mlp(mlp: MlpWeights, ratio: float) -> MaskedMlp:
    """Global magnitude pruning over ``W1`` and ``W2`` jointly.

    Exactly ``floor(ratio * (|W1| + |W2|))`` entries are zeroed, smallest
    magnitude first; ties break by position (W1 row-major, then W2).
    """
    if not 0.0 <= ratio <= 1.0:
        raise InvalidArgument(f"ratio={ratio!r} must lie in [0, 1]")
    n1, n2 = mlp.W1.size, mlp.W2.size
    total = n1 + n2
    # small slack so e.g. 0.7 * 10 is not floored to 6
    count = min(total, int(math.floor(ratio * total + 1e-9)))
    mags = np.abs(np.concatenate([mlp.W1.ravel(), mlp.W2.ravel()]))
    keep = np.ones(total)
    keep[np.argsort(mags, kind="stable")[:count]] = 0.0
    return MaskedMlp(mlp, keep[:n1].reshape(mlp.W1.shape), keep[n1:].reshape(mlp.W2.shape))


def equal_budget_prune_ratio(mlp: MlpWeights, k: int) -> float:
    """Prune ratio leaving as many ``W1``/``W2`` entries as a width-``k`` block has."""
    return 1.0 - k / mlp.p_I


def compressed_gradients(comp: FusedMlp, X, G) -> GradBundle:
    """Gradients of a fused model w.r.t. its trainable parameters (strategy-dependent ``W2``)."""
    if not isinstance(comp, FusedMlp):
        raise InvalidArgument(f"compressed_gradients needs a fused model, got {comp.variant!r}")
    return comp.gradients(X, G)


# ---------------------------------------------------------------------------
# MMD compression


def rbf_kernel(A, B, bandwidth):
    diff = A[:, None, :] - B[None, :, :]
    return np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (2.0 * bandwidth * bandwidth))


def mmd_squared(P_pts, Q_pts, bandwidth: float) -> float:
    """Biased (V-statistic) squared MMD under a Gaussian RBF kernel."""
    P_pts = as_matrix(P_pts, "P_pts")
    Q_pts = as_matrix(Q_pts, "Q_pts")
    if P_pts.shape[0] == 0 or Q_pts.shape[0] == 0:
        raise InvalidArgument("point sets must be non-empty")
    if P_pts.shape[1] != Q_pts.shape[1]:
        raise InvalidArgument("point sets must share a dimension")
    if not bandwidth > 0:
        raise InvalidArgument(f"bandwidth must be positive, got {bandwidth!r}")
    kpp = rbf_kernel(P_pts, P_pts, bandwidth).mean()
    kqq = rbf_kernel(Q_pts, Q_pts, bandwidth).mean()
    kpq = rbf_kernel(P_pts, Q_pts, bandwidth).mean()
    return float(kpp + kqq - 2.0 * kpq)


def mmd_grad_support(P_pts, Q_pts, bandwidth: float) -> np.ndarray:
    """Gradient of :func:`mmd_squared` w.r.t. the rows of ``Q_pts``."""
    N, M = P_pts.shape[0], Q_pts.shape[0]
    h2 = bandwidth * bandwidth
    kqq = rbf_kernel(Q_pts, Q_pts, bandwidth)
    kqp = rbf_kernel(Q_pts, P_pts, bandwidth)
    # d k(y, z) / dy = -k(y, z) (y - z) / h^2
    self_term = (kqq.sum(axis=1)[:, None] * Q_pts - kqq @ Q_pts) * (-2.0 / (M * M * h2))
    cross_term = (kqp.sum(axis=1)[:, None] * Q_pts - kqp @ P_pts) * (-2.0 / (N * M * h2))
    return self_term - cross_term


def median_bandwidth(points) -> float:
    """Median pairwise Euclidean distance (upper triangle); 1.0 if all points coincide."""
    points = as_matrix(points, "points")
    diff = points[:, None, :] - points[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    iu = np.triu_indices(points.shape[0], k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(d[iu]))
    return med if med > 0 else 1.0


@dataclass(frozen=True)
class MmdTrace:
    bandwidth: float
    losses: list
    best_step: int


def mmd_support(E, k: int, seed: int = 0, steps: int = 200, lr: float = 1.0, bandwidth="auto"):
    """Learn ``k`` support points minimising squared MMD to the rows of ``E``.

    Starts from the k-means centroids and runs plain gradient descent with a
    fixed step.  The iterate with the lowest loss is returned, so the final loss
    never exceeds the initial one.  Returns ``(support, MmdTrace)``.
    """
    E = as_matrix(E, "embeddings")
    k = _check_k(k, E.shape[0])
    if steps < 0:
        raise InvalidArgument("steps must be non-negative")
    if not lr > 0:
        raise InvalidArgument("lr must be positive")
    h = median_bandwidth(E) if bandwidth in (None, "auto") else float(bandwidth)
    if not h > 0:
        raise InvalidArgument(f"bandwidth must be positive, got {bandwidth!r}")
    labels = kmeans(E, k, seed=seed).labels
    Y = ClusterAssignment.from_labels(labels, k, E).centroids
    loss = mmd_squared(E, Y, h)
    losses = [loss]
    best, best_loss, best_step = Y.copy(), loss, 0
    for step in range(1, steps + 1):
        Y = Y - lr * mmd_grad_support(E, Y, h)
        loss = mmd_squared(E, Y, h) if np.all(np.isfinite(Y)) else float("nan")
        if not math.isfinite(loss):
            raise NumericFailure(f"MMD loss became non-finite at step {step}", step=step)
        losses.append(loss)
        if loss < best_loss:
            best, best_loss, best_step = Y.copy(), loss, step
    return best, MmdTrace(bandwidth=h, losses=losses, best_step=best_step)


def mmd_mlp(mlp: MlpWeights, k: int, seed: int = 0, steps: int = 200, lr: float = 1.0, bandwidth="auto"):
    """MMD compression: ``(p_I / k) * act(X W1m + b1m) W2m + b2`` (``b2`` unscaled)."""
    support, _ = mmd_support(sub_mlp_embeddings(mlp), k, seed, steps, lr, bandwidth)
    W1, b1, W2 = split_embeddings(support, mlp.p)
    return DenseCompressedMlp(W1, b1, W2, mlp.b2.copy(), mlp.act, kind="scaled_dense", out_scale=mlp.p_I / k)


METHODS = ("fuse", "fuse_sgd", "ablation", "sketch", "svd", "mmd", "prune")


def compress(mlp: MlpWeights, method: str, *, k=None, t=None, ratio=None, seed=0,
             strategy="standalone_p", steps=200, lr=1.0, bandwidth="auto"):
    """Dispatch by method name; unset budgets default to ``p_I // 4``."""
    if method not in METHODS:
        raise InvalidArgument(f"unknown method {method!r}; choose from {METHODS}")
    k = max(1, mlp.p_I // 4) if k is None else k
    if method == "fuse":
        return fuse_mlp(mlp, k, seed, strategy)
    if method == "fuse_sgd":
        return fuse_mlp_sgd_variant(mlp, k, seed)
    if method == "ablation":
        return clustering_ablation(mlp, k, seed)
    if method == "sketch":
        return sketch_mlp(mlp, k, seed)
    if method == "svd":
        return svd_mlp(mlp, min(mlp.p, mlp.p_I, k) if t is None else t)
    if method == "mmd":
        return mmd_mlp(mlp, k, seed, steps, lr, bandwidth)
    return prune_mlp(mlp, equal_budget_prune_ratio(mlp, k) if ratio is None else ratio)
