"""The two-layer feed-forward block, its activations and its analytic gradients.

``H = act(X @ W1 + b1) @ W2 + b2`` with ``W1: p x p_I`` and ``W2: p_I x p``.
The scalar network used for kernels and training is ``f(X) = r . mean_rows(H)``
with a fixed readout ``r`` (:class:`ScalarHead`), so ``dF/dH`` is the constant
matrix ``ones(n) r^T / n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import InvalidArgument
from .linalg import as_matrix, as_vector

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TANH_C = math.sqrt(2.0 / math.pi)

#: sup |d/dx x*Phi(x)|, attained at x = sqrt(2): Phi(sqrt 2) + sqrt(2) phi(sqrt 2).
GELU_EXACT_LIPSCHITZ = 0.5 * (1.0 + math.erf(1.0)) + math.sqrt(2.0) * math.exp(-1.0) * _INV_SQRT_2PI
#: sup |d/dx| of the tanh approximation, from a dense grid on [-10, 10] (step 1e-6), rounded up.
GELU_TANH_LIPSCHITZ = 1.1289931

ACTIVATIONS = ("relu", "gelu_exact", "gelu_tanh")


@dataclass(frozen=True)
class Activation:
    """Element-wise nonlinearity with its derivative.

    ``kind`` is one of ``relu``, ``gelu_exact`` (the default for new models),
    ``gelu_tanh``, or ``identity``.  ``identity`` is a test hook for linear
    sanity checks and cannot be written to a model manifest.
    """

    kind: str = "gelu_exact"

    def __post_init__(self):
        if self.kind not in ACTIVATIONS + ("identity",):
            raise InvalidArgument(f"unknown activation {self.kind!r}")

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "gelu_exact":
            return x * ndtr(x)
        if self.kind == "gelu_tanh":
            return 0.5 * x * (1.0 + np.tanh(_TANH_C * (x + 0.044715 * x**3)))
        return x.copy()

    def derivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "relu":
            # subgradient 0 at the kink
            return (x > 0.0).astype(np.float64)
        if self.kind == "gelu_exact":
            return ndtr(x) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        if self.kind == "gelu_tanh":
            u = _TANH_C * (x + 0.044715 * x**3)
            th = np.tanh(u)
            du = _TANH_C * (1.0 + 3.0 * 0.044715 * x * x)
            return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
        return np.ones_like(x)

    @property
    def lipschitz(self) -> float:
        return {
            "relu": 1.0,
            "identity": 1.0,
            "gelu_exact": GELU_EXACT_LIPSCHITZ,
            "gelu_tanh": GELU_TANH_LIPSCHITZ,
        }[self.kind]

    @property
    def positively_homogeneous(self) -> bool:
        """True when act(c x) = c act(x) for every c >= 0."""
        return self.kind in ("relu", "identity")


def as_activation(act) -> Activation:
    if isinstance(act, Activation):
        return act
    return Activation(str(act))


@dataclass(frozen=True)
class GradBundle:
    """Gradients of a scalar network w.r.t. the four MLP parameter groups."""

    dW1: np.ndarray
    db1: np.ndarray
    dW2: np.ndarray
    db2: np.ndarray

    GROUPS = ("W2", "b2", "W1", "b1")

    def group(self, name: str) -> np.ndarray:
        return {"W2": self.dW2, "b2": self.db2, "W1": self.dW1, "b1": self.db1}[name]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.group(g).ravel() for g in self.GROUPS])

    def as_dict(self) -> dict:
        return {"W1": self.dW1, "b1": self.db1, "W2": self.dW2, "b2": self.db2}


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def dense_forward(X, W1, b1, W2, b2, act, scale=None):
    """``act(X W1 + b1) diag(scale) W2 + b2``; ``scale=None`` means identity."""
    hidden = act.value(X @ W1 + b1)
    if scale is not None:
        hidden = hidden * scale
    return hidden @ W2 + b2


def dense_gradients(X, W1, b1, W2, act, G, scale=None) -> GradBundle:
    """Chain rule for :func:`dense_forward` given the upstream gradient ``G = dF/dH``."""
    pre = X @ W1 + b1
    hidden = act.value(pre)
    upstream = G @ W2.T
    if scale is not None:
        hidden = hidden * scale
        upstream = upstream * scale
    dpre = upstream * act.derivative(pre)
    return GradBundle(
        dW1=X.T @ dpre,
        db1=dpre.sum(axis=0),
        dW2=hidden.T @ G,
        db2=G.sum(axis=0),
    )


@dataclass(frozen=True, eq=False)
class MlpWeights:
    """Uncompressed FFN block.  Arrays are copied and made read-only."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    act: Activation = Activation()

    variant = "dense"

    def __post_init__(self):
        W1 = as_matrix(self.W1, "W1")
        W2 = as_matrix(self.W2, "W2")
        b1 = as_vector(self.b1, "b1")
        b2 = as_vector(self.b2, "b2")
        p, p_i = W1.shape
        if p < 1 or p_i < 1:
            raise InvalidArgument("p and p_I must be at least 1")
        if W2.shape != (p_i, p) or b1.shape != (p_i,) or b2.shape != (p,):
            raise InvalidArgument(
                f"inconsistent shapes W1{W1.shape} b1{b1.shape} W2{W2.shape} b2{b2.shape}"
            )
        object.__setattr__(self, "W1", _frozen(W1))
        object.__setattr__(self, "W2", _frozen(W2))
        object.__setattr__(self, "b1", _frozen(b1))
        object.__setattr__(self, "b2", _frozen(b2))
        object.__setattr__(self, "act", as_activation(self.act))

    @property
    def p(self) -> int:
        return self.W1.shape[0]

    @property
    def p_I(self) -> int:
        return self.W1.shape[1]

    @property
    def width(self) -> int:
        return self.p_I

    def _check_input(self, X):
        X = as_matrix(X, "X")
        if X.shape[1] != self.p:
            raise InvalidArgument(f"X has {X.shape[1]} columns, expected p={self.p}")
        return X

    def forward(self, X) -> np.ndarray:
        X = self._check_input(X)
        return dense_forward(X, self.W1, self.b1, self.W2, self.b2, self.act)

    def gradients(self, X, G) -> GradBundle:
        X = self._check_input(X)
        G = as_matrix(G, "G")
        if G.shape != (X.shape[0], self.p):
            raise InvalidArgument(f"G has shape {G.shape}, expected {(X.shape[0], self.p)}")
        return dense_gradients(X, self.W1, self.b1, self.W2, self.act, G)

    def trainable(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def with_trainable(self, params: dict) -> "MlpWeights":
        return MlpWeights(params["W1"], params["b1"], params["W2"], params["b2"], self.act)

    def param_count(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size


@dataclass(frozen=True, eq=False)
class ScalarHead:
    """Fixed linear readout applied to the row mean of the block output."""

    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", _frozen(as_vector(self.r, "r")))

    def check(self, model):
        if self.r.shape[0] != model.p:
            raise InvalidArgument(f"head has length {self.r.shape[0]}, model has p={model.p}")


def forward(mlp: MlpWeights, X) -> np.ndarray:
    return mlp.forward(X)


def readout(head: ScalarHead, H: np.ndarray):
    """Scalar value and upstream gradient of ``r . mean_rows(H)``."""
    n = H.shape[0]
    f = float(head.r @ H.mean(axis=0))
    G = np.tile(head.r / n, (n, 1))
    return f, G


def head_value_and_upstream(model, head: ScalarHead, X):
    """Return ``(f, G)`` where ``f = r . mean_rows(forward(X))`` and ``G = dF/dH``."""
    head.check(model)
    return readout(head, model.forward(X))


def mlp_gradients(mlp: MlpWeights, X, G) -> GradBundle:
    return mlp.gradients(X, G)


def sub_mlp_embeddings(mlp: MlpWeights) -> np.ndarray:
    """Rows ``[W1[:, i], b1[i], W2[i, :]]``, one per intermediate unit (``p_I x (2p+1)``)."""
    return np.hstack([mlp.W1.T, mlp.b1[:, None], mlp.W2])


def split_embeddings(E, p: int):
    """Inverse of :func:`sub_mlp_embeddings`: returns ``(W1, b1, W2)``."""
    E = as_matrix(E, "embeddings")
    if E.shape[1] != 2 * p + 1:
        raise InvalidArgument(f"embedding width {E.shape[1]} != 2p+1 = {2 * p + 1}")
    return E[:, :p].T.copy(), E[:, p].copy(), E[:, p + 1 :].copy()


def mlp_from_embeddings(E, b2, act) -> MlpWeights:
    b2 = as_vector(b2, "b2")
    W1, b1, W2 = split_embeddings(E, b2.shape[0])
    return MlpWeights(W1, b1, W2, b2, act)


def flops_estimate(n: int, p: int, h: int):
    """Multiply counts ``(attention, ffn)`` for one transformer layer with ``p_I = 4p``.

    Attention: ``3np^2`` for Q/K/V, ``h * 2n^2 (p/h)`` for scores and mixing,
    ``np^2`` for the output projection.  FFN: ``2 n p p_I``.  Biases, softmax and
    layer norm are ignored.
    """
    for name, v in (("n", n), ("p", p), ("h", h)):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
            raise InvalidArgument(f"{name} must be a positive integer, got {v!r}")
    n, p, h = int(n), int(p), int(h)
    if p % h:
        raise InvalidArgument(f"head count h={h} does not divide p={p}")
    attn = 3 * n * p * p + h * 2 * n * n * (p // h) + n * p * p
    ffn = 2 * n * p * (4 * p)
    return attn, ffn
