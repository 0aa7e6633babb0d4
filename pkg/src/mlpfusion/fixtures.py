"""Synthetic teachers with planted sub-MLP cluster structure."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument
from .linalg import make_rng
from .mlp import ACTIVATIONS, MlpWeights, ScalarHead, mlp_from_embeddings


@dataclass(frozen=True)
class FixtureSpec:
    p: int = 16
    p_I: int = 64
    k_true: int = 16
    noise: float = 0.05
    n: int = 8
    m: int = 32
    seed: int = 0
    activation: str = "gelu_exact"

    def __post_init__(self):
        for name in ("p", "p_I", "k_true", "n", "m"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be at least 1")
        if self.k_true > self.p_I:
            raise InvalidArgument(f"k_true={self.k_true} exceeds p_I={self.p_I}")
        if not self.noise >= 0:
            raise InvalidArgument("noise must be non-negative")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Fixture:
    spec: FixtureSpec
    teacher: MlpWeights
    head: ScalarHead
    inputs: list
    labels: np.ndarray  # planted cluster of every sub-MLP

    def hash(self) -> str:
        return fixture_hash(self.teacher, self.head, self.inputs)


def fixture_hash(teacher: MlpWeights, head: ScalarHead, inputs) -> str:
    """SHA-256 over the little-endian bytes of every tensor, in a fixed order."""
    h = hashlib.sha256()
    for a in (teacher.W1, teacher.b1, teacher.W2, teacher.b2, head.r, *inputs):
        a = np.ascontiguousarray(a, dtype="<f8")
        h.update(np.asarray(a.shape, dtype="<u4").tobytes())
        h.update(a.tobytes())
    h.update(teacher.act.kind.encode())
    return h.hexdigest()


def make_fixture(spec: FixtureSpec | None = None, **overrides) -> Fixture:
    """Teacher = ``k_true`` random sub-MLPs, each repeated about ``p_I / k_true`` times.

    Centroid entries are N(0, 1/p); every embedding entry then gets independent
    N(0, noise^2) perturbations, so ``noise = 0`` gives exactly ``k_true``
    distinct sub-MLPs.  Replicas are shuffled across unit positions.  Inputs are
    ``m`` matrices of shape ``n x p`` with N(0, 1) entries; the readout is
    N(0, 1/p).  ``b2`` is N(0, 1/p).
    """
    spec = FixtureSpec(**overrides) if spec is None else spec
    rng = make_rng(spec.seed)
    d = 2 * spec.p + 1
    scale = 1.0 / math.sqrt(spec.p)
    centroids = rng.standard_normal((spec.k_true, d)) * scale
    labels = rng.permutation(np.arange(spec.p_I) % spec.k_true)
    E = centroids[labels]
    if spec.noise > 0:
        E = E + rng.standard_normal(E.shape) * spec.noise
    b2 = rng.standard_normal(spec.p) * scale
    teacher = mlp_from_embeddings(E, b2, spec.activation)
    head = ScalarHead(rng.standard_normal(spec.p) * scale)
    inputs = [rng.standard_normal((spec.n, spec.p)) for _ in range(spec.m)]
    return Fixture(spec=spec, teacher=teacher, head=head, inputs=inputs, labels=labels)
