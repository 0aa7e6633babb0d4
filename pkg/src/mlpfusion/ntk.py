"""SGD and Adam (asymmetric sign) tangent kernels over the MLP parameters.

Kernels are taken w.r.t. the four parameter groups of the block only; the
readout head is fixed.  Any model with ``forward``/``gradients`` works, so the
same functions evaluate teachers and every compressed variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .linalg import as_matrix, frob_distance
from .mlp import GradBundle, ScalarHead, head_value_and_upstream

KINDS = ("sgd", "adam")


@dataclass(frozen=True)
class NtkTerms:
    w2_term: float
    b2_term: float
    w1_term: float
    b1_term: float

    @property
    def total(self) -> float:
        return self.w2_term + self.b2_term + self.w1_term + self.b1_term

    def as_tuple(self):
        return (self.w2_term, self.b2_term, self.w1_term, self.b1_term)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    entries: np.ndarray
    kind: str

    @property
    def m(self) -> int:
        return self.entries.shape[0]


def scalar_gradients(model, head: ScalarHead, X) -> GradBundle:
    """Parameter gradients of ``f(X) = r . mean_rows(model(X))``."""
    X = as_matrix(X, "X")
    _, G = head_value_and_upstream(model, head, X)
    return model.gradients(X, G)


def _inner(a, b):
    return float(np.vdot(a, b))


def _terms(gx: GradBundle, gz: GradBundle, kind: str) -> NtkTerms:
    post = np.sign if kind == "adam" else (lambda a: a)
    vals = [_inner(gx.group(g), post(gz.group(g))) for g in GradBundle.GROUPS]
    return NtkTerms(*vals)


def _kernel_terms(model, head, X, Z, kind):
    if kind not in KINDS:
        raise InvalidArgument(f"unknown kernel kind {kind!r}")
    return _terms(scalar_gradients(model, head, X), scalar_gradients(model, head, Z), kind)


def sgd_ntk(model, head: ScalarHead, X, Z) -> NtkTerms:
    """``<grad f(X), grad f(Z)>`` split by parameter group."""
    return _kernel_terms(model, head, X, Z, "sgd")


def adam_ntk(model, head: ScalarHead, X, Z) -> NtkTerms:
    """``<grad f(X), sign(grad f(Z))>`` split by parameter group; ``sign(0) = 0``."""
    return _kernel_terms(model, head, X, Z, "adam")


def kernel_matrix(model, head: ScalarHead, inputs, kind: str = "adam") -> KernelMatrix:
    """``entries[i, j] = kernel(inputs[i], inputs[j])``.

    Gradients are computed once per input; each entry is then the same
    per-group inner product a pairwise call would compute.
    """
    if kind not in KINDS:
        raise InvalidArgument(f"unknown kernel kind {kind!r}")
    inputs = list(inputs)
    if not inputs:
        raise InvalidArgument("kernel_matrix needs at least one input")
    grads = [scalar_gradients(model, head, X) for X in inputs]
    m = len(inputs)
    entries = np.zeros((m, m))
    for g in GradBundle.GROUPS:
        F = np.stack([b.group(g).ravel() for b in grads])
        R = np.sign(F) if kind == "adam" else F
        entries += F @ R.T
    return KernelMatrix(entries=entries, kind=kind)


def ntk_error(K_orig: KernelMatrix, K_comp: KernelMatrix) -> float:
    """Frobenius norm of the kernel-matrix difference."""
    if K_orig.kind != K_comp.kind:
        raise InvalidArgument(f"kernel kinds differ: {K_orig.kind} vs {K_comp.kind}")
    if K_orig.entries.shape != K_comp.entries.shape:
        raise InvalidArgument("kernel matrices have different sizes")
    return frob_distance(K_orig.entries, K_comp.entries)


def output_error(mlp, comp, inputs) -> float:
    """Mean over inputs of ``||mlp(X) - comp(X)||_F``."""
    inputs = list(inputs)
    if not inputs:
        raise InvalidArgument("output_error needs at least one input")
    if comp.p != mlp.p:
        raise InvalidArgument(f"models disagree on p: {mlp.p} vs {comp.p}")
    return float(np.mean([frob_distance(mlp.forward(X), comp.forward(X)) for X in inputs]))
