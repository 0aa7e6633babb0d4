"""Dense linear-algebra substrate.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  This module adds
the few routines the compressors need on top of numpy: a deterministic truncated
SVD (one-sided Jacobi), a seeded Gaussian sampler and a Frobenius distance.

Random numbers come from numpy's Philox4x64-10 counter-based bit generator,
keyed by the 64-bit seed.  ``make_rng`` is the single entry point, so every
seeded routine in the package draws from the same documented generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericFailure

_SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    """Return a Philox-backed generator for a (possibly negative) 64-bit seed."""
    if isinstance(seed, (bool, float)) or not isinstance(seed, (int, np.integer)):
        raise InvalidArgument(f"seed must be an integer, got {seed!r}")
    return np.random.Generator(np.random.Philox(int(seed) & _SEED_MASK))


def as_matrix(a, name="matrix", allow_nonfinite=False) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidArgument(f"{name} must be 2-D, got shape {m.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(m)):
        raise InvalidArgument(f"{name} contains NaN or Inf")
    return m


def as_vector(a, name="vector") -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidArgument(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgument(f"{name} contains NaN or Inf")
    return v


@dataclass(frozen=True)
class SvdFactors:
    """Thin factors with ``A ~= U @ diag(S) @ V.T``; ``S`` is descending."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def _jacobi_columns(A: np.ndarray, max_sweeps: int, tol: float):
    """One-sided Jacobi on the columns of a tall matrix ``A`` (m >= n).

    Returns ``(B, V)`` with ``B = A @ V`` having mutually orthogonal columns.
    """
    B = A.copy()
    n = B.shape[1]
    V = np.eye(n)
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                bi = B[:, i]
                bj = B[:, j]
                alpha = bi @ bi
                beta = bj @ bj
                gamma = bi @ bj
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                B[:, i], B[:, j] = c * bi - s * bj, s * bi + c * bj
                vi = V[:, i].copy()
                V[:, i] = c * vi - s * V[:, j]
                V[:, j] = s * vi + c * V[:, j]
        if not rotated:
            return B, V, sweep
    raise NumericFailure(
        f"one-sided Jacobi did not converge within {max_sweeps} sweeps", step=max_sweeps
    )


def _complete_orthonormal(Q: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace the columns of ``Q`` not flagged in ``keep`` by an orthonormal completion."""
    m, n = Q.shape
    out = Q.copy()
    basis = [out[:, i] for i in range(n) if keep[i]]
    candidate = 0
    for i in range(n):
        if keep[i]:
            continue
        while True:
            e = np.zeros(m)
            e[candidate % m] = 1.0
            candidate += 1
            for b in basis:
                e -= (b @ e) * b
            for b in basis:  # second pass for numerical orthogonality
                e -= (b @ e) * b
            norm = np.linalg.norm(e)
            if norm > 1e-8:
                break
            if candidate > 4 * m:
                raise NumericFailure("could not complete an orthonormal basis")
        out[:, i] = e / norm
        basis.append(out[:, i])
    return out


def truncated_svd(A, t: int, max_sweeps: int = 100, tol: float = 1e-15) -> SvdFactors:
    """Best rank-``t`` factorization of ``A`` in Frobenius norm.

    Works on the smaller Gram side: for wide matrices the transpose is
    orthogonalized and the factors swapped back.  Singular vectors of zero
    singular values are completed to an orthonormal set so that
    ``U.T @ U = I`` always holds.
    """
    A = as_matrix(A, "A")
    m, n = A.shape
    if isinstance(t, bool) or not isinstance(t, (int, np.integer)) or not 1 <= t <= min(m, n):
        raise InvalidArgument(f"rank t={t!r} must satisfy 1 <= t <= {min(m, n)}")
    wide = m < n
    M = A.T if wide else A
    B, V, _ = _jacobi_columns(M, max_sweeps, tol)
    sigma = np.linalg.norm(B, axis=0)
    # stable sort keeps the natural order among ties
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    B = B[:, order]
    V = V[:, order]
    scale = sigma[0] if sigma[0] > 0 else 1.0
    nonzero = sigma > scale * 1e-14 * max(m, n)
    U = np.zeros_like(B)
    U[:, nonzero] = B[:, nonzero] / sigma[nonzero]
    if not np.all(nonzero):
        U = _complete_orthonormal(U, nonzero)
        sigma = np.where(nonzero, sigma, 0.0)
    U, S, V = U[:, :t], sigma[:t], V[:, :t]
    if wide:
        U, V = V, U
    return SvdFactors(U=np.ascontiguousarray(U), S=S, V=np.ascontiguousarray(V))


def spectral_norm(A) -> float:
    """Largest singular value, computed through :func:`truncated_svd`."""
    return float(truncated_svd(A, 1).S[0])


def seeded_gaussian(rows: int, cols: int, seed: int, std: float) -> np.ndarray:
    """``rows x cols`` matrix of i.i.d. Normal(0, std**2) entries from Philox(seed)."""
    if not std > 0 or not np.isfinite(std):
        raise InvalidArgument(f"std must be positive and finite, got {std!r}")
    if rows < 1 or cols < 1:
        raise InvalidArgument(f"shape ({rows}, {cols}) must be positive")
    return make_rng(seed).standard_normal((rows, cols)) * std


def frob_distance(A, B) -> float:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise InvalidArgument(f"shape mismatch {A.shape} vs {B.shape}")
    d = np.abs(A - B)
    scale = d.max(initial=0.0)
    if scale == 0.0:
        return 0.0
    # rescale so tiny differences do not underflow to zero when squared
    return float(scale * np.sqrt(np.sum((d / scale) ** 2)))
