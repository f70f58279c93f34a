"""Saab transform: a constant DC filter plus PCA of the DC-removed residual.

Coefficients are ordered ``[DC, AC1, ..., AC(d-1)]``. Because the AC filters
live in the orthogonal complement of the DC filter, the full weight matrix is
orthonormal and AC channels are exactly decorrelated on the fitting data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, InvalidInput

# Entries of a unit eigenvector closer than this in magnitude count as tied
# when fixing its sign.
_SIGN_TIE_TOL = 1e-9


@dataclass
class MomentAccumulator:
    """Count, mean and centered scatter of a stream of d-dim samples.

    ``mean`` may carry leading batch axes, shape (..., d), with ``scatter``
    shaped (..., d, d); this keeps one accumulator per tree node at a hop.
    ``merge`` uses the pairwise update of Chan et al.; merging partial
    accumulators in a fixed order is bit-reproducible.
    """

    count: int
    mean: np.ndarray
    scatter: np.ndarray

    @classmethod
    def empty(cls, dim: int, batch: tuple = ()) -> "MomentAccumulator":
        return cls(0, np.zeros(batch + (dim,)), np.zeros(batch + (dim, dim)))

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "MomentAccumulator":
        """Accumulate an (N, ..., d) array; axis 0 is the sample axis."""
        x = np.asarray(samples, dtype=np.float64)
        mean = x.mean(axis=0)
        xm = np.moveaxis(x - mean, 0, -1)  # (..., d, N)
        scatter = np.matmul(xm, np.swapaxes(xm, -1, -2))
        return cls(x.shape[0], mean, scatter)

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        outer = delta[..., :, None] * delta[..., None, :]
        scatter = self.scatter + other.scatter + outer * (self.count * other.count / n)
        return MomentAccumulator(n, mean, scatter)

    def select(self, index) -> "MomentAccumulator":
        """The accumulator of one batch entry."""
        return MomentAccumulator(self.count, self.mean[index], self.scatter[index])

    @property
    def covariance(self) -> np.ndarray:
        """Covariance with 1/N normalization."""
        return self.scatter / self.count


def dc_filter(dim: int) -> np.ndarray:
    return np.full(dim, 1.0 / np.sqrt(dim))


def _dc_complement_basis(dim: int) -> np.ndarray:
    """Orthonormal (dim, dim-1) basis of the subspace orthogonal to the DC filter.

    Columns 2..d of the Householder reflection that maps e1 onto the DC filter.
    """
    u = -dc_filter(dim)
    u[0] += 1.0
    u /= np.linalg.norm(u)
    householder = np.eye(dim) - 2.0 * np.outer(u, u)
    return householder[:, 1:]


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive.

    Entries within ``_SIGN_TIE_TOL`` of the maximum magnitude are treated as
    ties and the earliest of them decides.
    """
    vectors = np.array(vectors, dtype=np.float64, copy=True)
    mag = np.abs(vectors)
    for row, m in zip(vectors, mag):
        lead = np.flatnonzero(m >= m.max() - _SIGN_TIE_TOL)[0]
        if row[lead] < 0:
            row *= -1.0
    return vectors


@dataclass
class SaabFilterBank:
    """Fitted Saab filters for one tree node.

    Attributes:
        mean: training mean of the inputs, shape (d,).
        ac_weights: (d-1, d) orthonormal AC filters, descending eigenvalue.
        eigenvalues: (d,) with the DC projection variance first, then the
            residual eigenvalues in descending order.
    """

    mean: np.ndarray
    ac_weights: np.ndarray
    eigenvalues: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def dc_weight(self) -> np.ndarray:
        return dc_filter(self.input_dim)

    @property
    def weights(self) -> np.ndarray:
        """Full (d, d) weight matrix, DC row first."""
        if getattr(self, "_weights", None) is None:
            self._weights = np.vstack([self.dc_weight, self.ac_weights])
        return self._weights

    @classmethod
    def from_moments(cls, acc: MomentAccumulator) -> "SaabFilterBank":
        if acc.count < 2:
            raise InsufficientData(f"Saab fitting needs at least 2 samples, got {acc.count}")
        dim = acc.mean.shape[0]
        if dim < 2:
            raise InvalidInput("Saab fitting needs input dimension >= 2")
        cov = acc.covariance
        dc = dc_filter(dim)
        basis = _dc_complement_basis(dim)
        reduced = basis.T @ cov @ basis
        reduced = 0.5 * (reduced + reduced.T)
        evals, evecs = np.linalg.eigh(reduced)
        order = np.argsort(-evals, kind="stable")
        ac = fix_signs((basis @ evecs[:, order]).T)
        eigenvalues = np.concatenate([[dc @ cov @ dc], evals[order]])
        np.maximum(eigenvalues, 0.0, out=eigenvalues)
        return cls(acc.mean.copy(), ac, eigenvalues)

    def transform(self, samples: np.ndarray) -> np.ndarray:
        return apply_saab(self, samples)


def fit_saab(samples: np.ndarray) -> SaabFilterBank:
    """Fit a Saab filter bank to an (N, d) sample matrix."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInput(f"samples must be a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("samples contain non-finite values")
    if x.shape[0] < 2:
        raise InsufficientData(f"Saab fitting needs at least 2 samples, got {x.shape[0]}")
    return SaabFilterBank.from_moments(MomentAccumulator.from_samples(x))


def apply_saab(bank: SaabFilterBank, samples: np.ndarray) -> np.ndarray:
    """Project samples onto the bank: returns an (N, d) coefficient matrix."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != bank.input_dim:
        raise InvalidInput(
            f"expected samples with {bank.input_dim} columns, got shape {x.shape}"
        )
    return (x - bank.mean) @ bank.weights.T


def channel_energies(bank: SaabFilterBank, parent_energy: float) -> np.ndarray:
    """Split the parent energy across channels in proportion to eigenvalues."""
    lam = bank.eigenvalues
    total = lam.sum()
    if parent_energy == 0 or total <= 0:
        return np.zeros_like(lam)
    return parent_energy * (lam / total)


def cross_correlation(coeffs: np.ndarray) -> np.ndarray:
    """(1/N) B^T B for an (N, d) coefficient matrix."""
    b = np.asarray(coeffs, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] < 2:
        raise InvalidInput("cross_correlation needs an (N, d) matrix with N >= 2")
    return (b.T @ b) / b.shape[0]


def normalized_correlation(corr: np.ndarray) -> np.ndarray:
    """Scale a correlation matrix by sqrt(diag_i * diag_j); zero-variance rows stay 0."""
    d = np.sqrt(np.clip(np.diag(corr), 0.0, None))
    denom = np.outer(d, d)
    out = np.zeros_like(corr)
    np.divide(corr, denom, out=out, where=denom > 0)
    return out
