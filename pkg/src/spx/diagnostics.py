"""Spectral and isometry diagnostics of sensing operators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from spx.errors import DegenerateSubspace, InvalidArgument, ResourceLimit
from spx.patterns import SensingOperator
from spx.rng import check_seed, generator

GRAM_GUARD = 4096


@dataclass(frozen=True)
class SpectrumReport:
    singular_values: np.ndarray
    threshold_rank: int
    entropy_rank: float
    spectral_mass: float


@dataclass(frozen=True)
class IsometryReport:
    c1_hat: float
    c2_hat: float
    subspace_dim: int
    num_probes: int
    seed: int

    @property
    def ratio(self) -> float:
        return self.c2_hat / self.c1_hat


def gram(op: SensingOperator | np.ndarray, side: Literal["rows", "cols"] = "rows", *, allow_large: bool = False) -> np.ndarray:
    """``Phi Phi^T`` (``rows``) or ``Phi^T Phi`` (``cols``), symmetrized."""
    phi = op.effective if isinstance(op, SensingOperator) else np.asarray(op, dtype=np.float64)
    if side == "rows":
        g = phi @ phi.T
    elif side == "cols":
        if phi.shape[1] > GRAM_GUARD and not allow_large:
            raise ResourceLimit(
                f"N = {phi.shape[1]} exceeds the {GRAM_GUARD} column-Gram guard; pass allow_large=True"
            )
        g = phi.T @ phi
    else:
        raise InvalidArgument(f"side must be 'rows' or 'cols', got {side!r}")
    return 0.5 * (g + g.T)


def spectrum(op: SensingOperator | np.ndarray, eps_rank: float = 1e-10) -> SpectrumReport:
    """Singular spectrum from the eigenvalues of the smaller Gram matrix.

    ``spectral_mass`` is the Gram trace, i.e. the sum of squared singular
    values, which equals the squared Frobenius norm.
    """
    if not 0.0 < eps_rank < 1.0:
        raise InvalidArgument("eps_rank must lie in (0, 1)")
    phi = op.effective if isinstance(op, SensingOperator) else np.asarray(op, dtype=np.float64)
    m, n = phi.shape
    g = gram(phi, "rows" if m <= n else "cols", allow_large=True)
    eig = np.linalg.eigvalsh(g)[::-1]
    sigma = np.sqrt(np.clip(eig, 0.0, None))
    mass = float(np.trace(g))
    if sigma[0] == 0.0:
        return SpectrumReport(sigma, 0, 0.0, mass)
    threshold_rank = int(np.count_nonzero(sigma >= eps_rank * sigma[0]))
    energy = sigma**2
    p = energy / energy.sum()
    p = p[p > 0]
    entropy_rank = float(np.exp(-np.sum(p * np.log(p))))
    entropy_rank = min(max(entropy_rank, 1.0), float(min(m, n)))
    return SpectrumReport(sigma, threshold_rank, entropy_rank, mass)


def orthonormalize(basis: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass per column."""
    basis = np.array(basis, dtype=np.float64)
    if basis.ndim == 1:
        basis = basis[:, None]
    n, d = basis.shape
    if d > n:
        raise DegenerateSubspace(f"{d} basis vectors in dimension {n}")
    q = np.zeros_like(basis)
    for k in range(d):
        v = basis[:, k].copy()
        original = np.linalg.norm(v)
        for _ in range(2):
            for j in range(k):
                v -= (q[:, j] @ v) * q[:, j]
        norm = np.linalg.norm(v)
        if original == 0.0 or norm <= rtol * original:
            raise DegenerateSubspace(f"basis column {k} is linearly dependent on the previous ones")
        q[:, k] = v / norm
    return q


def normalized_operator(phi: np.ndarray) -> np.ndarray:
    """Rows scaled to unit energy, then the whole operator by ``sqrt(N/M)``.

    For +-1 patterns this is ``Phi / sqrt(M)``; an ideal isometry has
    ``||Psi z||^2 == ||z||^2`` and random operators concentrate around it.
    """
    m, n = phi.shape
    norms = np.linalg.norm(phi, axis=1)
    if np.any(norms == 0):
        raise InvalidArgument("operator has an all-zero row")
    return phi / norms[:, None] * np.sqrt(n / m)


def isometry_constants(
    op: SensingOperator | np.ndarray, basis: np.ndarray, num_probes: int = 1000, seed: int = 0
) -> IsometryReport:
    """Empirical ``(c1, c2)`` with ``c1 ||z||^2 <= ||Psi z||^2 <= c2 ||z||^2`` on span(basis).

    Probes are unit vectors ``Q c / ||c||`` with Gaussian ``c`` drawn from
    ``seed``; ``Q`` orthonormalizes ``basis``.
    """
    if num_probes < 1:
        raise InvalidArgument("num_probes must be >= 1")
    phi = op.effective if isinstance(op, SensingOperator) else np.asarray(op, dtype=np.float64)
    q = orthonormalize(basis)
    if q.shape[0] != phi.shape[1]:
        raise InvalidArgument(f"basis dimension {q.shape[0]} != N = {phi.shape[1]}")
    psi_q = normalized_operator(phi) @ q
    coeffs = generator(check_seed(seed)).standard_normal((num_probes, q.shape[1]))
    coeffs /= np.linalg.norm(coeffs, axis=1, keepdims=True)
    energy = np.sum((coeffs @ psi_q.T) ** 2, axis=1)
    return IsometryReport(float(energy.min()), float(energy.max()), q.shape[1], num_probes, int(seed))
