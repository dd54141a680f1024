"""Structured dense linear algebra on uniformly blocked matrices.

Everything here operates on plain float64 numpy arrays carrying an
attached uniform block size. The block Cholesky square root is realized
by the scalar factorization (the canonical representative with upper
triangular, positive diagonal blocks), the block Arnoldi iteration
follows the classical Gram-Schmidt form with one full re-orthogonalization
pass per step, and normalizations use the unique symmetric positive
definite inverse square root.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import lapack

from . import io
from .errors import Breakdown, NotPositiveDefinite, NotSymmetric, RankTooLarge, ShapeMismatch

# Fixed default tolerances; operations accept overrides.
SYMMETRY_RTOL = 1e-10
INVERSE_SQRT_RTOL = 1e-14
ARNOLDI_BREAKDOWN_RTOL = 1e-12


@dataclass(frozen=True)
class BlockMatrix:
    """Dense square matrix with a uniform block partition.

    Parameters
    ----------
    data : ndarray
        Square (n*m, n*m) float array.
    block_size : int
        Side m of each block; block (j, l) addresses rows
        [j*m, (j+1)*m) and columns [l*m, (l+1)*m).
    """

    data: np.ndarray
    block_size: int

    def __post_init__(self):
        a = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeMismatch(f"BlockMatrix needs a square matrix, got shape {a.shape}")
        if self.block_size < 1 or a.shape[0] % self.block_size != 0:
            raise ShapeMismatch(
                f"side {a.shape[0]} is not a multiple of block_size {self.block_size}"
            )

    @property
    def n_blocks(self) -> int:
        return self.data.shape[0] // self.block_size

    def block(self, j: int, l: int) -> np.ndarray:
        """Return block (j, l) as a view."""
        m = self.block_size
        return self.data[j * m:(j + 1) * m, l * m:(l + 1) * m]

    def leading(self, k: int) -> "BlockMatrix":
        """Return the leading k-by-k block principal submatrix (copied)."""
        if not 1 <= k <= self.n_blocks:
            raise ShapeMismatch(f"leading block count {k} outside [1, {self.n_blocks}]")
        km = k * self.block_size
        return BlockMatrix(self.data[:km, :km].copy(), self.block_size)

    def save(self, path: str | Path) -> None:
        io.write_matrix(path, self.data, self.block_size)

    @classmethod
    def load(cls, path: str | Path) -> "BlockMatrix":
        data, block_size = io.read_matrix(path)
        return cls(data, block_size)

    def to_csv(self, path: str | Path) -> None:
        np.savetxt(path, self.data, delimiter=",")


@dataclass(frozen=True)
class TallBlockMatrix:
    """Dense (n*m, k*m) matrix: one or more block columns of m-wide blocks."""

    data: np.ndarray
    block_size: int

    def __post_init__(self):
        a = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", a)
        if a.ndim != 2 or a.shape[1] == 0 or a.shape[1] % self.block_size != 0:
            raise ShapeMismatch(
                f"TallBlockMatrix needs a positive multiple of block_size="
                f"{self.block_size} columns, got shape {a.shape}"
            )
        if a.shape[0] % self.block_size != 0:
            raise ShapeMismatch(
                f"row count {a.shape[0]} is not a multiple of block_size {self.block_size}"
            )

    @property
    def n_blocks(self) -> int:
        return self.data.shape[0] // self.block_size

    @property
    def n_block_columns(self) -> int:
        return self.data.shape[1] // self.block_size

    def save(self, path: str | Path) -> None:
        io.write_matrix(path, self.data, self.block_size)

    @classmethod
    def load(cls, path: str | Path) -> "TallBlockMatrix":
        data, block_size = io.read_matrix(path)
        return cls(data, block_size)


@dataclass(frozen=True)
class SpectralTruncation:
    """Leading eigenpairs of a symmetric block matrix.

    Attributes
    ----------
    eigenvectors : ndarray
        (n*m, r*m) orthonormal columns.
    eigenvalues : ndarray
        r*m positive values in descending order.
    rank : int
        Number r of retained blocks.
    """

    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    rank: int

    def __post_init__(self):
        Z = np.asarray(self.eigenvectors, dtype=float)
        lam = np.asarray(self.eigenvalues, dtype=float)
        object.__setattr__(self, "eigenvectors", Z)
        object.__setattr__(self, "eigenvalues", lam)
        if Z.shape[1] != lam.shape[0]:
            raise ShapeMismatch(f"{Z.shape[1]} eigenvectors vs {lam.shape[0]} eigenvalues")
        gram_err = np.abs(Z.T @ Z - np.eye(Z.shape[1])).max()
        if gram_err > 1e-12:
            raise ShapeMismatch(f"eigenvector columns not orthonormal (defect {gram_err:.2e})")
        if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
            raise RankTooLarge("eigenvalues must be strictly positive and non-increasing")


def symmetrize(M: BlockMatrix) -> BlockMatrix:
    """Return (M + M^T)/2, the closest symmetric matrix in Frobenius norm."""
    return BlockMatrix((M.data + M.data.T) / 2.0, M.block_size)


def _require_symmetric(a: np.ndarray, rtol: float, what: str) -> None:
    defect = np.linalg.norm(a - a.T)
    scale = np.linalg.norm(a)
    if defect > rtol * max(scale, np.finfo(float).tiny):
        raise NotSymmetric(f"{what}: asymmetry {defect:.3e} exceeds {rtol:.1e} * {scale:.3e}")


def block_cholesky(M: BlockMatrix, sym_rtol: float = SYMMETRY_RTOL) -> BlockMatrix:
    """Upper triangular square root R with M = R^T R.

    The scalar Cholesky factorization realizes the block factorization:
    its diagonal blocks are invertible upper triangular with strictly
    positive diagonal, which is the canonical block Cholesky normalization.

    Raises
    ------
    NotSymmetric
        If M deviates from symmetry beyond sym_rtol (relative Frobenius).
    NotPositiveDefinite
        If a pivot <= 0 is encountered; the pivot index is reported.
    """
    _require_symmetric(M.data, sym_rtol, "block_cholesky input")
    c, info = lapack.dpotrf(M.data, lower=0, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefinite(
            f"leading minor of order {info} is not positive definite", pivot=info - 1
        )
    if info < 0:
        raise ValueError(f"illegal dpotrf argument {-info}")
    return BlockMatrix(np.triu(c), M.block_size)


def spd_inverse_sqrt(G: np.ndarray, rtol: float = INVERSE_SQRT_RTOL) -> np.ndarray:
    """Unique symmetric positive definite H = G^{-1/2} via spectral decomposition.

    Raises NotPositiveDefinite when the smallest eigenvalue of the
    symmetrized input is <= rtol times the largest.
    """
    a = np.asarray(G, dtype=float)
    w, V = np.linalg.eigh((a + a.T) / 2.0)
    if w[-1] <= 0 or w[0] <= rtol * w[-1]:
        raise NotPositiveDefinite(
            f"min eigenvalue {w[0]:.3e} <= {rtol:.1e} * max eigenvalue {w[-1]:.3e}",
            pivot=0,
        )
    H = (V / np.sqrt(w)) @ V.T
    return (H + H.T) / 2.0


def spectral_truncate(M: BlockMatrix, r: int) -> SpectralTruncation:
    """Leading r*m eigenpairs of the symmetrized M, sorted descending.

    Raises RankTooLarge if the smallest retained eigenvalue is <= 0,
    which signals that r must be reduced.
    """
    if not 1 <= r <= M.n_blocks:
        raise ShapeMismatch(f"rank {r} outside [1, {M.n_blocks}]")
    w, V = np.linalg.eigh(symmetrize(M).data)
    w, V = w[::-1], V[:, ::-1]
    keep = r * M.block_size
    if w[keep - 1] <= 0:
        raise RankTooLarge(
            f"eigenvalue {keep - 1} is {w[keep - 1]:.3e} <= 0; reduce the rank below {r}"
        )
    return SpectralTruncation(V[:, :keep].copy(), w[:keep].copy(), r)


def block_arnoldi(
    X: BlockMatrix,
    y: TallBlockMatrix,
    breakdown_rtol: float = ARNOLDI_BREAKDOWN_RTOL,
) -> BlockMatrix:
    """Block Arnoldi iteration: orthogonal Q with Q^T X Q block upper Hessenberg.

    The first block column of Q is y (y^T y)^{-1/2}. Each step multiplies
    by X, orthogonalizes against all previous blocks by classical
    Gram-Schmidt applied twice (one full re-orthogonalization pass), and
    normalizes through the SPD inverse square root of the small Gramian.

    Raises
    ------
    Breakdown
        When the Gramian w^T w becomes numerically singular, i.e. its
        smallest eigenvalue drops below breakdown_rtol * ||X||^2; the
        step index is reported.
    """
    m = y.block_size
    if X.block_size != m or X.data.shape[0] != y.data.shape[0]:
        raise ShapeMismatch(
            f"X side {X.data.shape[0]} (block {X.block_size}) incompatible with "
            f"starting block {y.data.shape} (block {m})"
        )
    n = X.n_blocks
    xnorm2 = np.linalg.norm(X.data, 2) ** 2
    Q = np.zeros_like(X.data)
    Q[:, :m] = y.data @ spd_inverse_sqrt(y.data.T @ y.data)
    for k in range(1, n):
        w = X.data @ Q[:, (k - 1) * m:k * m]
        for _ in range(2):
            basis = Q[:, :k * m]
            w = w - basis @ (basis.T @ w)
        gram = w.T @ w
        if np.linalg.eigvalsh((gram + gram.T) / 2.0)[0] < breakdown_rtol * xnorm2:
            raise Breakdown(f"block Arnoldi breakdown at step {k}", step=k)
        Q[:, k * m:(k + 1) * m] = w @ spd_inverse_sqrt(gram)
    return BlockMatrix(Q, m)


@dataclass(frozen=True)
class HessenbergCheck:
    """Result of a block upper Hessenberg structure test."""

    ok: bool
    max_violation: float
    unreduced: bool
    min_subdiagonal: float

    def __bool__(self) -> bool:
        return self.ok


def is_block_upper_hessenberg(X: BlockMatrix, tol: float) -> HessenbergCheck:
    """Check the block upper Hessenberg structure of X.

    ok is True iff every block (j, l) with j >= l + 2 has Frobenius norm
    <= tol * ||X||_F. unreduced is True iff every first-subdiagonal
    block has Frobenius norm > tol * ||X||_F. The largest violating
    norm and the smallest subdiagonal norm are reported alongside.
    """
    n = X.n_blocks
    scale = np.linalg.norm(X.data)
    max_violation = 0.0
    for j in range(2, n):
        for l in range(j - 1):
            max_violation = max(max_violation, np.linalg.norm(X.block(j, l)))
    subdiag = [np.linalg.norm(X.block(j + 1, j)) for j in range(n - 1)]
    min_subdiagonal = min(subdiag) if subdiag else 0.0
    return HessenbergCheck(
        ok=bool(max_violation <= tol * scale),
        max_violation=float(max_violation),
        unreduced=bool(subdiag) and bool(min_subdiagonal > tol * scale),
        min_subdiagonal=float(min_subdiagonal),
    )
