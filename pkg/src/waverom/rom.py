"""Reduced order models from data matrices.

The mass and stiffness matrices assemble block-Toeplitz style from the
data matrices D_j alone. Their block Cholesky factor R is causal: its
leading k-block principal submatrix depends only on D_0..D_{k-1}, which
is what layer stripping exploits. At full rank the ROM is

    M = R^T R,    P = R^{-T} S R^{-1},

with R's block columns acting as the ROM snapshots. For noisy data the
mass matrix is regularized by spectral truncation to r < n_t blocks,
and a block Arnoldi pass on the projected propagator restores the
causal (block upper Hessenberg) structure before factoring; the
orthogonal map Pi carries guess-medium Grams into the same truncated
coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import io as _io
from .acquisition import DataMatrices, Pulse, SourceArray, build_source
from .blockla import (
    BlockMatrix,
    TallBlockMatrix,
    block_arnoldi,
    block_cholesky,
    spectral_truncate,
    symmetrize,
)
from .errors import InsufficientData, RankTooLarge, ShapeMismatch, WaveRomError
from .wavesim import (
    Grid,
    MediumModel,
    SnapshotSet,
    assemble_operator,
    initial_state,
    propagate_snapshots,
)

_NOISELESS_SPECTRAL_CUTOFF = 1e-6


def _stage(label: str, fn, *args, **kwargs):
    """Run a pipeline stage, prefixing raised errors with its name."""
    try:
        return fn(*args, **kwargs)
    except WaveRomError as exc:
        exc.args = (f"{label}: {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        raise


def assemble_mass(data: DataMatrices) -> BlockMatrix:
    """Block Toeplitz mass matrix M_{j,l} = D_{l-j} (transposed below).

    Uses D_0..D_{n_t - 1}; the result is symmetrized, which leaves the
    upper blocks bit-identical to the data matrices because the layout
    is already transpose-symmetric.
    """
    n_t = data.n_t
    if data.matrices.shape[0] < n_t:
        raise InsufficientData(f"need D_0..D_{n_t - 1}, got {data.matrices.shape[0]} matrices")
    m = data.n_excitations
    out = np.empty((n_t * m, n_t * m))
    for j in range(n_t):
        for l in range(n_t):
            blk = data.matrices[l - j] if j <= l else data.matrices[j - l].T
            out[j * m:(j + 1) * m, l * m:(l + 1) * m] = blk
    return symmetrize(BlockMatrix(out, m))


def assemble_stiffness(data: DataMatrices) -> BlockMatrix:
    """Shifted block Toeplitz stiffness S_{j,l} = D_{l+1-j}.

    Below the diagonal S_{j,l} = D_{j-1-l}^T, so the initial data block
    D_0 (transposed) fills the first subdiagonal; the top-right corner
    reaches D_{n_t}, the extra matrix the acquisition provides.
    """
    n_t = data.n_t
    if data.matrices.shape[0] < n_t + 1:
        raise InsufficientData(f"need D_0..D_{n_t}, got {data.matrices.shape[0]} matrices")
    m = data.n_excitations
    out = np.empty((n_t * m, n_t * m))
    for j in range(n_t):
        for l in range(n_t):
            blk = data.matrices[l + 1 - j] if j <= l else data.matrices[j - 1 - l].T
            out[j * m:(j + 1) * m, l * m:(l + 1) * m] = blk
    return BlockMatrix(out, m)


@dataclass(frozen=True)
class RomFactor:
    """Data-driven ROM: Cholesky factor, propagator, projection.

    R is upper triangular with positive block diagonal and satisfies
    R^T R = Pi^T M Pi. P is the (block upper Hessenberg) ROM propagator
    in the same coordinates. Pi has orthonormal columns; at full rank
    it is the identity.
    """

    R: BlockMatrix
    P: BlockMatrix
    Pi: TallBlockMatrix
    r: int
    n_t: int

    @property
    def block_size(self) -> int:
        return self.R.block_size

    def save(self, prefix: str, extra: dict | None = None) -> None:
        """Write R, P, Pi plus a metadata header (r, n_t, n_E, extras)."""
        self.R.save(f"{prefix}.r.mat")
        self.P.save(f"{prefix}.p.mat")
        self.Pi.save(f"{prefix}.pi.mat")
        meta = {"r": self.r, "n_t": self.n_t, "n_e": self.block_size}
        meta.update(extra or {})
        _io.write_header(f"{prefix}.hdr", meta)


def load_rom(prefix: str) -> RomFactor:
    """Read a RomFactor written by RomFactor.save."""
    meta = _io.read_header(f"{prefix}.hdr")
    return RomFactor(
        R=BlockMatrix.load(f"{prefix}.r.mat"),
        P=BlockMatrix.load(f"{prefix}.p.mat"),
        Pi=TallBlockMatrix.load(f"{prefix}.pi.mat"),
        r=int(meta["r"]), n_t=int(meta["n_t"]),
    )


def default_rank(M: BlockMatrix, noise_level: float = 0.0,
                 cutoff: float | None = None) -> int:
    """Spectral-threshold truncation rank.

    Returns the largest r whose trailing retained eigenvalue satisfies
    lambda_{r m} >= cutoff * lambda_1, with cutoff 1e-6 for noiseless
    data and (noise_level / 2)^2 otherwise; never less than one block.
    """
    if cutoff is None:
        cutoff = _NOISELESS_SPECTRAL_CUTOFF if noise_level == 0.0 else (noise_level / 2.0) ** 2
    w = np.linalg.eigvalsh(symmetrize(M).data)[::-1]
    m = M.block_size
    r = 1
    for cand in range(1, M.n_blocks + 1):
        if w[cand * m - 1] >= cutoff * w[0]:
            r = cand
    return r


def build_rom(M: BlockMatrix, S: BlockMatrix, r: int | None = None,
              noise_level: float = 0.0) -> RomFactor:
    """Construct the ROM factor from assembled mass and stiffness.

    At full rank (r = n_t, the noiseless default) the factor comes from
    the block Cholesky of M directly and Pi is the identity; this path
    keeps the exact data interpolation and layer causality. For r < n_t
    the mass matrix is spectrally truncated, the projected propagator
    re-causalized by block Arnoldi, and the factor taken in the rotated
    coordinates. Errors from the stages carry stage labels.
    """
    m = M.block_size
    if S.block_size != m or S.data.shape != M.data.shape:
        raise ShapeMismatch(
            f"mass {M.data.shape}/{M.block_size} and stiffness "
            f"{S.data.shape}/{S.block_size} do not match"
        )
    n_t = M.n_blocks
    if r is None:
        r = default_rank(M, noise_level)
    if not 1 <= r <= n_t:
        raise RankTooLarge(f"rank {r} outside 1..{n_t}")

    if r == n_t:
        R = _stage("mass Cholesky", block_cholesky, M)
        x = sla.solve_triangular(R.data.T, S.data, lower=True)
        p = sla.solve_triangular(R.data.T, x.T, lower=True).T
        pi = TallBlockMatrix(np.eye(n_t * m), m)
        return RomFactor(R=R, P=BlockMatrix(p, m), Pi=pi, r=r, n_t=n_t)

    trunc = _stage("spectral truncation", spectral_truncate, M, r)
    z, lam = trunc.eigenvectors, trunc.eigenvalues
    sql = np.sqrt(lam)
    p_proj = (z.T @ S.data @ z) / np.outer(sql, sql)
    start = sql[:, None] * z[:m, :].T
    q = _stage("propagator Arnoldi", block_arnoldi,
               BlockMatrix(p_proj, m), TallBlockMatrix(start, m))
    mass_rot = q.data.T @ (lam[:, None] * q.data)
    R = _stage("rotated-mass Cholesky", block_cholesky, BlockMatrix(mass_rot, m))
    p = q.data.T @ p_proj @ q.data
    pi = TallBlockMatrix(z @ q.data, m)
    return RomFactor(R=R, P=BlockMatrix(p, m), Pi=pi, r=r, n_t=n_t)


def rom_snapshots(factor: RomFactor, count: int | None = None) -> list[TallBlockMatrix]:
    """ROM snapshots: block columns of R, extrapolated by P past rank r.

    The first r snapshots are exactly R's block columns; snapshot j + 1
    for j >= r - 1 continues with the propagator, which is near-unitary
    so the norms stay bounded.
    """
    m = factor.block_size
    count = factor.r if count is None else count
    out: list[TallBlockMatrix] = []
    for j in range(min(count, factor.r)):
        out.append(TallBlockMatrix(factor.R.data[:, j * m:(j + 1) * m].copy(), m))
    for _ in range(factor.r, count):
        out.append(TallBlockMatrix(factor.P.data @ out[-1].data, m))
    return out


@dataclass(frozen=True)
class SimulationSetup:
    """Shared forward-simulation configuration for guess-medium solves.

    tau is the snapshot clock shift (None means the pulse half-support,
    the smallest admissible value).
    """

    grid: Grid
    array: SourceArray
    pulse: Pulse
    n_t: int
    dt: float
    tau_f: float
    c_o: float
    rho_o: float
    tau: float | None = None
    scheme: str = "exp-trapezoid"

    @property
    def shift(self) -> float:
        return self.pulse.t_s if self.tau is None else self.tau

    def reference_medium(self) -> MediumModel:
        shape = (self.grid.ny, self.grid.nx)
        return MediumModel(np.full(shape, self.c_o), np.full(shape, self.rho_o),
                           self.c_o, self.rho_o)


def guess_snapshots(medium: MediumModel, setup: SimulationSetup,
                    n_levels: int | None = None) -> SnapshotSet:
    """Forward-solve snapshots of a guess medium on the setup's grids."""
    n_levels = setup.n_t + 1 if n_levels is None else n_levels
    L = assemble_operator(medium, setup.grid)
    source = build_source(setup.array, setup.grid)
    phi0 = initial_state(L, source, setup.pulse, setup.shift, setup.tau_f,
                         scheme=setup.scheme)
    return propagate_snapshots(L, phi0, max(n_levels - 1, 1), setup.dt, setup.tau_f,
                               tau=setup.shift)


def _mass_of(snaps: SnapshotSet, n_t: int) -> BlockMatrix:
    """Cell-area-weighted Gram of the first n_t snapshot levels."""
    n_e = snaps.n_excitations
    flat = np.transpose(snaps.states[:n_t], (0, 2, 1)).reshape(n_t * n_e, -1)
    gram = snaps.cell_area * (flat @ flat.T)
    return BlockMatrix((gram + gram.T) / 2.0, n_e)


def guess_factor(medium: MediumModel, setup: SimulationSetup,
                 pi: TallBlockMatrix) -> BlockMatrix:
    """Cholesky factor of the guess-medium mass in the data coordinates.

    Runs the forward solver in the guess medium, forms the snapshot
    mass matrix, projects it with the data-side Pi, and factors it. The
    factor is what the inversion residual compares against the data
    factor.
    """
    snaps = guess_snapshots(medium, setup, n_levels=setup.n_t)
    mass = _mass_of(snaps, setup.n_t)
    if pi.data.shape[0] != mass.data.shape[0]:
        raise ShapeMismatch(
            f"projection rows {pi.data.shape[0]} do not match mass side {mass.data.shape[0]}"
        )
    projected = pi.data.T @ mass.data @ pi.data
    projected = (projected + projected.T) / 2.0
    return _stage("guess Cholesky", block_cholesky,
                  BlockMatrix(projected, mass.block_size))


@dataclass(frozen=True)
class InternalWave:
    """Estimated interior snapshots phi_j on the grid, per excitation."""

    states: np.ndarray
    dt: float
    cell_area: float

    @property
    def n_levels(self) -> int:
        return self.states.shape[0]


def internal_wave(medium: MediumModel, setup: SimulationSetup,
                  factor: RomFactor) -> InternalWave:
    """Estimate the interior wave from the data ROM and a guess medium.

    The guess snapshots are orthogonalized by the triangular solve with
    the guess factor (Gram-Schmidt in the discrete inner product), then
    recombined with the data-side ROM snapshots. In the untruncated
    case the estimate fits the data exactly: <phi~_0, phi~_j> = D_j.
    """
    snaps = guess_snapshots(medium, setup, n_levels=setup.n_t)
    r_guess = guess_factor(medium, setup, factor.Pi)
    n_e = snaps.n_excitations
    phi = np.hstack([snaps.states[j] for j in range(setup.n_t)])
    basis = sla.solve_triangular(r_guess.data.T, (phi @ factor.Pi.data).T, lower=True).T
    rom_snaps = rom_snapshots(factor, count=setup.n_t)
    states = np.stack([basis @ s.data for s in rom_snaps])
    return InternalWave(states=states, dt=setup.dt, cell_area=snaps.cell_area)
