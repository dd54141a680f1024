"""Staggered-grid discretization and exponential time stepping.

The first-order system is discretized on a rectangular staggered grid:
pressure unknowns at cell centers, x-velocity on all vertical faces
(including boundary faces), y-velocity on all horizontal faces. The
sound-soft boundary enters through p = 0 ghost values outside the
domain, so the discrete gradient G maps centers to faces and the
discrete divergence is exactly -G^T. With the scaled wave field
(velocities weighted by sqrt(density), pressure by 1/sqrt(bulk modulus),
both by sqrt(reference speed)) the generator takes the form

    L_h = [[0, T_h], [-T_h^T, 0]],    T_h = diag(1/sqrt(rho)) G diag(sqrt(K)),

which is skew-symmetric by construction for any positive fields, so the
semidiscrete evolution is unitary in the cell-area-weighted inner
product and energy is conserved to solver tolerance.

State vectors stack [u_x, u_y, p] in C order (y index outer). Multiple
excitations travel together as the columns of a (n_dof, n_exc) block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .blockla import BlockMatrix
from .errors import (
    ConvergenceFailure,
    InsufficientSnapshots,
    InvalidShift,
    Misalignment,
    NonPositiveMedium,
    ShapeMismatch,
)

_GRID_ALIGN_RTOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Rectangular staggered grid.

    Parameters
    ----------
    nx, ny : int
        Interior cell counts (>= 2 each).
    hx, hy : float
        Cell spacings in km.
    origin : tuple of float
        Coordinates (x0, y0) of the lower-left domain corner in km.
    """

    nx: int
    ny: int
    hx: float
    hy: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ShapeMismatch(f"need nx, ny >= 2, got ({self.nx}, {self.ny})")
        if self.hx <= 0 or self.hy <= 0:
            raise ShapeMismatch(f"need positive spacings, got ({self.hx}, {self.hy})")

    @property
    def n_pressure(self) -> int:
        return self.nx * self.ny

    @property
    def n_ux(self) -> int:
        return (self.nx + 1) * self.ny

    @property
    def n_uy(self) -> int:
        return self.nx * (self.ny + 1)

    @property
    def n_dof(self) -> int:
        return self.n_ux + self.n_uy + self.n_pressure

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def x_centers(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.hx

    @property
    def y_centers(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.hy

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(x0, x1, y0, y1) domain bounds."""
        x0, y0 = self.origin
        return (x0, x0 + self.nx * self.hx, y0, y0 + self.ny * self.hy)


@dataclass(frozen=True)
class MediumModel:
    """Wave speed and density fields on the pressure nodes.

    Fields are (ny, nx) arrays (row index is the y cell). The reference
    constants c_o, rho_o describe the homogeneous medium near the array.
    """

    c: np.ndarray
    rho: np.ndarray
    c_o: float
    rho_o: float

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "rho", rho)
        if c.shape != rho.shape or c.ndim != 2:
            raise ShapeMismatch(f"c shape {c.shape} vs rho shape {rho.shape}")
        if self.c_o <= 0 or self.rho_o <= 0 or np.any(c <= 0) or np.any(rho <= 0):
            raise NonPositiveMedium("wave speed and density must be strictly positive")

    @property
    def bulk_modulus(self) -> np.ndarray:
        return self.c ** 2 * self.rho

    def homogeneous(self) -> "MediumModel":
        """Reference-constant medium of the same shape."""
        return MediumModel(
            np.full_like(self.c, self.c_o), np.full_like(self.rho, self.rho_o),
            self.c_o, self.rho_o,
        )


def _gradient_blocks(grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Difference operators centers -> faces with p = 0 ghosts outside."""
    nx, ny = grid.nx, grid.ny
    dx = sp.diags([np.full(nx, 1.0), np.full(nx, -1.0)], [0, -1],
                  shape=(nx + 1, nx), format="csr") / grid.hx
    dy = sp.diags([np.full(ny, 1.0), np.full(ny, -1.0)], [0, -1],
                  shape=(ny + 1, ny), format="csr") / grid.hy
    gx = sp.kron(sp.eye(ny, format="csr"), dx, format="csr")
    gy = sp.kron(dy, sp.eye(nx, format="csr"), format="csr")
    return gx, gy


def _face_density(grid: Grid, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Arithmetic-mean density on faces, one-sided at the boundary."""
    rho_xpad = np.concatenate(
        [rho[:, :1], 0.5 * (rho[:, :-1] + rho[:, 1:]), rho[:, -1:]], axis=1)
    rho_ypad = np.concatenate(
        [rho[:1, :], 0.5 * (rho[:-1, :] + rho[1:, :]), rho[-1:, :]], axis=0)
    return rho_xpad.ravel(), rho_ypad.ravel()


@dataclass
class DiscreteOperator:
    """Skew-symmetric generator of the semidiscrete evolution.

    Attributes
    ----------
    matrix : csr_matrix
        The full (n_dof, n_dof) operator L_h; must be skew-symmetric.
    grid : Grid or None
        Discretization the operator was assembled on (None for
        operators built directly from a matrix, e.g. in tests).
    t_block : csr_matrix or None
        The off-diagonal block T_h (velocity rows, pressure columns).
    cell_area : float
        Weight of the discrete inner product (1.0 when no grid).
    """

    matrix: sp.csr_matrix
    grid: Grid | None = None
    t_block: sp.csr_matrix | None = None
    cell_area: float = 1.0
    _norm_bound: float = field(default=0.0, repr=False)

    def __post_init__(self):
        m = self.matrix
        if m.shape[0] != m.shape[1]:
            raise ShapeMismatch(f"operator must be square, got {m.shape}")
        scale = abs(m).max() if m.nnz else 0.0
        skew = abs(m + m.T).max() if m.nnz else 0.0
        if skew > 1e-13 * max(scale, 1.0):
            raise ShapeMismatch(
                f"operator must be skew-symmetric (violation {skew:.2e})"
            )

    @property
    def n_dof(self) -> int:
        return self.matrix.shape[0]

    @property
    def norm_bound(self) -> float:
        """Upper estimate of ||L_h||_2 (power iteration on -L^2, cached)."""
        if self._norm_bound == 0.0:
            n = self.matrix.shape[0]
            v = np.cos(np.arange(n, dtype=float)) + 0.5
            v /= np.linalg.norm(v)
            lam = 0.0
            for _ in range(40):
                w = -(self.matrix @ (self.matrix @ v))
                lam = float(v @ w)
                nw = np.linalg.norm(w)
                if nw == 0.0:
                    break
                v = w / nw
            self._norm_bound = 1.02 * float(np.sqrt(max(lam, 0.0))) + 1e-300
        return self._norm_bound


def assemble_operator(medium: MediumModel, grid: Grid) -> DiscreteOperator:
    """Assemble the skew-symmetric staggered-grid operator.

    Raises ShapeMismatch when the medium fields do not match the grid.
    """
    if medium.c.shape != (grid.ny, grid.nx):
        raise ShapeMismatch(
            f"medium fields have shape {medium.c.shape}, grid wants ({grid.ny}, {grid.nx})"
        )
    gx, gy = _gradient_blocks(grid)
    rho_fx, rho_fy = _face_density(grid, medium.rho)
    sqrt_k = np.sqrt(medium.bulk_modulus).ravel()
    tx = sp.diags(1.0 / np.sqrt(rho_fx)) @ gx @ sp.diags(sqrt_k)
    ty = sp.diags(1.0 / np.sqrt(rho_fy)) @ gy @ sp.diags(sqrt_k)
    t_block = sp.vstack([tx, ty], format="csr")
    n_u = t_block.shape[0]
    n_p = t_block.shape[1]
    zero_uu = sp.csr_matrix((n_u, n_u))
    zero_pp = sp.csr_matrix((n_p, n_p))
    l_h = sp.bmat([[zero_uu, t_block], [-t_block.T, zero_pp]], format="csr")
    return DiscreteOperator(matrix=l_h, grid=grid, t_block=t_block,
                            cell_area=grid.cell_area)


@dataclass(frozen=True)
class WaveState:
    """Stacked scaled wave field, one column per excitation."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ShapeMismatch(f"state must be 1-D or 2-D, got ndim={v.ndim}")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatch("state contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def n_dof(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]


def propagate_block(L: DiscreteOperator, X: np.ndarray, dt: float,
                    tol: float = 1e-12) -> np.ndarray:
    """Apply exp(-dt L_h) to the columns of X by scaled truncated Taylor.

    The step is split so each substep has dt_sub * ||L|| <= 1.1, then the
    Taylor series of the exponential action is summed until the term norm
    falls below tol relative to the accumulated result. All excitation
    columns share the sparse products, which is what makes the bulk
    paths (snapshot propagation, response recording) affordable.
    """
    if dt == 0.0:
        return X.copy()
    theta = abs(dt) * L.norm_bound
    n_sub = max(1, int(np.ceil(theta / 1.1)))
    h = -dt / n_sub
    Y = np.array(X, dtype=float, copy=True)
    for _ in range(n_sub):
        term = Y
        acc = Y.copy()
        for k in range(1, 64):
            term = (h / k) * (L.matrix @ term)
            acc += term
            if np.linalg.norm(term) <= tol * np.linalg.norm(acc):
                break
        else:
            raise ConvergenceFailure("Taylor series for the propagator did not converge")
        Y = acc
    return Y


def expm_step(L: DiscreteOperator, psi: WaveState, dt: float,
              tol: float = 1e-10, max_dim: int = 60) -> WaveState:
    """One exponential step e^{-dt L_h} psi via a Lanczos Krylov subspace.

    Skew-symmetry reduces Arnoldi to a three-term recurrence with a
    skew-tridiagonal projected matrix, whose small exponential is
    evaluated densely. The a-posteriori error estimate is the classical
    last-entry bound; failure to meet tol within max_dim basis vectors
    raises ConvergenceFailure. The 2-norm of each column is preserved
    within tol because the projected step is orthogonal. Any real dt is
    accepted; dt = 0 reproduces psi.
    """
    out = np.empty_like(psi.values)
    for col in range(psi.values.shape[1]):
        out[:, col] = _lanczos_expm_column(L, psi.values[:, col], dt, tol, max_dim)
    return WaveState(out)


def _lanczos_expm_column(L: DiscreteOperator, v: np.ndarray, dt: float,
                         tol: float, max_dim: int) -> np.ndarray:
    norm_v = np.linalg.norm(v)
    if norm_v == 0.0:
        return np.zeros_like(v)
    V = np.empty((max_dim + 1, v.shape[0]))
    V[0] = v / norm_v
    betas: list[float] = []
    for m in range(1, max_dim + 1):
        w = L.matrix @ V[m - 1]
        if m >= 2:
            # Skew-symmetry: the diagonal recurrence coefficient vanishes
            # and the previous coupling enters with a plus sign.
            w = w + betas[-1] * V[m - 2]
        beta = np.linalg.norm(w)
        H = _skew_tridiagonal(betas)
        y = _expm_small_skew(-dt * H)[:, 0]
        err = beta * abs(y[-1]) * abs(dt)
        if err <= tol or beta <= tol * L.norm_bound * 1e-3:
            return norm_v * (V[:m].T @ y)
        betas.append(beta)
        V[m] = w / beta
    raise ConvergenceFailure(
        f"Krylov dimension cap {max_dim} reached (error estimate {err:.2e} > {tol:.1e})"
    )


def _skew_tridiagonal(betas: list[float]) -> np.ndarray:
    m = len(betas) + 1
    H = np.zeros((m, m))
    for i, b in enumerate(betas):
        H[i + 1, i] = b
        H[i, i + 1] = -b
    return H


def _expm_small_skew(A: np.ndarray) -> np.ndarray:
    """Dense exponential of a small skew-symmetric matrix via Schur pairs."""
    # i*A is Hermitian; eigh gives a unitary diagonalization.
    w, U = np.linalg.eigh(1j * A)
    return np.real(U @ (np.exp(-1j * w)[:, None] * U.conj().T))


@dataclass(frozen=True)
class SnapshotSet:
    """Wave snapshots on the uniform coarse grid, all excitations.

    states[j] is the (n_dof, n_exc) snapshot block at time tau + j*dt.
    Level n_t (one past the Galerkin span) is kept so the stiffness Gram
    can be formed by shifting.
    """

    states: np.ndarray
    dt: float
    tau: float
    cell_area: float

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "states", s)
        if s.ndim != 3:
            raise ShapeMismatch(f"states must be (levels, n_dof, n_exc), got {s.shape}")
        if self.dt <= 0:
            raise ShapeMismatch(f"need dt > 0, got {self.dt}")

    @property
    def n_levels(self) -> int:
        return self.states.shape[0]

    @property
    def n_excitations(self) -> int:
        return self.states.shape[2]

    def energy(self) -> np.ndarray:
        """Squared norm summed over excitations, per time level."""
        return self.cell_area * np.einsum("jxe,jxe->j", self.states, self.states)


def initial_state(L: DiscreteOperator, source: np.ndarray, pulse, tau: float,
                  tau_f: float, scheme: str = "exp-trapezoid") -> WaveState:
    """Drive the forced system through the pulse and coast to time tau.

    The forcing is s(t) * source on t in [-t_s, t_s]; the returned state
    is the solution at time tau >= t_s. The default "exp-trapezoid"
    scheme advances with the exact propagator over each fine step and
    trapezoidal weights on the force, which keeps the quadrature
    consistent with the trapezoidal response convolution. The
    "backward-euler" scheme is the plain first-order alternative.

    Parameters
    ----------
    L : DiscreteOperator
    source : ndarray
        (n_dof, n_exc) spatial force block.
    pulse : acquisition.Pulse
        Provides t_s and the signal values.
    tau : float
        Time shift of the snapshot clock; must be >= pulse.t_s.
    tau_f : float
        Fine step; 2*t_s must be an integer multiple of it.
    scheme : str
        "exp-trapezoid" (default) or "backward-euler".
    """
    t_s = pulse.t_s
    if tau < t_s * (1 - 1e-12):
        raise InvalidShift(f"tau = {tau} is smaller than the pulse half-support {t_s}")
    if tau_f <= 0:
        raise Misalignment(f"need tau_f > 0, got {tau_f}")
    n_f = int(round(2 * t_s / tau_f))
    if n_f < 1 or abs(n_f * tau_f - 2 * t_s) > _GRID_ALIGN_RTOL * (2 * t_s):
        raise Misalignment(
            f"pulse support 2*t_s = {2 * t_s} is not an integer multiple of tau_f = {tau_f}"
        )
    src = np.asarray(source, dtype=float)
    if src.ndim == 1:
        src = src[:, None]
    if src.shape[0] != L.n_dof:
        raise ShapeMismatch(f"source has {src.shape[0]} rows, operator wants {L.n_dof}")

    t_nodes = -t_s + tau_f * np.arange(n_f + 1)
    s_vals = np.array([pulse(t) for t in t_nodes])
    psi = np.zeros_like(src)
    if scheme == "exp-trapezoid":
        for l in range(n_f):
            psi = propagate_block(L, psi + (0.5 * tau_f * s_vals[l]) * src, tau_f)
            psi += (0.5 * tau_f * s_vals[l + 1]) * src
    elif scheme == "backward-euler":
        solver = spla.splu((sp.eye(L.n_dof, format="csc") + tau_f * L.matrix).tocsc())
        for l in range(n_f):
            psi = solver.solve(psi + (tau_f * s_vals[l + 1]) * src)
    else:
        raise ShapeMismatch(f"unknown forced-window scheme {scheme!r}")
    if tau > t_s:
        psi = propagate_block(L, psi, tau - t_s)
    return WaveState(psi)


def propagate_snapshots(L: DiscreteOperator, phi0: WaveState, n_t: int, dt: float,
                        tau_f: float, tau: float = 0.0) -> SnapshotSet:
    """Propagate phi0 over the coarse grid; stores levels 0..n_t inclusive.

    The extra level feeds the stiffness Gram. dt must be an integer
    multiple of tau_f (the fine step the data will be sampled on). tau
    records the clock shift phi0 was built with (metadata only).
    """
    if n_t < 1:
        raise ShapeMismatch(f"need n_t >= 1, got {n_t}")
    ratio = dt / tau_f
    if abs(ratio - round(ratio)) > _GRID_ALIGN_RTOL * ratio:
        raise Misalignment(f"dt = {dt} is not an integer multiple of tau_f = {tau_f}")
    states = np.empty((n_t + 1, phi0.n_dof, phi0.n_columns))
    states[0] = phi0.values
    for j in range(n_t):
        states[j + 1] = propagate_block(L, states[j], dt)
    return SnapshotSet(states=states, dt=dt, tau=tau, cell_area=L.cell_area)


def snapshot_gram(snaps: SnapshotSet) -> tuple[BlockMatrix, BlockMatrix]:
    """Brute-force mass and stiffness Gram matrices of a snapshot set.

    M_{j,l} = <phi_j, phi_l> and S_{j,l} = <phi_j, phi_{l+1}> with the
    cell-area-weighted inner product; uses levels 0..n_t-1 as the basis
    and level n_t for the shift. This is the oracle the data-driven
    assembly is tested against.
    """
    if snaps.n_levels < 2:
        raise InsufficientSnapshots(
            f"need at least 2 time levels, got {snaps.n_levels}"
        )
    n_t = snaps.n_levels - 1
    n_e = snaps.n_excitations
    flat = np.transpose(snaps.states, (0, 2, 1)).reshape(snaps.n_levels * n_e, -1)
    gram = snaps.cell_area * (flat @ flat.T)
    m = gram[:n_t * n_e, :n_t * n_e]
    s = gram[:n_t * n_e, n_e:(n_t + 1) * n_e]
    return (
        BlockMatrix((m + m.T) / 2.0, n_e),
        BlockMatrix(s.copy(), n_e),
    )


def save_medium(prefix: str, medium: MediumModel, grid: Grid) -> None:
    """Write c and rho as WAVEROM-MAT0 files plus a sidecar text header."""
    from . import io as _io

    _io.write_matrix(f"{prefix}.c.mat", medium.c)
    _io.write_matrix(f"{prefix}.rho.mat", medium.rho)
    _io.write_header(f"{prefix}.hdr", {
        "nx": grid.nx, "ny": grid.ny,
        "hx": grid.hx, "hy": grid.hy,
        "x0": grid.origin[0], "y0": grid.origin[1],
        "c_o": medium.c_o, "rho_o": medium.rho_o,
        "units": "km, km/s, g/cm^3",
    })
