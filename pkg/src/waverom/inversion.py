"""Joint wave speed and density inversion, ROM-based and conventional.

Both modes search the same 2N-dimensional coefficient space: Gaussian
bump perturbations of the homogeneous reference, the first N
coefficients for speed, the last N for density. The ROM mode fits the
block Cholesky factor of the data-driven mass matrix,

    O_k = || [R(eta)]_k [R]_k^{-1} - I ||_F^2,

whose leading-submatrix structure lets layer stripping grow k without
re-touching earlier data. The conventional mode fits the data matrices
directly, O_k = sum_{j<=k} ||Triu(D_j - D_j(eta))||_F^2. Updates are
finite-difference Gauss-Newton steps with an adaptive Tikhonov weight
from the Jacobian's singular value decay.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .acquisition import DataMatrices, data_matrices, record_response
from .errors import (
    NonPositiveMedium,
    ShapeMismatch,
    SingularNormalEquations,
)
from .rom import RomFactor, SimulationSetup, guess_factor
from .wavesim import Grid, MediumModel

_MU_FLOOR = 1e-30


@dataclass(frozen=True)
class Parameterization:
    """Gaussian bump basis on a coarse grid, shared by both fields.

    The N = n_bx * n_by bumps sit at the coarse cell centers with width
    equal to the coarse spacing in each direction, giving smooth
    overlapping coverage of the domain. Realized fields are clamped to
    the bound factors times the reference constants.
    """

    n_bx: int
    n_by: int
    lower_factor: float = 0.2
    upper_factor: float = 5.0

    def __post_init__(self):
        if self.n_bx < 1 or self.n_by < 1:
            raise ShapeMismatch(f"need a nonempty basis grid, got {self.n_bx}x{self.n_by}")
        if not 0 <= self.lower_factor < self.upper_factor:
            raise NonPositiveMedium(
                f"bound factors must satisfy 0 <= lo < hi, got "
                f"({self.lower_factor}, {self.upper_factor})"
            )

    @property
    def size(self) -> int:
        """Basis count N per field; parameter vectors have length 2N."""
        return self.n_bx * self.n_by

    def basis(self, grid: Grid) -> np.ndarray:
        """Evaluate all bumps at the grid cell centers, (N, ny, nx)."""
        x0, x1, y0, y1 = grid.extent
        wx = (x1 - x0) / self.n_bx
        wy = (y1 - y0) / self.n_by
        cx = x0 + (np.arange(self.n_bx) + 0.5) * wx
        cy = y0 + (np.arange(self.n_by) + 0.5) * wy
        gx = (grid.x_centers[None, :] - cx[:, None]) / wx
        gy = (grid.y_centers[None, :] - cy[:, None]) / wy
        ex = np.exp(-0.5 * gx ** 2)
        ey = np.exp(-0.5 * gy ** 2)
        out = np.einsum("jy,ix->jiyx", ey, ex).reshape(self.size, grid.ny, grid.nx)
        return out


def realize_medium(eta: np.ndarray, param: Parameterization, grid: Grid,
                   c_o: float, rho_o: float) -> tuple[MediumModel, bool]:
    """Realize speed and density fields from a coefficient vector.

    c = c_o + sum eta_l beta_l and rho = rho_o + sum eta_{l+N} beta_l,
    clamped to the parameterization bounds. Returns the medium and a
    flag marking whether any clamping occurred.
    """
    eta = np.asarray(eta, dtype=float)
    n = param.size
    if eta.shape != (2 * n,):
        raise ShapeMismatch(f"expected {2 * n} coefficients, got shape {eta.shape}")
    if not np.all(np.isfinite(eta)):
        raise ShapeMismatch("coefficients contain non-finite entries")
    if param.lower_factor * min(c_o, rho_o) <= 0:
        raise NonPositiveMedium(
            f"lower bound factor {param.lower_factor} gives a non-positive medium"
        )
    basis = param.basis(grid)
    c = c_o + np.tensordot(eta[:n], basis, axes=1)
    rho = rho_o + np.tensordot(eta[n:], basis, axes=1)
    c_lo, c_hi = param.lower_factor * c_o, param.upper_factor * c_o
    r_lo, r_hi = param.lower_factor * rho_o, param.upper_factor * rho_o
    clamped = bool(np.any(c < c_lo) or np.any(c > c_hi)
                   or np.any(rho < r_lo) or np.any(rho > r_hi))
    medium = MediumModel(np.clip(c, c_lo, c_hi), np.clip(rho, r_lo, r_hi), c_o, rho_o)
    return medium, clamped


def objective_rom(eta: np.ndarray, factor: RomFactor, k: int, setup: SimulationSetup,
                  param: Parameterization) -> tuple[float, np.ndarray]:
    """Layer-k ROM objective and its residual vector.

    The residual is the upper-triangular part (the whole nonzero part)
    of [R(eta)]_k [R]_k^{-1} - I, with [.]_k the leading k-block
    principal submatrix; the value is its squared Frobenius norm.
    """
    if not 1 <= k <= factor.r:
        raise ShapeMismatch(f"layer index {k} outside 1..{factor.r}")
    medium, _ = realize_medium(eta, param, setup.grid, setup.c_o, setup.rho_o)
    r_guess = guess_factor(medium, setup, factor.Pi)
    kk = k * factor.block_size
    lead_guess = r_guess.data[:kk, :kk]
    lead_data = factor.R.data[:kk, :kk]
    ratio = sla.solve_triangular(lead_data.T, lead_guess.T, lower=True).T
    diff = ratio - np.eye(kk)
    residual = diff[np.triu_indices(kk)]
    return float(residual @ residual), residual


def objective_fwi(eta: np.ndarray, data: DataMatrices, k: int, setup: SimulationSetup,
                  param: Parameterization) -> tuple[float, np.ndarray]:
    """Layer-k data-fit objective and residual for the conventional mode.

    Re-simulates the guess medium through the same acquisition pipeline
    and stacks the upper-triangular entries of D_j - D_j(eta) for
    j = 0..k (the lower triangle repeats them up to reciprocity).
    """
    if not 1 <= k <= data.n_t:
        raise ShapeMismatch(f"layer index {k} outside 1..{data.n_t}")
    medium, _ = realize_medium(eta, param, setup.grid, setup.c_o, setup.rho_o)
    record = record_response(medium, setup.grid, setup.array, setup.pulse,
                             t_max=k * data.dt, tau_f=setup.tau_f,
                             check_reference=False)
    guess = data_matrices(record, data.dt, k)
    diff = data.matrices[:k + 1] - guess.matrices
    rows, cols = np.triu_indices(data.n_excitations)
    residual = diff[:, rows, cols].ravel()
    return float(residual @ residual), residual


def fd_jacobian(residual_fn, eta: np.ndarray,
                steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward-difference Jacobian of a residual function.

    Column l uses the absolute step steps[l]. Returns the residual at
    eta and the Jacobian.
    """
    res0 = np.asarray(residual_fn(eta), dtype=float)
    jac = np.empty((res0.shape[0], eta.shape[0]))
    for l in range(eta.shape[0]):
        shifted = eta.copy()
        shifted[l] += steps[l]
        jac[:, l] = (residual_fn(shifted) - res0) / steps[l]
    return res0, jac


def adaptive_mu(jac: np.ndarray, gamma: float = 1e-3) -> float:
    """Tikhonov weight from the Jacobian's singular value decay.

    mu = sigma_k^2 for the first singular value below gamma * sigma_1,
    or sigma_min^2 when none falls below, floored away from zero.
    """
    sigma = np.linalg.svd(jac, compute_uv=False)
    below = sigma[sigma < gamma * sigma[0]]
    mu = float(below[0] ** 2) if below.size else float(sigma[-1] ** 2)
    return max(mu, _MU_FLOOR)


def _solve_damped(jac: np.ndarray, res: np.ndarray, mu: float) -> np.ndarray:
    """Solve (J^T J + mu I) delta = -J^T res, retrying once at 10 mu."""
    normal = jac.T @ jac
    rhs = -(jac.T @ res)
    eye = np.eye(normal.shape[0])
    for attempt, weight in enumerate((mu, 10.0 * mu)):
        try:
            delta = sla.cho_solve(sla.cho_factor(normal + weight * eye), rhs)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(delta)):
            if attempt:
                warnings.warn("damped normal equations required a 10x Tikhonov retry")
            return delta
    raise SingularNormalEquations(f"normal equations singular at mu = {mu:.3e}")


def gauss_newton_step(residual_fn, eta: np.ndarray, mu: float,
                      steps: np.ndarray) -> np.ndarray:
    """One damped Gauss-Newton update from a finite-difference Jacobian."""
    res0, jac = fd_jacobian(residual_fn, eta, steps)
    return eta + _solve_damped(jac, res0, mu)


@dataclass(frozen=True)
class InversionConfig:
    """Layer schedule and optimizer knobs.

    layers are the per-layer data depths k_1 <= ... <= k_ell = n_t;
    each layer runs iterations Gauss-Newton steps. fd_step is relative
    (scaled by c_o or rho_o per column); gamma is the singular value
    cutoff for the adaptive Tikhonov weight; rank is the ROM truncation
    request (None selects the spectral default).
    """

    layers: tuple[int, ...]
    iterations: int
    fd_step: float = 1e-3
    gamma: float = 1e-3
    rank: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(k) for k in self.layers))
        if not self.layers or self.layers[0] < 1 or list(self.layers) != sorted(self.layers):
            raise ShapeMismatch(f"layer depths must be nondecreasing and >= 1, got {self.layers}")
        if self.iterations < 1:
            raise ShapeMismatch(f"need iterations >= 1, got {self.iterations}")
        if self.fd_step <= 0 or self.gamma <= 0:
            raise ShapeMismatch("fd_step and gamma must be positive")


@dataclass(frozen=True)
class InversionResult:
    """Final iterate, realized medium, and per-iteration trajectory.

    trajectory rows are (iteration, objective, update_norm, mu,
    wall_time), with the objective evaluated at the iterate the step
    linearized about.
    """

    eta: np.ndarray
    medium: MediumModel
    trajectory: tuple[tuple[int, float, float, float, float], ...]
    final_objective: float
    clamped: bool
    mode: str


def invert(setup: SimulationSetup, param: Parameterization, config: InversionConfig,
           mode: str, data: RomFactor | DataMatrices) -> InversionResult:
    """Layer-stripping Gauss-Newton inversion, ROM or conventional mode.

    Starts from eta = 0 and runs config.iterations steps per layer
    depth. Layer depths deeper than the ROM rank are clipped with a
    warning. The whole loop is deterministic.
    """
    mode = mode.lower()
    if mode not in ("rom", "fwi"):
        raise ShapeMismatch(f"unknown inversion mode {mode!r}")
    if isinstance(data, RomFactor) != (mode == "rom"):
        raise ShapeMismatch(f"mode {mode} does not match data of type {type(data).__name__}")
    if config.layers[-1] != setup.n_t:
        raise ShapeMismatch(
            f"last layer depth {config.layers[-1]} must equal n_t = {setup.n_t}"
        )

    n = param.size
    steps = config.fd_step * np.concatenate(
        [np.full(n, setup.c_o), np.full(n, setup.rho_o)])
    eta = np.zeros(2 * n)
    clamped = False
    trajectory: list[tuple[int, float, float, float, float]] = []
    start = time.perf_counter()
    iteration = 0
    last_value = 0.0

    for depth in config.layers:
        k = depth
        if mode == "rom" and k > data.r:
            warnings.warn(f"layer depth {k} exceeds ROM rank {data.r}; clipping")
            k = data.r

        if mode == "rom":
            def residual_fn(e, k=k):
                return objective_rom(e, data, k, setup, param)[1]
        else:
            def residual_fn(e, k=k):
                return objective_fwi(e, data, k, setup, param)[1]

        for _ in range(config.iterations):
            iteration += 1
            res0, jac = fd_jacobian(residual_fn, eta, steps)
            mu = adaptive_mu(jac, config.gamma)
            delta = _solve_damped(jac, res0, mu)
            eta = eta + delta
            _, step_clamped = realize_medium(eta, param, setup.grid, setup.c_o, setup.rho_o)
            clamped = clamped or step_clamped
            last_value = float(res0 @ res0)
            trajectory.append((iteration, last_value, float(np.linalg.norm(delta)),
                               mu, time.perf_counter() - start))

    final_res = residual_fn(eta)
    medium, _ = realize_medium(eta, param, setup.grid, setup.c_o, setup.rho_o)
    return InversionResult(eta=eta, medium=medium, trajectory=tuple(trajectory),
                           final_objective=float(final_res @ final_res),
                           clamped=clamped, mode=mode)
