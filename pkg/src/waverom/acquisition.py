"""Array acquisition: pulse, collocated sources/receivers, data matrices.

Sensors act as both sources and receivers. Each sensor carries two
polarizations (x and y force bumps on the velocity grid), so an array
of n_s sensors produces n_E = 2 n_s excitations, ordered sensor-major
with the x polarization first. The recorded transfer function is

    A_{e', e}(t) = integral s(-t') < [F_{e'}; 0], psi_e(t - t') > dt'

with the pulse-weighted trapezoidal quadrature matched to the forced
time stepping, and the symmetrized data matrices

    D_j = A(j dt) + A(-j dt)^T

equal the snapshot Gram blocks of the scaled wave field, which is what
makes the mass and stiffness matrices data-driven.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import io as _io
from .errors import (
    Misalignment,
    ReferenceMismatch,
    SensorOutsideDomain,
    ShapeMismatch,
)
from .wavesim import DiscreteOperator, Grid, MediumModel, assemble_operator, propagate_block

_ALIGN_RTOL = 1e-9
_REFERENCE_ATOL = 1e-12
_TRUNCATION_SIGMAS = 3.0


@dataclass(frozen=True)
class Pulse:
    """Modulated Gaussian derivative pulse supported on [-t_s, t_s].

    s(t) = [-a sin(a t) - b t cos(a t)] exp(-b t^2 / 2) inside the
    support and zero outside, with a = 2 pi nu and b = (2 pi bandwidth)^2;
    this is the closed-form derivative of cos(a t) exp(-b t^2 / 2). The
    default half-support t_s = 1.5 / (nu + bandwidth) keeps the truncated
    tails below quadrature accuracy while the spectrum peaks at the
    central frequency nu.
    """

    nu: float
    bandwidth: float
    t_s: float = 0.0

    def __post_init__(self):
        if self.nu <= 0 or self.bandwidth <= 0:
            raise ShapeMismatch(
                f"need positive frequency parameters, got nu={self.nu}, B={self.bandwidth}"
            )
        if self.t_s == 0.0:
            object.__setattr__(self, "t_s", 1.5 / (self.nu + self.bandwidth))
        if self.t_s <= 0:
            raise ShapeMismatch(f"need t_s > 0, got {self.t_s}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        a = 2.0 * np.pi * self.nu
        b = (2.0 * np.pi * self.bandwidth) ** 2
        body = (-a * np.sin(a * t) - b * t * np.cos(a * t)) * np.exp(-b * t * t / 2.0)
        out = np.where(np.abs(t) <= self.t_s, body, 0.0)
        return float(out) if out.ndim == 0 else out


def pulse_eval(pulse: Pulse, t) -> float:
    """Evaluate the probing pulse s(t)."""
    return pulse(t)


@dataclass(frozen=True)
class SourceArray:
    """Collocated source/receiver positions with a common bump radius.

    positions is (n_s, 2) in domain coordinates (x, y) km. radius is the
    Gaussian bump standard deviation; None means one grid cell (the
    larger spacing), resolved when the sources are built.
    """

    positions: np.ndarray
    radius: float | None = None

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "positions", pos)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ShapeMismatch(f"positions must be (n_s, 2), got {pos.shape}")
        if self.radius is not None and self.radius <= 0:
            raise ShapeMismatch(f"need radius > 0, got {self.radius}")

    @property
    def n_sensors(self) -> int:
        return self.positions.shape[0]

    @property
    def n_excitations(self) -> int:
        return 2 * self.positions.shape[0]

    def resolved_radius(self, grid: Grid) -> float:
        return self.radius if self.radius is not None else max(grid.hx, grid.hy)


def _bump(xc: np.ndarray, yc: np.ndarray, x0: float, y0: float, sigma: float) -> np.ndarray:
    xx, yy = np.meshgrid(xc, yc)
    r2 = (xx - x0) ** 2 + (yy - y0) ** 2
    vals = np.exp(-r2 / (2.0 * sigma * sigma))
    vals[r2 > (_TRUNCATION_SIGMAS * sigma) ** 2] = 0.0
    return vals


def build_source(array: SourceArray, grid: Grid, eps: int | None = None) -> np.ndarray:
    """Normalized force bumps on the velocity grid, pressure block zero.

    Excitation 2*i places a truncated Gaussian on the x-velocity faces
    around sensor i, excitation 2*i + 1 on the y-velocity faces. Each
    bump is normalized so its cell-area weighted sum is exactly one,
    the discrete unit point force. With eps given, returns that single
    (n_dof,) column; otherwise the full (n_dof, n_E) block.

    Raises SensorOutsideDomain when a truncated bump support does not
    fit inside the domain.
    """
    sigma = array.resolved_radius(grid)
    x0d, x1d, y0d, y1d = grid.extent
    margin = _TRUNCATION_SIGMAS * sigma
    for k, (sx, sy) in enumerate(array.positions):
        if not (x0d + margin <= sx <= x1d - margin and y0d + margin <= sy <= y1d - margin):
            raise SensorOutsideDomain(
                f"sensor {k} at ({sx}, {sy}) with bump extent {margin} leaves the domain"
            )
    x_faces = grid.origin[0] + np.arange(grid.nx + 1) * grid.hx
    y_faces = grid.origin[1] + np.arange(grid.ny + 1) * grid.hy
    area = grid.cell_area
    f = np.zeros((grid.n_dof, array.n_excitations))
    for k, (sx, sy) in enumerate(array.positions):
        bump_x = _bump(x_faces, grid.y_centers, sx, sy, sigma)
        bump_y = _bump(grid.x_centers, y_faces, sx, sy, sigma)
        if bump_x.sum() == 0.0 or bump_y.sum() == 0.0:
            raise ShapeMismatch(
                f"bump radius {sigma} around sensor {k} covers no velocity grid point"
            )
        f[: grid.n_ux, 2 * k] = (bump_x / (area * bump_x.sum())).ravel()
        f[grid.n_ux: grid.n_ux + grid.n_uy, 2 * k + 1] = (bump_y / (area * bump_y.sum())).ravel()
    if eps is None:
        return f
    if not 0 <= eps < array.n_excitations:
        raise ShapeMismatch(f"excitation index {eps} out of range 0..{array.n_excitations - 1}")
    return f[:, eps]


def _check_reference(medium: MediumModel, grid: Grid, array: SourceArray) -> None:
    """The medium must equal the reference constants under every bump."""
    sigma = array.resolved_radius(grid)
    reach = _TRUNCATION_SIGMAS * sigma + max(grid.hx, grid.hy)
    xx, yy = np.meshgrid(grid.x_centers, grid.y_centers)
    near = np.zeros((grid.ny, grid.nx), dtype=bool)
    for sx, sy in array.positions:
        near |= (xx - sx) ** 2 + (yy - sy) ** 2 <= reach ** 2
    dc = np.max(np.abs(medium.c[near] - medium.c_o)) if near.any() else 0.0
    dr = np.max(np.abs(medium.rho[near] - medium.rho_o)) if near.any() else 0.0
    if dc > _REFERENCE_ATOL * abs(medium.c_o) or dr > _REFERENCE_ATOL * abs(medium.rho_o):
        raise ReferenceMismatch(
            f"medium deviates from the reference near the array (dc={dc:.2e}, drho={dr:.2e})"
        )


@dataclass(frozen=True)
class ResponseRecord:
    """Raw traces and convolved transfer function on aligned time grids.

    raw[m] is the (n_E, n_E) trace < [F_{e'}; 0], psi_e > at the fine
    time -t_s + m tau_f. a_values[i] is A((k_min + i) tau_f), covering
    [-2 t_s, t_max + t_s]; A vanishes below -2 t_s by causality.
    noise_level records the b used to perturb the raw traces (0 for
    clean data).
    """

    raw: np.ndarray
    a_values: np.ndarray
    k_min: int
    tau_f: float
    t_max: float
    pulse: Pulse
    noise_level: float = 0.0
    noise_seed: int | None = None

    def __post_init__(self):
        if self.raw.ndim != 3 or self.raw.shape[1] != self.raw.shape[2]:
            raise ShapeMismatch(f"raw traces must be (steps, n_E, n_E), got {self.raw.shape}")

    @property
    def n_excitations(self) -> int:
        return self.raw.shape[1]

    @property
    def raw_times(self) -> np.ndarray:
        return -self.pulse.t_s + self.tau_f * np.arange(self.raw.shape[0])

    def a_at(self, k: int) -> np.ndarray:
        """A(k tau_f); zero below the causal window, error above it."""
        i = k - self.k_min
        if i < 0:
            return np.zeros((self.n_excitations, self.n_excitations))
        if i >= self.a_values.shape[0]:
            raise Misalignment(f"transfer function not recorded at step {k}")
        return self.a_values[i]

    def save(self, prefix: str) -> None:
        """Write raw traces, A samples, and a metadata header."""
        n_e = self.n_excitations
        _io.write_matrix(f"{prefix}.raw.mat", self.raw.reshape(-1, n_e), n_e)
        _io.write_matrix(f"{prefix}.a.mat", self.a_values.reshape(-1, n_e), n_e)
        _io.write_header(f"{prefix}.hdr", {
            "n_s": n_e // 2, "n_e": n_e, "tau_f": self.tau_f,
            "t_max": self.t_max, "k_min": self.k_min,
            "nu": self.pulse.nu, "bandwidth": self.pulse.bandwidth,
            "t_s": self.pulse.t_s, "noise_level": self.noise_level,
            "seed": -1 if self.noise_seed is None else self.noise_seed,
        })


def load_record(prefix: str) -> ResponseRecord:
    """Read a ResponseRecord written by ResponseRecord.save."""
    meta = _io.read_header(f"{prefix}.hdr")
    raw, n_e = _io.read_matrix(f"{prefix}.raw.mat")
    a_flat, _ = _io.read_matrix(f"{prefix}.a.mat")
    seed = int(meta["seed"])
    return ResponseRecord(
        raw=raw.reshape(-1, n_e, n_e), a_values=a_flat.reshape(-1, n_e, n_e),
        k_min=int(meta["k_min"]), tau_f=float(meta["tau_f"]),
        t_max=float(meta["t_max"]),
        pulse=Pulse(nu=float(meta["nu"]), bandwidth=float(meta["bandwidth"]),
                    t_s=float(meta["t_s"])),
        noise_level=float(meta["noise_level"]),
        noise_seed=None if seed < 0 else seed,
    )


def _pulse_weights(pulse: Pulse, tau_f: float) -> tuple[int, np.ndarray]:
    """Trapezoid nodes over the pulse support; raises on misalignment."""
    n_f = int(round(2 * pulse.t_s / tau_f))
    if n_f < 1 or abs(n_f * tau_f - 2 * pulse.t_s) > _ALIGN_RTOL * 2 * pulse.t_s:
        raise Misalignment(
            f"pulse support 2*t_s = {2 * pulse.t_s} is not an integer multiple of tau_f = {tau_f}"
        )
    w = np.full(n_f + 1, tau_f)
    w[0] = w[-1] = 0.5 * tau_f
    return n_f, w


def _convolve_raw(raw: np.ndarray, pulse: Pulse, tau_f: float) -> tuple[np.ndarray, int]:
    """Convolve the raw traces with the reversed pulse on the fine grid.

    Returns (a_values, k_min) with a_values[i] = A((k_min + i) tau_f).
    Raw samples m correspond to times -t_s + m tau_f, so
    A(k tau_f) = sum_l w_l s(t_s - l tau_f) raw[k + n_f - l], with
    raw treated as zero before the record starts.
    """
    n_f, w = _pulse_weights(pulse, tau_f)
    s_rev = pulse(pulse.t_s - tau_f * np.arange(n_f + 1))
    coeff = w * s_rev
    m_last = raw.shape[0] - 1
    k_min, k_max = -n_f, m_last - n_f
    n_e = raw.shape[1]
    a_values = np.zeros((k_max - k_min + 1, n_e, n_e))
    for i, k in enumerate(range(k_min, k_max + 1)):
        m = k + n_f - np.arange(n_f + 1)
        valid = m >= 0
        a_values[i] = np.einsum("l,lab->ab", coeff[valid], raw[m[valid]])
    return a_values, k_min


def record_response(medium: MediumModel, grid: Grid, array: SourceArray, pulse: Pulse,
                    t_max: float, tau_f: float, check_reference: bool = True) -> ResponseRecord:
    """Simulate the array data: forced window, free coasting, convolution.

    The wave field for all excitations is advanced with the exact
    propagator and trapezoidal forcing over [-t_s, t_s], then coasted
    freely, recording the receiver traces every fine step until the
    convolved transfer function covers [-2 t_s, t_max + t_s].

    Raises ReferenceMismatch when the medium is not the reference
    constants near the array (skipped for trial media from inversion
    iterates, whose smooth basis tails never vanish exactly), and
    Misalignment on incompatible time grids.
    """
    if t_max <= 0:
        raise ShapeMismatch(f"need t_max > 0, got {t_max}")
    if check_reference:
        _check_reference(medium, grid, array)
    n_f, _ = _pulse_weights(pulse, tau_f)
    source = build_source(array, grid)
    L = assemble_operator(medium, grid)

    # Raw record up to t_max + 2 t_s so A reaches t_max + t_s; two spare
    # steps absorb rounding in later alignment checks.
    m_total = int(np.ceil((t_max + pulse.t_s) / tau_f)) + n_f + 2
    t_nodes = -pulse.t_s + tau_f * np.arange(n_f + 1)
    s_vals = pulse(t_nodes)
    area = grid.cell_area
    raw = np.empty((m_total + 1, array.n_excitations, array.n_excitations))
    psi = np.zeros_like(source)
    raw[0] = area * (source.T @ psi)
    for m in range(m_total):
        if m < n_f:
            psi = propagate_block(L, psi + (0.5 * tau_f * s_vals[m]) * source, tau_f)
            psi += (0.5 * tau_f * s_vals[m + 1]) * source
        else:
            psi = propagate_block(L, psi, tau_f)
        raw[m + 1] = area * (source.T @ psi)
    a_values, k_min = _convolve_raw(raw, pulse, tau_f)
    return ResponseRecord(raw=raw, a_values=a_values, k_min=k_min, tau_f=tau_f,
                          t_max=t_max, pulse=pulse)


def response_norm(record: ResponseRecord, traces: np.ndarray | None = None) -> float:
    """Trapezoidal L2 norm of raw traces over the data window [0, t_max]."""
    traces = record.raw if traces is None else traces
    times = record.raw_times
    mask = (times >= 0.0) & (times <= record.t_max + _ALIGN_RTOL)
    sq = np.einsum("mab,mab->m", traces[mask], traces[mask])
    return float(np.sqrt(np.trapezoid(sq, dx=record.tau_f)))


def add_noise(record: ResponseRecord, b: float, seed: int) -> ResponseRecord:
    """Additive Gaussian noise on the raw traces, calibrated exactly to b.

    An iid standard normal draw on the full raw record is rescaled so
    its trapezoidal norm over the data window [0, t_max] equals b times
    the clean signal norm, then the transfer function is re-convolved
    from the noisy traces (the data matrices thus see the convolved
    noise). b = 0 returns the record unchanged. The draw is
    deterministic in seed.
    """
    if b < 0:
        raise ShapeMismatch(f"need b >= 0, got {b}")
    if b == 0.0:
        return record
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(record.raw.shape)
    scale = b * response_norm(record) / response_norm(record, noise)
    raw = record.raw + scale * noise
    a_values, k_min = _convolve_raw(raw, record.pulse, record.tau_f)
    return replace(record, raw=raw, a_values=a_values, k_min=k_min,
                   noise_level=b, noise_seed=seed)


@dataclass(frozen=True)
class DataMatrices:
    """Symmetrized data matrices D_0..D_{n_t} (one extra for stiffness)."""

    matrices: np.ndarray
    dt: float
    n_t: int
    noise_level: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        object.__setattr__(self, "matrices", m)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise ShapeMismatch(f"matrices must be (n_t + 1, n_E, n_E), got {m.shape}")
        if m.shape[0] != self.n_t + 1:
            raise ShapeMismatch(
                f"expected {self.n_t + 1} matrices for n_t = {self.n_t}, got {m.shape[0]}"
            )
        if self.dt <= 0 or self.n_t < 1:
            raise ShapeMismatch(f"need dt > 0 and n_t >= 1, got dt={self.dt}, n_t={self.n_t}")

    @property
    def n_excitations(self) -> int:
        return self.matrices.shape[1]

    def save(self, prefix: str) -> None:
        n_e = self.n_excitations
        _io.write_matrix(f"{prefix}.d.mat", self.matrices.reshape(-1, n_e), n_e)
        _io.write_header(f"{prefix}.hdr", {
            "n_e": n_e, "n_t": self.n_t, "dt": self.dt,
            "noise_level": self.noise_level,
        })


def load_data_matrices(prefix: str) -> DataMatrices:
    """Read DataMatrices written by DataMatrices.save."""
    meta = _io.read_header(f"{prefix}.hdr")
    flat, n_e = _io.read_matrix(f"{prefix}.d.mat")
    return DataMatrices(matrices=flat.reshape(-1, n_e, n_e), dt=float(meta["dt"]),
                        n_t=int(meta["n_t"]), noise_level=float(meta["noise_level"]))


def data_matrices(record: ResponseRecord, dt: float, n_t: int) -> DataMatrices:
    """Sample D_j = A(j dt) + A(-j dt)^T for j = 0..n_t.

    Entries for -j dt below the causal window are zero, so late rows
    reduce to A(j dt) alone. dt must be an integer multiple of tau_f
    and the record must cover n_t dt; otherwise Misalignment.
    """
    if n_t < 1:
        raise ShapeMismatch(f"need n_t >= 1, got {n_t}")
    steps = dt / record.tau_f
    if abs(steps - round(steps)) > _ALIGN_RTOL * steps:
        raise Misalignment(
            f"dt = {dt} is not an integer multiple of tau_f = {record.tau_f}"
        )
    steps = int(round(steps))
    n_e = record.n_excitations
    out = np.empty((n_t + 1, n_e, n_e))
    for j in range(n_t + 1):
        out[j] = record.a_at(j * steps) + record.a_at(-j * steps).T
    return DataMatrices(matrices=out, dt=dt, n_t=n_t, noise_level=record.noise_level)
