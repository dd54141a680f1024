"""Shared fixtures: a fast well-conditioned instance and the comparison run."""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from waverom.acquisition import Pulse, SourceArray, data_matrices, record_response
from waverom.harness import recipe_two_inclusions, run_experiment, two_inclusions_medium
from waverom.inversion import Parameterization, realize_medium
from waverom.rom import SimulationSetup, assemble_mass, assemble_stiffness, build_rom
from waverom.wavesim import Grid, MediumModel


@dataclass(frozen=True)
class DeskInstance:
    """A small, well-conditioned end-to-end problem with its data products."""

    grid: Grid
    medium: object
    array: SourceArray
    pulse: Pulse
    n_t: int
    dt: float
    tau_f: float
    record: object
    data: object
    M: object
    S: object
    factor: object
    build_seconds: float

    @property
    def setup(self) -> SimulationSetup:
        return SimulationSetup(grid=self.grid, array=self.array, pulse=self.pulse,
                               n_t=self.n_t, dt=self.dt, tau_f=self.tau_f,
                               c_o=self.medium.c_o, rho_o=self.medium.rho_o)


def build_desk_instance(n_t: int = 10, dt: float = 0.1) -> DeskInstance:
    """Three sensors over the two-inclusion medium on a 36x24 grid.

    dt = 0.1 decorrelates consecutive snapshots, keeping the mass matrix
    condition number near 1e3 so full-rank factorizations stay clean.
    """
    grid = Grid(nx=36, ny=24, hx=3.0 / 36, hy=2.0 / 24)
    medium = two_inclusions_medium(grid)
    pulse = Pulse(nu=6.0, bandwidth=4.0)
    tau_f = dt / 10.0
    array = SourceArray(np.array([[0.9, 1.0], [1.5, 1.0], [2.1, 1.0]]),
                        radius=grid.hx / 2.0)
    start = time.perf_counter()
    record = record_response(medium, grid, array, pulse,
                             t_max=(n_t - 1) * dt, tau_f=tau_f)
    data = data_matrices(record, dt, n_t)
    M = assemble_mass(data)
    S = assemble_stiffness(data)
    factor = build_rom(M, S, r=n_t)
    elapsed = time.perf_counter() - start
    return DeskInstance(grid=grid, medium=medium, array=array, pulse=pulse,
                        n_t=n_t, dt=dt, tau_f=tau_f, record=record, data=data,
                        M=M, S=S, factor=factor, build_seconds=elapsed)


@pytest.fixture(scope="session")
def desk() -> DeskInstance:
    return build_desk_instance()


@dataclass(frozen=True)
class GuessInstance:
    """Small instance whose true medium lies exactly in a coarse basis."""

    setup: SimulationSetup
    param: Parameterization
    eta_true: np.ndarray
    truth: MediumModel
    data: object
    factor: object


def build_guess_instance(eta_scale: float, seed: int = 3) -> GuessInstance:
    """Two sensors over a random basis-representable medium, n_t = 6."""
    grid = Grid(nx=20, ny=14, hx=1.5 / 20, hy=1.0 / 14)
    array = SourceArray(np.array([[0.4, 0.8], [1.1, 0.8]]), radius=0.05)
    pulse = Pulse(nu=6.0, bandwidth=4.0)
    param = Parameterization(n_bx=5, n_by=3)
    rng = np.random.default_rng(seed)
    eta = eta_scale * rng.standard_normal(2 * param.size)
    truth, clamped = realize_medium(eta, param, grid, 1.0, 1.0)
    assert not clamped
    setup = SimulationSetup(grid=grid, array=array, pulse=pulse, n_t=6, dt=0.12,
                            tau_f=0.015, c_o=1.0, rho_o=1.0)
    record = record_response(truth, grid, array, pulse, t_max=0.65, tau_f=0.015,
                             check_reference=False)
    data = data_matrices(record, setup.dt, setup.n_t)
    factor = build_rom(assemble_mass(data), assemble_stiffness(data), r=setup.n_t)
    return GuessInstance(setup=setup, param=param, eta_true=eta, truth=truth,
                         data=data, factor=factor)


@pytest.fixture(scope="session")
def guess_instance() -> GuessInstance:
    return build_guess_instance(eta_scale=0.12)


@pytest.fixture(scope="session")
def homogeneous_instance() -> GuessInstance:
    return build_guess_instance(eta_scale=0.0)


@pytest.fixture(scope="session")
def comparison_run(tmp_path_factory):
    """The full two-inclusion comparison (both inversion modes, 15 iterations).

    This is the long fixture (about 12 minutes); everything comparative
    reads from its persisted artifacts.
    """
    outdir = tmp_path_factory.mktemp("two-inclusions")
    exp = recipe_two_inclusions()
    start = time.perf_counter()
    report = run_experiment(exp, outdir)
    elapsed = time.perf_counter() - start
    return exp, report, outdir, elapsed
