"""Array acquisition: pulse, source bumps, response recording, data matrices."""

import numpy as np
import pytest

from waverom.acquisition import (
    DataMatrices,
    Pulse,
    SourceArray,
    add_noise,
    build_source,
    data_matrices,
    load_data_matrices,
    load_record,
    pulse_eval,
    record_response,
)
from waverom.errors import (
    Misalignment,
    ReferenceMismatch,
    SensorOutsideDomain,
    ShapeMismatch,
)
from waverom.rom import assemble_mass, assemble_stiffness
from waverom.wavesim import (
    Grid,
    MediumModel,
    assemble_operator,
    initial_state,
    propagate_snapshots,
    snapshot_gram,
)

PULSE = Pulse(nu=6.0, bandwidth=4.0)
TAU_F = 0.015


def homogeneous(grid: Grid) -> MediumModel:
    shape = (grid.ny, grid.nx)
    return MediumModel(np.ones(shape), np.ones(shape), 1.0, 1.0)


def two_sensor_grid() -> tuple[Grid, MediumModel, SourceArray]:
    grid = Grid(nx=24, ny=16, hx=1.5 / 24, hy=1.0 / 16)
    array = SourceArray(np.array([[0.2, 0.8], [1.3, 0.8]]))
    return grid, homogeneous(grid), array


@pytest.fixture(scope="module")
def record():
    """Homogeneous two-sensor record reused by the sampling tests."""
    grid, medium, array = two_sensor_grid()
    return record_response(medium, grid, array, PULSE, t_max=0.6, tau_f=TAU_F)


def a_times(rec) -> np.ndarray:
    return (rec.k_min + np.arange(rec.a_values.shape[0])) * rec.tau_f


class TestPulse:
    def test_zero_outside_support(self):
        assert pulse_eval(PULSE, 2 * PULSE.t_s) == 0.0
        assert pulse_eval(PULSE, -2 * PULSE.t_s) == 0.0
        assert pulse_eval(PULSE, PULSE.t_s + 1e-9) == 0.0

    def test_zero_at_origin(self):
        assert pulse_eval(PULSE, 0.0) == 0.0

    def test_default_half_support(self):
        assert PULSE.t_s == pytest.approx(0.15, rel=1e-12)
        assert Pulse(nu=6.0, bandwidth=4.0, t_s=0.2).t_s == 0.2

    def test_matches_envelope_derivative(self):
        # Oracle: central difference of cos(a t) exp(-b t^2 / 2).
        a = 2 * np.pi * PULSE.nu
        b = (2 * np.pi * PULSE.bandwidth) ** 2
        envelope = lambda t: np.cos(a * t) * np.exp(-b * t * t / 2)
        ts = np.linspace(-0.12, 0.12, 9)
        h = 1e-5
        numeric = (envelope(ts + h) - envelope(ts - h)) / (2 * h)
        np.testing.assert_allclose(PULSE(ts), numeric, atol=1e-4)

    def test_spectrum_peak_matches_closed_form(self):
        # The derivative weights the envelope spectrum by |omega|, so the
        # peak sits above the carrier at the root of omega^2 - a omega - b.
        a = 2 * np.pi * PULSE.nu
        b = (2 * np.pi * PULSE.bandwidth) ** 2
        expected = (a + np.sqrt(a * a + 4 * b)) / 2 / (2 * np.pi)
        dt = 1.0 / 2048
        ts = np.arange(-4.0, 4.0, dt)
        spectrum = np.abs(np.fft.rfft(PULSE(ts)))
        peak = np.fft.rfftfreq(ts.size, dt)[np.argmax(spectrum)]
        assert abs(peak - expected) <= 0.5
        assert PULSE.nu <= peak <= PULSE.nu + PULSE.bandwidth

    def test_rejects_nonpositive_parameters(self):
        with pytest.raises(ShapeMismatch):
            Pulse(nu=0.0, bandwidth=4.0)
        with pytest.raises(ShapeMismatch):
            Pulse(nu=6.0, bandwidth=-1.0)
        with pytest.raises(ShapeMismatch):
            Pulse(nu=6.0, bandwidth=4.0, t_s=-0.1)


class TestSourceArray:
    def test_counts_and_default_radius(self):
        grid = Grid(nx=10, ny=8, hx=0.1, hy=0.05)
        array = SourceArray(np.array([[0.4, 0.3], [0.6, 0.3], [0.5, 0.5]]))
        assert array.n_sensors == 3
        assert array.n_excitations == 6
        assert array.resolved_radius(grid) == 0.1
        assert SourceArray(np.array([[0.4, 0.3]]), radius=0.02).resolved_radius(grid) == 0.02

    def test_validation(self):
        with pytest.raises(ShapeMismatch):
            SourceArray(np.zeros((2, 3)))
        with pytest.raises(ShapeMismatch):
            SourceArray(np.array([[0.5, 0.5]]), radius=0.0)


class TestBuildSource:
    def test_discrete_unit_integral(self):
        grid, _, array = two_sensor_grid()
        f = build_source(array, grid)
        assert f.shape == (grid.n_dof, 4)
        n_ux, n_uy = grid.n_ux, grid.n_uy
        for k in range(array.n_sensors):
            x_col, y_col = f[:, 2 * k], f[:, 2 * k + 1]
            assert abs(grid.cell_area * x_col[:n_ux].sum() - 1.0) <= 1e-8
            assert abs(grid.cell_area * y_col[n_ux:n_ux + n_uy].sum() - 1.0) <= 1e-8
            assert np.all(x_col[n_ux:] == 0.0)
            assert np.all(y_col[:n_ux] == 0.0)
            assert np.all(y_col[n_ux + n_uy:] == 0.0)

    def test_single_column_matches_block(self):
        grid, _, array = two_sensor_grid()
        f = build_source(array, grid)
        np.testing.assert_array_equal(build_source(array, grid, eps=3), f[:, 3])
        with pytest.raises(ShapeMismatch):
            build_source(array, grid, eps=4)

    def test_mirrored_sensors_give_mirrored_blocks(self):
        grid = Grid(nx=24, ny=16, hx=1.5 / 24, hy=1.0 / 16)
        array = SourceArray(np.array([[0.5, 0.75], [1.0, 0.75]]))
        f = build_source(array, grid)
        n_ux, n_uy = grid.n_ux, grid.n_uy
        left_x = f[:n_ux, 0].reshape(grid.ny, grid.nx + 1)
        right_x = f[:n_ux, 2].reshape(grid.ny, grid.nx + 1)
        np.testing.assert_allclose(right_x, left_x[:, ::-1], atol=1e-12 * left_x.max())
        left_y = f[n_ux:n_ux + n_uy, 1].reshape(grid.ny + 1, grid.nx)
        right_y = f[n_ux:n_ux + n_uy, 3].reshape(grid.ny + 1, grid.nx)
        np.testing.assert_allclose(right_y, left_y[:, ::-1], atol=1e-12 * left_y.max())

    def test_small_radius_responses_are_cauchy(self):
        # Radius halvings toward the point-force limit. Sensors sit on
        # cell corners so both polarizations collapse onto a symmetric
        # pair of faces; the last refinement pair must agree within 2%.
        n = 32
        h = 1.0 / n
        grid = Grid(nx=n, ny=n, hx=h, hy=h)
        medium = homogeneous(grid)
        positions = np.array([[12 * h, 22 * h], [20 * h, 22 * h]])
        diffs = []
        previous = None
        for radius in (4 * h / 3, 2 * h / 3, h / 3, h / 6):
            array = SourceArray(positions, radius=radius)
            rec = record_response(medium, grid, array, PULSE, t_max=0.5, tau_f=TAU_F)
            if previous is not None:
                diffs.append(np.max(np.abs(rec.a_values - previous))
                             / np.max(np.abs(rec.a_values)))
            previous = rec.a_values
        assert diffs == sorted(diffs, reverse=True)
        assert diffs[-1] <= 0.02

    def test_sensor_near_boundary_rejected(self):
        grid = Grid(nx=10, ny=10, hx=0.1, hy=0.1)
        with pytest.raises(SensorOutsideDomain):
            build_source(SourceArray(np.array([[0.05, 0.5]])), grid)
        with pytest.raises(SensorOutsideDomain):
            build_source(SourceArray(np.array([[0.5, 0.5]]), radius=0.2), grid)

    def test_unresolvable_radius_rejected(self):
        grid = Grid(nx=32, ny=32, hx=1 / 32, hy=1 / 32)
        array = SourceArray(np.array([[0.35, 0.7]]), radius=1 / 32 / 16)
        with pytest.raises(ShapeMismatch):
            build_source(array, grid)


class TestRecordResponse:
    def test_entries_before_any_arrival_vanish(self, record):
        # Sensors are 1.1 apart with bump supports 0.725 apart, so no
        # cross signal can exist before t = 0.425; the window is cut at
        # 0.1 to stay clear of the lattice tails below the front.
        times = a_times(record)
        amax = np.max(np.abs(record.a_values))
        early = record.a_values[times <= 0.1]
        assert np.max(np.abs(early[:, 0:2, 2:4])) <= 1e-12 * amax
        assert np.max(np.abs(early[:, 2:4, 0:2])) <= 1e-12 * amax

    def test_reciprocity(self, record):
        a = record.a_values
        asym = np.linalg.norm(a - a.transpose(0, 2, 1)) / np.linalg.norm(a)
        assert asym <= 1e-6

    def test_diagonal_peaks_near_time_zero(self, record):
        times = a_times(record)
        for e in range(record.n_excitations):
            t_peak = times[np.argmax(np.abs(record.a_values[:, e, e]))]
            assert abs(t_peak) <= 2 * PULSE.t_s

    def test_reference_mismatch_at_sensor(self):
        grid, medium, array = two_sensor_grid()
        c = medium.c.copy()
        c[12, 3] = 1.1
        bumped = MediumModel(c, medium.rho, 1.0, 1.0)
        with pytest.raises(ReferenceMismatch):
            record_response(bumped, grid, array, PULSE, t_max=3 * TAU_F, tau_f=TAU_F)
        rec = record_response(bumped, grid, array, PULSE, t_max=3 * TAU_F,
                              tau_f=TAU_F, check_reference=False)
        assert rec.n_excitations == 4

    def test_perturbation_away_from_sensors_allowed(self):
        grid, medium, array = two_sensor_grid()
        rho = medium.rho.copy()
        rho[2, 12] = 1.5
        bumped = MediumModel(medium.c, rho, 1.0, 1.0)
        rec = record_response(bumped, grid, array, PULSE, t_max=3 * TAU_F, tau_f=TAU_F)
        assert rec.t_max == 3 * TAU_F

    def test_transfer_window(self, record):
        assert record.k_min == -round(2 * PULSE.t_s / TAU_F)
        np.testing.assert_array_equal(record.a_at(record.k_min - 5),
                                      np.zeros((4, 4)))
        assert np.all(record.a_at(record.k_min) == 0.0)
        with pytest.raises(Misalignment):
            record.a_at(record.a_values.shape[0] + record.k_min)

    def test_misaligned_fine_step(self):
        grid, medium, array = two_sensor_grid()
        with pytest.raises(Misalignment):
            record_response(medium, grid, array, PULSE, t_max=0.3,
                            tau_f=2 * PULSE.t_s / 7.3)
        with pytest.raises(ShapeMismatch):
            record_response(medium, grid, array, PULSE, t_max=0.0, tau_f=TAU_F)

    def test_save_load_round_trip(self, record, tmp_path):
        prefix = str(tmp_path / "rec")
        record.save(prefix)
        loaded = load_record(prefix)
        np.testing.assert_array_equal(loaded.raw, record.raw)
        np.testing.assert_array_equal(loaded.a_values, record.a_values)
        assert loaded.k_min == record.k_min
        assert loaded.tau_f == record.tau_f
        assert loaded.t_max == record.t_max
        assert loaded.pulse == record.pulse
        assert loaded.noise_level == 0.0
        assert loaded.noise_seed is None


class TestDataMatrices:
    def test_matches_snapshot_gram(self, record):
        # Oracle: the brute-force snapshot Gram of the simulated field;
        # the sampled data must assemble into the same mass and
        # stiffness matrices without ever seeing the wave field.
        grid, medium, array = two_sensor_grid()
        dt, n_t = 0.15, 4
        data = data_matrices(record, dt, n_t)
        L = assemble_operator(medium, grid)
        phi0 = initial_state(L, build_source(array, grid), PULSE,
                             tau=PULSE.t_s, tau_f=TAU_F)
        snaps = propagate_snapshots(L, phi0, n_t, dt, TAU_F, tau=PULSE.t_s)
        mass_oracle, stiffness_oracle = snapshot_gram(snaps)
        mass, stiffness = assemble_mass(data), assemble_stiffness(data)
        scale = np.max(np.abs(mass_oracle.data))
        assert np.max(np.abs(mass.data - mass_oracle.data)) <= 1e-6 * scale
        assert np.max(np.abs(stiffness.data - stiffness_oracle.data)) <= 1e-6 * scale
        for j in range(n_t):
            block = mass_oracle.data[0:4, 4 * j:4 * (j + 1)]
            assert np.max(np.abs(data.matrices[j] - block)) <= 1e-6 * scale

    def test_late_rows_reduce_to_forward_samples(self, record):
        dt, n_t = 0.15, 4
        data = data_matrices(record, dt, n_t)
        for j in (3, 4):
            k = round(j * dt / TAU_F)
            assert j * dt > 2 * PULSE.t_s
            forward = record.a_at(k)
            assert np.linalg.norm(record.a_at(-k)) <= 1e-10 * np.linalg.norm(forward)
            np.testing.assert_array_equal(data.matrices[j], forward)

    def test_zero_lag_positive_semidefinite(self, record):
        eigs = np.linalg.eigvalsh(data_matrices(record, 0.15, 4).matrices[0])
        assert eigs[0] >= -1e-10 * eigs[-1]

    def test_noiseless_symmetry(self, record):
        data = data_matrices(record, 0.15, 4)
        for m in data.matrices:
            assert np.linalg.norm(m - m.T) <= 1e-6 * np.linalg.norm(m)

    def test_misalignment(self, record):
        with pytest.raises(Misalignment):
            data_matrices(record, 0.0221, 3)
        with pytest.raises(Misalignment):
            data_matrices(record, 0.15, 7)

    def test_validation(self):
        with pytest.raises(ShapeMismatch):
            DataMatrices(matrices=np.zeros((3, 4, 4)), dt=0.1, n_t=3)
        with pytest.raises(ShapeMismatch):
            DataMatrices(matrices=np.zeros((4, 4, 2)), dt=0.1, n_t=3)
        with pytest.raises(ShapeMismatch):
            DataMatrices(matrices=np.zeros((4, 4, 4)), dt=-0.1, n_t=3)

    def test_save_load_round_trip(self, record, tmp_path):
        data = data_matrices(record, 0.15, 4)
        prefix = str(tmp_path / "dmat")
        data.save(prefix)
        loaded = load_data_matrices(prefix)
        np.testing.assert_array_equal(loaded.matrices, data.matrices)
        assert loaded.dt == data.dt
        assert loaded.n_t == data.n_t
        assert loaded.noise_level == data.noise_level


class TestAddNoise:
    def test_zero_level_returns_record_unchanged(self, record):
        assert add_noise(record, 0.0, seed=1) is record

    def test_deterministic_in_seed(self, record):
        first = add_noise(record, 1e-2, seed=11)
        second = add_noise(record, 1e-2, seed=11)
        other = add_noise(record, 1e-2, seed=12)
        np.testing.assert_array_equal(first.raw, second.raw)
        np.testing.assert_array_equal(first.a_values, second.a_values)
        assert not np.array_equal(first.raw, other.raw)

    @pytest.mark.parametrize("level", [1e-2, 3e-2])
    def test_realized_ratio_matches_level(self, record, level):
        noisy = add_noise(record, level, seed=5)
        times = record.raw_times
        window = (times >= 0.0) & (times <= record.t_max + 1e-12)
        delta = (noisy.raw - record.raw)[window]
        clean = record.raw[window]
        ratio = np.sqrt(
            np.trapezoid(np.sum(delta * delta, axis=(1, 2)), dx=TAU_F)
            / np.trapezoid(np.sum(clean * clean, axis=(1, 2)), dx=TAU_F))
        assert 0.99 * level <= ratio <= 1.01 * level

    def test_noisy_transfer_function_reconvolved(self, record):
        noisy = add_noise(record, 1e-2, seed=5)
        assert noisy.noise_level == 1e-2
        assert noisy.noise_seed == 5
        assert noisy.a_values.shape == record.a_values.shape
        assert not np.array_equal(noisy.a_values, record.a_values)

    def test_negative_level_rejected(self, record):
        with pytest.raises(ShapeMismatch):
            add_noise(record, -1e-3, seed=0)
