"""Experiment recipes, end-to-end runs, persistence, and reports.

An Experiment bundles everything a run needs: the true medium, the
acquisition geometry, the time grids, the noise, and the inversion
schedule. run_experiment generates the data, builds the ROM, runs both
inversion modes, and writes a report directory whose artifacts (binary
matrices, PGM images, CSV trajectories, JSON manifest) are fully
regenerable from the persisted inputs and seed.

True media are procedural: disjoint smooth inclusions, crack-like thin
slabs over a depth gradient, and a layered-wedge stand-in for external
velocity/density models (which can also be supplied as files). All
profiles have exactly compact support so the medium equals the
reference constants near the array, as the data model requires.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io as _io
from .acquisition import (
    DataMatrices,
    Pulse,
    ResponseRecord,
    SourceArray,
    add_noise,
    data_matrices,
    load_data_matrices,
    load_record,
    record_response,
    response_norm,
)
from .errors import ConfigurationError, FormatError, NonPositiveField, ShapeMismatch
from .inversion import InversionConfig, InversionResult, Parameterization, invert
from .rom import RomFactor, SimulationSetup, assemble_mass, assemble_stiffness, build_rom, load_rom
from .wavesim import Grid, MediumModel, save_medium

_DEFAULT_NU = 6.0
_DEFAULT_BANDWIDTH = 4.0


def _smoothstep(t: np.ndarray) -> np.ndarray:
    """Quintic ramp: exactly 0 for t <= 0, exactly 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


def _smooth_box(xx: np.ndarray, yy: np.ndarray, x0: float, x1: float,
                y0: float, y1: float, margin: float) -> np.ndarray:
    """Compactly supported plateau on [x0, x1] x [y0, y1].

    Equals 1 on the box shrunk by margin, 0 outside the box, with C^2
    ramps in between; exact zeros keep the reference region clean.
    """
    px = _smoothstep((xx - x0) / margin) * _smoothstep((x1 - xx) / margin)
    py = _smoothstep((yy - y0) / margin) * _smoothstep((y1 - yy) / margin)
    return px * py


def _center_mesh(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(grid.x_centers, grid.y_centers)


TWO_INCLUSION_CENTERS = ((1.0, 0.35), (2.0, 0.35))
"""Speed and density inclusion centers of the two-inclusion model."""

_INCLUSION_LOBE_WIDTH = 0.25
_INCLUSION_LOBE_HALF_SPACING = 0.125


def _rounded_rectangle(xx: np.ndarray, yy: np.ndarray, cx: float, cy: float) -> np.ndarray:
    """Rounded-rectangle blob from four Gaussian lobes, peak one at center."""
    w, half = _INCLUSION_LOBE_WIDTH, _INCLUSION_LOBE_HALF_SPACING
    sx = sum(np.exp(-((xx - cx - d) ** 2) / (2 * w * w)) for d in (-half, half))
    sy = sum(np.exp(-((yy - cy - d) ** 2) / (2 * w * w)) for d in (-half, half))
    peak = (2.0 * np.exp(-half * half / (2 * w * w))) ** 2
    return sx * sy / peak


def two_inclusions_medium(grid: Grid, c_o: float = 1.0, rho_o: float = 1.0,
                          contrast: float = 1.5) -> MediumModel:
    """Disjoint rectangular inclusions: one in speed, one in density.

    Both sit below the 1 km sensor line, the speed inclusion on the
    left, the density inclusion on the right. Each is a rounded
    rectangle built from Gaussian lobes of the same width as the coarse
    inversion bumps, so the model stays resolvable in the search space,
    and a smooth vertical cutoff keeps the band the sensors sit in at
    the exact reference constants.
    """
    xx, yy = _center_mesh(grid)
    cutoff = _smoothstep((0.80 - yy) / 0.10)
    (cx_c, cy_c), (cx_r, cy_r) = TWO_INCLUSION_CENTERS
    bump_c = _rounded_rectangle(xx, yy, cx_c, cy_c) * cutoff
    bump_r = _rounded_rectangle(xx, yy, cx_r, cy_r) * cutoff
    c = c_o * (1.0 + (contrast - 1.0) * bump_c)
    rho = rho_o * (1.0 + (contrast - 1.0) * bump_r)
    return MediumModel(c, rho, c_o, rho_o)


def cracks_medium(grid: Grid, variant: int, c_o: float = 1.0,
                  rho_o: float = 1.0) -> MediumModel:
    """Thin high-contrast slabs over smooth depth gradients.

    The background speed ramps from c_o to 1.5 c_o and the density from
    rho_o to 1.2 rho_o below the constant near-array zone. Variant 1
    puts the speed crack (2 km/s scale) on the left and the density
    crack (1.5 g/cm^3 scale) on the right; variant 2 interchanges which
    field carries which crack.
    """
    if variant not in (1, 2):
        raise ConfigurationError(f"crack variant must be 1 or 2, got {variant}")
    xx, yy = _center_mesh(grid)
    ramp = _smoothstep((yy - 0.30) / 0.70)
    c_bg = c_o * (1.0 + 0.5 * ramp)
    rho_bg = rho_o * (1.0 + 0.2 * ramp)
    crack_left = _smooth_box(xx, yy, 0.45, 1.15, 0.52, 0.68, 0.05)
    crack_right = _smooth_box(xx, yy, 1.35, 2.05, 0.72, 0.88, 0.05)
    c_crack, rho_crack = (crack_left, crack_right) if variant == 1 else (crack_right, crack_left)
    c = c_bg + (2.0 * c_o - c_bg) * c_crack
    rho = rho_bg + (1.5 * rho_o - rho_bg) * rho_crack
    return MediumModel(c, rho, c_o, rho_o)


def layered_medium(grid: Grid, c_o: float = 1.5, rho_o: float = 1.8) -> MediumModel:
    """Procedural dipping-layer model with a pinch-out wedge.

    A stand-in for externally supplied layered velocity/density
    sections: speed steps through dipping layers from c_o to 3 c_o with
    a wedge discontinuity, density follows a quarter-power trend. The
    top layer is the homogeneous reference so arrays near the surface
    see reference constants.
    """
    xx, yy = _center_mesh(grid)
    x0, x1, y0, y1 = grid.extent
    depth = (yy - y0) / (y1 - y0)
    lateral = (xx - x0) / (x1 - x0)
    interface = depth + 0.08 * lateral
    c = np.full((grid.ny, grid.nx), float(c_o))
    for level, speed in ((0.30, 1.4), (0.45, 1.8), (0.60, 2.2), (0.78, 2.6)):
        c = np.where(interface > level, speed * c_o / 1.5, c)
    wedge = (depth > 0.5 + 0.35 * lateral) & (depth < 0.62 + 0.35 * lateral)
    c = np.where(wedge, 2.0 * c_o, c)
    rho = rho_o * (c / c_o) ** 0.25
    return MediumModel(c, rho, c_o, rho_o)


def homogeneous_medium(grid: Grid, c_o: float = 1.0, rho_o: float = 1.0) -> MediumModel:
    shape = (grid.ny, grid.nx)
    return MediumModel(np.full(shape, c_o), np.full(shape, rho_o), c_o, rho_o)


def _line_array(x_start: float, x_end: float, depth: float, n_sensors: int,
                radius: float | None) -> SourceArray:
    xs = np.linspace(x_start, x_end, n_sensors)
    return SourceArray(np.column_stack([xs, np.full(n_sensors, depth)]), radius=radius)


@dataclass(frozen=True)
class Experiment:
    """A fully specified end-to-end run."""

    name: str
    grid: Grid
    medium: MediumModel
    array: SourceArray
    pulse: Pulse
    n_t: int
    dt: float
    tau_f: float
    param: Parameterization
    config: InversionConfig
    noise_level: float = 0.0
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.n_t < 2:
            raise ConfigurationError(f"need n_t >= 2, got {self.n_t}")
        steps = self.dt / self.tau_f
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ConfigurationError(
                f"dt = {self.dt} must be an integer multiple of tau_f = {self.tau_f}"
            )
        if self.dt > self.pulse.t_s + 1e-12:
            raise ConfigurationError(
                f"dt = {self.dt} must not exceed the pulse half-support {self.pulse.t_s} "
                "(the transfer function window must cover the extra stiffness sample)"
            )
        if self.config.layers[-1] != self.n_t:
            raise ConfigurationError(
                f"last layer depth {self.config.layers[-1]} must equal n_t = {self.n_t}"
            )
        x0, x1, y0, y1 = self.grid.extent
        pos = self.array.positions
        if not (np.all(pos[:, 0] > x0) and np.all(pos[:, 0] < x1)
                and np.all(pos[:, 1] > y0) and np.all(pos[:, 1] < y1)):
            raise ConfigurationError("sensors must lie strictly inside the domain")

    @property
    def t_max(self) -> float:
        """End of the data-fit window."""
        return (self.n_t - 1) * self.dt

    def setup(self) -> SimulationSetup:
        return SimulationSetup(
            grid=self.grid, array=self.array, pulse=self.pulse, n_t=self.n_t,
            dt=self.dt, tau_f=self.tau_f, c_o=self.medium.c_o, rho_o=self.medium.rho_o,
        )


def _default_times(pulse: Pulse) -> tuple[float, float]:
    dt = 1.0 / (2.3 * (pulse.nu + pulse.bandwidth))
    return dt, dt / 10.0


def recipe_two_inclusions(resolution_factor: float = 0.5, n_sensors: int = 9,
                          basis: tuple[int, int] = (12, 8), n_t: int = 26,
                          iterations: int = 15, noise_level: float = 0.0,
                          seed: int = 0) -> Experiment:
    """Disjoint speed/density inclusions in a homogeneous background.

    The desk defaults (half resolution, 9 sensors, 12 x 8 basis) run
    both inversion modes inside the acceptance budget; the full-scale
    settings are resolution_factor=1.0, n_sensors=35, basis=(30, 20).
    The snapshot step is half the Nyquist step of the central frequency
    rather than of the full band, trading some mass-matrix conditioning
    for a window that covers two-way travel across both inclusions. The
    Tikhonov cutoff sits above its default because the density updates
    ride on small singular values that otherwise amplify speed-density
    crosstalk.
    """
    nx = max(2, round(48 * resolution_factor))
    ny = max(2, round(32 * resolution_factor))
    grid = Grid(nx=nx, ny=ny, hx=3.0 / nx, hy=2.0 / ny)
    pulse = Pulse(nu=_DEFAULT_NU, bandwidth=_DEFAULT_BANDWIDTH)
    dt = pulse.t_s / 2.0
    tau_f = dt / 10.0
    return Experiment(
        name="two-inclusions",
        grid=grid,
        medium=two_inclusions_medium(grid),
        array=_line_array(0.7, 2.3, 1.0, n_sensors, radius=grid.hx / 2.0),
        pulse=pulse,
        n_t=n_t, dt=dt, tau_f=tau_f,
        param=Parameterization(n_bx=basis[0], n_by=basis[1]),
        config=InversionConfig(layers=(n_t,), iterations=iterations, gamma=3e-3),
        noise_level=noise_level, seed=seed,
    )


def recipe_cracks(variant: int, resolution_factor: float = 0.5, n_sensors: int = 7,
                  basis: tuple[int, int] = (10, 6), n_t: int = 20,
                  iterations: int = 8, seed: int = 1) -> Experiment:
    """Crack-like slabs over depth gradients, with calibrated noise.

    Variant 1 uses noise level 1e-2, variant 2 uses 3e-2 and swaps
    which field carries which crack. Full-scale settings are
    resolution_factor=1.0, n_sensors=25, basis=(50, 40), 40 iterations.
    """
    if variant not in (1, 2):
        raise ConfigurationError(f"crack variant must be 1 or 2, got {variant}")
    nx = max(2, round(40 * resolution_factor))
    ny = max(2, round(20 * resolution_factor))
    grid = Grid(nx=nx, ny=ny, hx=2.5 / nx, hy=1.2 / ny)
    pulse = Pulse(nu=_DEFAULT_NU, bandwidth=_DEFAULT_BANDWIDTH)
    dt = pulse.t_s / 2.0
    tau_f = dt / 10.0
    return Experiment(
        name=f"cracks{variant}",
        grid=grid,
        medium=cracks_medium(grid, variant),
        array=_line_array(0.2, 2.3, 0.1, n_sensors, radius=grid.hy / 2.0),
        pulse=pulse,
        n_t=n_t, dt=dt, tau_f=tau_f,
        param=Parameterization(n_bx=basis[0], n_by=basis[1]),
        config=InversionConfig(layers=(n_t,), iterations=iterations),
        noise_level=1e-2 if variant == 1 else 3e-2, seed=seed,
    )


def _build_medium(grid: Grid, spec: dict) -> MediumModel:
    kind = spec.get("type", "homogeneous")
    c_o = float(spec.get("c_o", 1.0))
    rho_o = float(spec.get("rho_o", 1.0))
    if kind == "two-inclusions":
        return two_inclusions_medium(grid, c_o, rho_o, float(spec.get("contrast", 1.5)))
    if kind in ("cracks1", "cracks2"):
        return cracks_medium(grid, int(kind[-1]), c_o, rho_o)
    if kind == "layered":
        return layered_medium(grid, float(spec.get("c_o", 1.5)), float(spec.get("rho_o", 1.8)))
    if kind == "homogeneous":
        return homogeneous_medium(grid, c_o, rho_o)
    if kind == "file":
        if "path" not in spec:
            raise ConfigurationError("medium type 'file' requires a 'path' prefix")
        return import_field(spec["path"], grid)
    raise ConfigurationError(f"unknown medium type {kind!r}")


def load_config(path: str | Path) -> Experiment:
    """Build a custom Experiment from a TOML config file.

    Sections: [grid] (nx, ny, hx, hy, optional x0/y0), [medium] (type
    plus type-specific keys), [array] (n_sensors, depth, x_start,
    x_end, optional radius), [pulse] (nu, bandwidth, optional t_s),
    [rom] (n_t, optional dt/tau_f/rank/noise_level/seed), [inversion]
    (optional layers/iterations/fd_step/gamma/basis/bound factors).
    """
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        spec = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid TOML: {exc}") from None

    def section(name: str, required: tuple[str, ...] = ()) -> dict:
        table = spec.get(name)
        if table is None:
            raise ConfigurationError(f"config is missing the [{name}] section")
        for key in required:
            if key not in table:
                raise ConfigurationError(f"[{name}] is missing required key {key!r}")
        return table

    try:
        g = section("grid", ("nx", "ny", "hx", "hy"))
        grid = Grid(nx=int(g["nx"]), ny=int(g["ny"]), hx=float(g["hx"]), hy=float(g["hy"]),
                    origin=(float(g.get("x0", 0.0)), float(g.get("y0", 0.0))))
        medium = _build_medium(grid, section("medium"))
        a = section("array", ("n_sensors", "depth", "x_start", "x_end"))
        array = _line_array(float(a["x_start"]), float(a["x_end"]), float(a["depth"]),
                            int(a["n_sensors"]), a.get("radius"))
        p = section("pulse", ("nu", "bandwidth"))
        pulse = Pulse(nu=float(p["nu"]), bandwidth=float(p["bandwidth"]),
                      t_s=float(p.get("t_s", 0.0)))
        rom = section("rom", ("n_t",))
        n_t = int(rom["n_t"])
        dt_default, tau_default = _default_times(pulse)
        dt = float(rom.get("dt", dt_default))
        tau_f = float(rom.get("tau_f", dt / 10.0 if "dt" in rom else tau_default))
        rank = rom.get("rank")
        if isinstance(rank, str):
            rank = None if rank == "auto" else int(rank)
        inv = spec.get("inversion", {})
        basis = inv.get("basis", [12, 8])
        param = Parameterization(n_bx=int(basis[0]), n_by=int(basis[1]),
                                 lower_factor=float(inv.get("lower_factor", 0.2)),
                                 upper_factor=float(inv.get("upper_factor", 5.0)))
        config = InversionConfig(
            layers=tuple(inv.get("layers", [n_t])),
            iterations=int(inv.get("iterations", 10)),
            fd_step=float(inv.get("fd_step", 1e-3)),
            gamma=float(inv.get("gamma", 1e-3)),
            rank=rank,
        )
        return Experiment(
            name=str(spec.get("name", "custom")), grid=grid, medium=medium,
            array=array, pulse=pulse, n_t=n_t, dt=dt, tau_f=tau_f,
            param=param, config=config,
            noise_level=float(rom.get("noise_level", 0.0)), seed=int(rom.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid config {path}: {exc}") from None


def import_field(prefix: str, grid: Grid) -> MediumModel:
    """Load a medium from files and resample it to the target grid.

    Expects prefix.c.mat, prefix.rho.mat, prefix.hdr as written by
    save_medium. Matching grids round-trip bit-exactly; otherwise the
    fields are resampled by bilinear interpolation on cell centers
    (clamped at the edges, which keeps min/max within the source range).
    """
    meta = _io.read_header(f"{prefix}.hdr")
    c, _ = _io.read_matrix(f"{prefix}.c.mat")
    rho, _ = _io.read_matrix(f"{prefix}.rho.mat")
    try:
        src = Grid(nx=int(meta["nx"]), ny=int(meta["ny"]), hx=float(meta["hx"]),
                   hy=float(meta["hy"]), origin=(float(meta["x0"]), float(meta["y0"])))
        c_o, rho_o = float(meta["c_o"]), float(meta["rho_o"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"medium header {prefix}.hdr incomplete: {exc}") from None
    if c.shape != (src.ny, src.nx) or rho.shape != (src.ny, src.nx):
        raise FormatError(
            f"field shapes {c.shape}/{rho.shape} do not match header grid ({src.ny}, {src.nx})"
        )
    if np.any(c <= 0) or np.any(rho <= 0):
        raise NonPositiveField("imported speed/density must be strictly positive")
    if (src.nx, src.ny) == (grid.nx, grid.ny) and \
            np.allclose([src.hx, src.hy, *src.origin], [grid.hx, grid.hy, *grid.origin],
                        rtol=0.0, atol=0.0):
        return MediumModel(c, rho, c_o, rho_o)
    from scipy.interpolate import RegularGridInterpolator

    xq = np.clip(grid.x_centers, src.x_centers[0], src.x_centers[-1])
    yq = np.clip(grid.y_centers, src.y_centers[0], src.y_centers[-1])
    pts = np.stack(np.meshgrid(yq, xq, indexing="ij"), axis=-1)
    fields = []
    for values in (c, rho):
        interp = RegularGridInterpolator((src.y_centers, src.x_centers), values)
        fields.append(interp(pts))
    return MediumModel(fields[0], fields[1], c_o, rho_o)


@dataclass(frozen=True)
class ModeReport:
    """Outcome of one inversion mode within a run."""

    rel_error_c: float
    rel_error_rho: float
    rel_error_joint: float
    final_objective: float
    runtime_s: float
    iterations: int
    clamped: bool


@dataclass(frozen=True)
class Report:
    """Per-mode results plus run-level metadata, mirrored in the manifest."""

    name: str
    output_dir: str
    noise_ratio: float | None
    modes: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)


def _experiment_dict(exp: Experiment) -> dict:
    return {
        "name": exp.name,
        "grid": {"nx": exp.grid.nx, "ny": exp.grid.ny, "hx": exp.grid.hx,
                 "hy": exp.grid.hy, "x0": exp.grid.origin[0], "y0": exp.grid.origin[1]},
        "array": {"positions": exp.array.positions.tolist(), "radius": exp.array.radius},
        "pulse": {"nu": exp.pulse.nu, "bandwidth": exp.pulse.bandwidth, "t_s": exp.pulse.t_s},
        "times": {"n_t": exp.n_t, "dt": exp.dt, "tau_f": exp.tau_f},
        "noise": {"level": exp.noise_level, "seed": exp.seed},
        "param": {"n_bx": exp.param.n_bx, "n_by": exp.param.n_by,
                  "lower_factor": exp.param.lower_factor,
                  "upper_factor": exp.param.upper_factor},
        "inversion": asdict(exp.config),
        "reference": {"c_o": exp.medium.c_o, "rho_o": exp.medium.rho_o},
    }


def save_experiment(exp: Experiment, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    save_medium(str(outdir / "truth"), exp.medium, exp.grid)
    (outdir / "experiment.json").write_text(json.dumps(_experiment_dict(exp), indent=2))


def load_experiment(outdir: str | Path) -> Experiment:
    """Rebuild an Experiment from a run directory."""
    outdir = Path(outdir)
    path = outdir / "experiment.json"
    if not path.exists():
        raise ConfigurationError(f"no experiment.json in {outdir}")
    spec = json.loads(path.read_text())
    grid = Grid(nx=spec["grid"]["nx"], ny=spec["grid"]["ny"], hx=spec["grid"]["hx"],
                hy=spec["grid"]["hy"], origin=(spec["grid"]["x0"], spec["grid"]["y0"]))
    medium = import_field(str(outdir / "truth"), grid)
    inv = spec["inversion"]
    return Experiment(
        name=spec["name"], grid=grid, medium=medium,
        array=SourceArray(np.asarray(spec["array"]["positions"]),
                          radius=spec["array"]["radius"]),
        pulse=Pulse(**spec["pulse"]),
        n_t=spec["times"]["n_t"], dt=spec["times"]["dt"], tau_f=spec["times"]["tau_f"],
        param=Parameterization(**spec["param"]),
        config=InversionConfig(layers=tuple(inv["layers"]), iterations=inv["iterations"],
                               fd_step=inv["fd_step"], gamma=inv["gamma"],
                               rank=inv.get("rank")),
        noise_level=spec["noise"]["level"], seed=spec["noise"]["seed"],
        output_dir=str(outdir),
    )


def make_data(exp: Experiment, outdir: str | Path) -> DataMatrices:
    """Simulate and persist the records and data matrices for a run.

    Writes the clean record and data matrices always, and the noisy
    pair when the experiment calls for noise; returns the matrices the
    inversion should consume (noisy when present).
    """
    outdir = Path(outdir)
    save_experiment(exp, outdir)
    record = record_response(exp.medium, exp.grid, exp.array, exp.pulse,
                             t_max=exp.t_max, tau_f=exp.tau_f)
    record.save(str(outdir / "record.clean"))
    clean = data_matrices(record, exp.dt, exp.n_t)
    clean.save(str(outdir / "dmat.clean"))
    if exp.noise_level == 0.0:
        return clean
    noisy_record = add_noise(record, exp.noise_level, exp.seed)
    noisy_record.save(str(outdir / "record.noisy"))
    noisy = data_matrices(noisy_record, exp.dt, exp.n_t)
    noisy.save(str(outdir / "dmat.noisy"))
    return noisy


def _data_prefix(outdir: Path) -> Path:
    noisy = outdir / "dmat.noisy.hdr"
    return outdir / "dmat.noisy" if noisy.exists() else outdir / "dmat.clean"


def build_rom_artifact(outdir: Path, rank: int | str = "config") -> RomFactor:
    """Assemble and persist the ROM factor from a run directory's data.

    rank "config" uses the experiment's requested rank, "auto" forces
    the spectral default, and an integer forces that truncation.
    """
    outdir = Path(outdir)
    data = load_data_matrices(str(_data_prefix(outdir)))
    exp = load_experiment(outdir)
    if rank == "config":
        r = exp.config.rank
    elif rank == "auto":
        r = None
    else:
        r = int(rank)
    factor = build_rom(assemble_mass(data), assemble_stiffness(data),
                       r=r, noise_level=data.noise_level)
    factor.save(str(outdir / "rom"), extra={"dt": data.dt})
    return factor


def run_inversion(outdir: str | Path, mode: str,
                  override: Experiment | None = None) -> InversionResult:
    """Run one inversion mode from persisted artifacts and persist results.

    override, when given, supplies the inversion schedule and basis in
    place of the persisted ones (the simulated data stays untouched).
    """
    outdir = Path(outdir)
    exp = load_experiment(outdir)
    if override is not None:
        exp = replace(exp, param=override.param, config=override.config)
    if mode == "rom":
        data = load_rom(str(outdir / "rom"))
    else:
        data = load_data_matrices(str(_data_prefix(outdir)))
    start = time.perf_counter()
    result = invert(exp.setup(), exp.param, exp.config, mode, data)
    runtime = time.perf_counter() - start
    mode_dir = outdir / f"{mode}-mode"
    mode_dir.mkdir(exist_ok=True)
    save_medium(str(mode_dir / "final"), result.medium, exp.grid)
    _io.write_csv(mode_dir / "trajectory.csv",
                  ["iteration", "objective", "update_norm", "mu", "wall_time"],
                  [list(row) for row in result.trajectory])
    (mode_dir / "summary.json").write_text(json.dumps({
        "runtime_s": runtime,
        "final_objective": result.final_objective,
        "clamped": result.clamped,
        "iterations": len(result.trajectory),
    }))
    return result


def _mode_report(outdir: Path, exp: Experiment, mode: str,
                 ranges: dict) -> ModeReport | None:
    mode_dir = outdir / f"{mode}-mode"
    if not (mode_dir / "final.hdr").exists():
        return None
    final = import_field(str(mode_dir / "final"), exp.grid)
    dc = np.linalg.norm(final.c - exp.medium.c)
    dr = np.linalg.norm(final.rho - exp.medium.rho)
    nc = np.linalg.norm(exp.medium.c)
    nr = np.linalg.norm(exp.medium.rho)
    summary = json.loads((mode_dir / "summary.json").read_text())
    for name, fieldvals in (("c", final.c), ("rho", final.rho)):
        ranges[f"{mode}-mode/final.{name}.pgm"] = _io.write_pgm(
            mode_dir / f"final.{name}.pgm", fieldvals)
    return ModeReport(
        rel_error_c=float(dc / nc), rel_error_rho=float(dr / nr),
        rel_error_joint=float(np.sqrt((dc ** 2 + dr ** 2) / (nc ** 2 + nr ** 2))),
        final_objective=summary["final_objective"],
        runtime_s=summary["runtime_s"], iterations=summary["iterations"],
        clamped=summary["clamped"],
    )


def regenerate_report(outdir: str | Path) -> Report:
    """Recompute the manifest and images from persisted artifacts."""
    outdir = Path(outdir)
    exp = load_experiment(outdir)
    ranges: dict[str, tuple[float, float]] = {}
    for name, fieldvals in (("c", exp.medium.c), ("rho", exp.medium.rho)):
        ranges[f"truth.{name}.pgm"] = _io.write_pgm(outdir / f"truth.{name}.pgm", fieldvals)
    noise_ratio = None
    if (outdir / "record.noisy.hdr").exists():
        clean = load_record(str(outdir / "record.clean"))
        noisy = load_record(str(outdir / "record.noisy"))
        noise_ratio = response_norm(clean, noisy.raw - clean.raw) / response_norm(clean)
    modes = {}
    for mode in ("rom", "fwi"):
        rep = _mode_report(outdir, exp, mode, ranges)
        if rep is not None:
            modes[mode] = rep
    report = Report(name=exp.name, output_dir=str(outdir), noise_ratio=noise_ratio,
                    modes=modes, config_echo=_experiment_dict(exp))
    manifest = {
        "name": report.name,
        "noise_ratio": report.noise_ratio,
        "modes": {k: asdict(v) for k, v in modes.items()},
        "pgm_ranges": {k: list(v) for k, v in ranges.items()},
        "config": report.config_echo,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return report


def run_experiment(exp: Experiment, outdir: str | Path | None = None) -> Report:
    """Data generation, ROM build, both inversion modes, and the report."""
    outdir = Path(outdir if outdir is not None else (exp.output_dir or f"./{exp.name}-run"))
    make_data(exp, outdir)
    build_rom_artifact(outdir)
    for mode in ("rom", "fwi"):
        run_inversion(outdir, mode)
    return regenerate_report(outdir)
