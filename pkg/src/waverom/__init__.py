"""Data-driven reduced order models for acoustic velocity/density imaging.

The package simulates first-order acoustic wave propagation on a
staggered grid, turns collocated source/receiver array recordings into
mass and stiffness Gram matrices, factors them into a reduced order
model whose Cholesky factor plays the role of the unknown wavefield,
and inverts jointly for wave speed and density by Gauss-Newton on
either the ROM misfit or the conventional data misfit.

Submodules import lazily so the command line entry point can configure
threading environment variables before any numerical library loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = ("acquisition", "blockla", "cli", "errors", "harness",
               "inversion", "io", "rom", "wavesim")

_EXPORTS = {
    "Grid": "wavesim",
    "MediumModel": "wavesim",
    "Pulse": "acquisition",
    "SourceArray": "acquisition",
    "ResponseRecord": "acquisition",
    "DataMatrices": "acquisition",
    "record_response": "acquisition",
    "data_matrices": "acquisition",
    "add_noise": "acquisition",
    "BlockMatrix": "blockla",
    "TallBlockMatrix": "blockla",
    "block_cholesky": "blockla",
    "RomFactor": "rom",
    "SimulationSetup": "rom",
    "assemble_mass": "rom",
    "assemble_stiffness": "rom",
    "build_rom": "rom",
    "Parameterization": "inversion",
    "InversionConfig": "inversion",
    "InversionResult": "inversion",
    "realize_medium": "inversion",
    "invert": "inversion",
    "Experiment": "harness",
    "Report": "harness",
    "recipe_two_inclusions": "harness",
    "recipe_cracks": "harness",
    "run_experiment": "harness",
    "import_field": "harness",
    "load_config": "harness",
}

__all__ = ["__version__", *_SUBMODULES, *_EXPORTS]


def __getattr__(name: str):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    if name in _EXPORTS:
        return getattr(import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
