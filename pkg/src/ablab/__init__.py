"""Numerical laboratory for Aharonov-Bohm type effects.

Submodules: ``fields`` (potentials, gauges, loop fluxes, Wilson lines),
``synthesis`` (compactly supported potentials from fields), ``solver``
(Crank-Nicolson time stepping with obstacles), ``rays`` (broken rays and
flux recovery), ``scattering``, ``spectra`` (torus operator), ``gravity``
(stationary metrics) and ``scenarios`` (configured experiments, CLI).
"""
from .fields import Constants, FluxVector, Path, flux_line_integral
from .grid import Grid2D, WaveState

__version__ = "0.1.0"

__all__ = ["Constants", "FluxVector", "Path", "flux_line_integral", "Grid2D", "WaveState", "__version__"]
