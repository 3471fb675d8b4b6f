"""Frequency-domain system identification of photosynthesis dynamics.

Submodules:
    bdm         nonlinear five-state model, simulation, steady states
    excitation  multisine / stepped-sine design and rendering
    spectral    DFT averaging, FRF estimation, best linear approximation
    tffit       rational transfer-function fitting and zpk conversion
    lpv         parameter-varying model, schedules, validation metrics
    pipeline    end-to-end experiments and artifact persistence
    cli         command-line interface
"""

from . import bdm, excitation, lpv, pipeline, spectral, tffit

__version__ = "0.1.0"

__all__ = ["bdm", "excitation", "spectral", "tffit", "lpv", "pipeline"]
