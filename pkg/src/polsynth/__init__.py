"""Digital twin of a two-beam polarization synthesizer and the spin-dependent
optical lattice it drives.

Submodules
----------
polarization  Stokes synthesis, DOP, extinction ratio, beam-profile compensation
noise         PSD handling, noise budget, Monte Carlo DOP
heating       lattice geometry and motional heating rates
storage       level-resolved storage-time master equation and fit
servo         phase-lock loop step response and bandwidth
transport     transport-ramp excitation and sideband thermometry
cli           ``polsynth`` command-line entry point
"""

from .errors import InputError, NumericalError, PolsynthError

__version__ = "0.1.0"

__all__ = ["InputError", "NumericalError", "PolsynthError", "__version__"]
