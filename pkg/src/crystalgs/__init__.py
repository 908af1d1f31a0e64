"""Ground states of classical particles with band-limited pair potentials.

Numerical tools for periodic configurations whose reciprocal lattice avoids
the support of the potential's Fourier transform: reciprocal-space energies,
lattice thresholds, randomized stability checks and a box-energy optimizer.
"""

__version__ = "0.1.0"
