"""Recurrent hard-attention scoring of stained tissue tiles on synthetic data.

Submodules are imported lazily so that the command-line entry point can pin
BLAS thread counts before numpy loads.
"""

__version__ = "0.1.0"
