"""Universal one-body reduced density matrix functionals for lattice bosons."""

__version__ = "0.1.0"
