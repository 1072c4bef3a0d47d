"""Mean-field ensembles of chaotic maps and the linear response of their
macroscopic observables."""

__version__ = "0.1.0"
