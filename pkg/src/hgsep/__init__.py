"""Stacked hourglass mask estimation for music source separation, built on a small NumPy autodiff core."""

__version__ = "0.1.0"
