"""Rayleigh-gas tagged particle under long-range potentials: scattering,
truncated molecular dynamics, collision trees and a jump-process solver of
the linear Boltzmann equation, with tools to compare them."""

__version__ = "0.1.0"

from ._backend import NAME as backend  # noqa: E402

__all__ = ["__version__", "backend"]
