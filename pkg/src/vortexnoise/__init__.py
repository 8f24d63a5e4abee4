"""Simulation and verification toolkit for vortex-structure transport noise on the torus."""

__version__ = "0.1.0"

from .fields import ConfigurationError, Mollifier, SpectralField, make_mollifier  # noqa: E402
from .structures import StructureLaw  # noqa: E402

__all__ = ["ConfigurationError", "Mollifier", "SpectralField", "StructureLaw", "make_mollifier",
           "__version__"]
