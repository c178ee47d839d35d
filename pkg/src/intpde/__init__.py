"""Integral-form PDE discovery with a neural surrogate and a genetic search."""

from .errors import IntPdeError
from .genome import Genome, GenomeConfig, make_genome, parse_genome
from .evolution import GaConfig, evolve
from .quadrature import gauss_legendre

__version__ = "0.1.0"

__all__ = [
    "IntPdeError",
    "Genome",
    "GenomeConfig",
    "make_genome",
    "parse_genome",
    "GaConfig",
    "evolve",
    "gauss_legendre",
    "__version__",
]
