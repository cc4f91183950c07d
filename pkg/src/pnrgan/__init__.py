"""Synthetic PNR-style tabular data via Cramer/Wasserstein GANs, plus the
evaluation battery (two-sample tests, local JSD, MDS maps, memorization and
downstream checks) used to judge the synthesizer."""

__version__ = "0.1.0"

from .rng import Stream

__all__ = ["Stream", "__version__"]
