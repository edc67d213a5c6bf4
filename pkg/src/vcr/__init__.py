"""Variable computation recurrent units (VCRNN, VCGRU) and their baselines."""

__version__ = "0.1.0"
