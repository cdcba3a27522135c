"""Information-theoretic malware similarity toolkit.

Two detectors and their OR-combination:

* entropy-time-series features fed to a false-positive-penalizing
  random forest (``ents`` + ``forest``),
* byte n-gram language-model comparisons against malware and benign
  zoos (``slamm``),

plus compression-based baselines, a labeled-corpus layer, a synthetic
corpus generator, and an evaluation harness.
"""

__version__ = "0.1.0"

from .errors import DataError, ItectError

__all__ = ["DataError", "ItectError", "__version__"]
