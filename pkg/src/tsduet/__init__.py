"""tsduet: compact dual-space time-series model and diagnostic pipelines.

Keep this module import-light: the CLI pins BLAS thread counts before any
numpy import, so nothing heavy may be pulled in here.
"""

__version__ = "0.1.0"
