"""Hybrid boosted-tree / peak-forest short-term streamflow forecasting."""

from .core import CatchmentSeries, FrameworkConfig, SplitSpec, validate_config

__version__ = "0.1.0"

__all__ = ["CatchmentSeries", "FrameworkConfig", "SplitSpec", "validate_config", "__version__"]
