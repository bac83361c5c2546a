"""Epidemic forecasting over bi-layer location/case graphs compressed into learned fusion graphs."""

from .config import RunConfig, load_config

__all__ = ["RunConfig", "load_config"]
__version__ = "0.1.0"
