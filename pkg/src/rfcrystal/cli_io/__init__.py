"""Configuration ingestion, result persistence and figure emission for the ``rfcrystal`` command."""

from .cli import main
from .config import RunConfig, load_config, parse_config

__all__ = ["RunConfig", "load_config", "main", "parse_config"]
