"""Command-line interface: configuration, cache and subcommands."""

from .main import main

__all__ = ["main"]
