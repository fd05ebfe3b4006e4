"""Shared exception base for the mining pipeline.

Every operational error raised by pipeline modules derives from
:class:`MiningError` so the CLI can map failures to a single exit code.
"""


class MiningError(Exception):
    """Base class for all pipeline errors."""
