"""Option-implied price distributions with a DDP mixture of dynamic linear models."""

__version__ = "0.1.0"
