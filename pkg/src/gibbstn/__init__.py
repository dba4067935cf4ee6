"""Low-rank thermal states of spin models from tree tensor network ground states."""

__version__ = "0.1.0"
