"""Flow-aided 6D pose self-supervision toolkit."""

__version__ = "0.1.0"
