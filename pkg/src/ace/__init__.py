"""Sequential-expansion value learning for cooperative grid pursuit."""

__version__ = "0.1.0"
