"""Domain-generalizing radar emitter recognition from PRI sequences."""

__version__ = "0.1.0"
