"""Relational quantum reference frames: relativisation, restriction and their bounds."""

__version__ = "0.1.0"
