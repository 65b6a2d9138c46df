"""Define a version constant."""
__version__ = "0.4.0"
