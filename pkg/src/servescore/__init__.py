"""Server quality scores for tennis from point-by-point slam data."""

__version__ = "0.1.0"
