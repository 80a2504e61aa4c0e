"""Text-based adsorption-energy prediction toolkit."""

__version__ = "0.1.0"
