"""NMF-assisted weak-label sound event detection with a numpy CNN."""

__version__ = "0.1.0"
