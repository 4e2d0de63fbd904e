"""Laryngoscopy exam analysis: vocalization and strobe highlights, vocal
fold geometry, and paralysis-side classification."""

__version__ = "0.1.0"
