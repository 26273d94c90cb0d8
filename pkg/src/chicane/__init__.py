"""2D driving simulator with learned lateral controllers and
ensemble-uncertainty takeover."""

__version__ = "0.1.0"
