"""Return disparity between two group MDPs: exact analysis, fair LP, and
alignment-based mitigation."""

__version__ = "0.1.0"
