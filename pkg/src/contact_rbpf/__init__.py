"""Contact-based Rao-Blackwellized particle filtering for planar rigid bodies."""

__version__ = "0.1.0"
