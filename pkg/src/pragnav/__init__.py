"""pragnav: speaker-follower instruction navigation on synthetic worlds."""

__version__ = "0.1.0"
