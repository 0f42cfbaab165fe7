"""Attack-resilient edge service placement: exact 0-1 programs, M/D/1 delays, an actor-critic loop and a backup baseline."""

__version__ = "0.1.0"
