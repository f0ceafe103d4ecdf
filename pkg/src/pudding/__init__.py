"""Private user discovery over a simulated mix network."""

__version__ = "0.1.0"
