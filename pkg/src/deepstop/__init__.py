"""Deep optimal stopping: learned stopping rules with certified bounds."""

__version__ = "0.1.0"
