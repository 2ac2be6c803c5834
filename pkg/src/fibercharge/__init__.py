"""Surface charge estimation for dielectric fibers near a trapped ion."""

__version__ = "0.1.0"
