"""ym2: Monte Carlo laboratory for white-noise holonomy in the plane."""

__version__ = "0.1.0"
