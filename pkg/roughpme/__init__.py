"""Rough porous media lab: simulation and property checks for stochastic porous media equations"""

__version__ = "0.4.0"
