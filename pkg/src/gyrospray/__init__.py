"""Mean-field limit of gyroscopic particles coupled to a 2D vorticity field.

Solvers for the N-particle system and the monokinetic spray limit, plus the
modulated energy that measures the distance between them.
"""
__version__ = "0.1.0"
