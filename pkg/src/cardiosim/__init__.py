"""Desk-scale cardiac intervention simulator.

A phase-driven ODE environment generates synthetic ECGs, a small latent
codec and an energy-regularized diffusion dynamics model simulate
action-conditioned next states, and a mean-variance ranker scores candidate
interventions under uncertainty.
"""

__version__ = "0.1.0"
