"""Counterfactual meta-exploration lab: a learned exploration policy for DDPG."""

__version__ = "0.1.0"
