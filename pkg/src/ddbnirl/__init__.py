"""Nonparametric subgoal inverse reinforcement learning (ddBNIRL-S/T and BNIRL)."""

__version__ = "0.1.0"
