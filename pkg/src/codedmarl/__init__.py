"""Coded synchronous distributed MADDPG that tolerates straggling learners."""

__version__ = "0.1.0"
