"""Corridor signal-control lab: simulator, hypergraph attention, PPO, baselines."""

__version__ = "0.1.0"
