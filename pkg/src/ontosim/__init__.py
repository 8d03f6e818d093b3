"""Bohmian trajectories, GRW matter density and GRW flashes on one
split-step Schrodinger engine (natural units, hbar = 1)."""

__version__ = "0.1.0"
