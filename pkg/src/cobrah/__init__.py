"""Nonstationary combinatorial bandits with trajectory-KL confidence sets."""

__version__ = "0.1.0"
