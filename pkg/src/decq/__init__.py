"""Decentralized Q-learning in stochastic games."""
