"""Discretized pricing Hamiltonians and shared grid records."""
