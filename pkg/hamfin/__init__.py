"""hamfin: Hamiltonian option pricing and vacuum analysis."""

__version__ = "0.1.0"
