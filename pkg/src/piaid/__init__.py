"""Partial interference alignment with interference detection (PIAID).

Link-level simulator for K-user MIMO interference networks in which each
receiver aligns a subset of its interferers and detects the strong residual
ones from their QPSK constellation before detecting its own symbol.
"""

__version__ = "0.1.0"
