"""Detection of weak incoherent signals: divergences, weak Schur sampling tests,
DME-QSP filter statistics and a Monte Carlo harness."""

__version__ = "0.1.0"
