# Accuracy bounds for OFDM radar under oscillator phase noise
"""
This package computes deterministic, hybrid and misspecified Cramer-Rao bounds
for range and velocity estimation in a monostatic OFDM radar whose oscillator
adds phase noise, and checks them against a PN-unaware ML estimator.
"""

__version__ = "1.0.0"
