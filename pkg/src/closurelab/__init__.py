"""Closure modeling for dynamical systems with discarded degrees of freedom.

Simulate a full system, keep only the resolved variables plus the
identifiable feedback they receive from the discarded ones, learn that
feedback from history windows, and run the resulting closure model in
closed loop.  Verification covers both path-wise prediction skill and
long-run statistics.
"""

__version__ = "0.1.0"
