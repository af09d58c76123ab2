"""Desk-scale parameter-server training lab.

Compressed, delay-compensated distributed SGD with k-step correction, its
three baselines, a bit-exact wire protocol, and an analytic iteration-time
cost model.
"""

__version__ = "0.1.0"
