"""Closed-form per-iteration time model for the four training algorithms.

Inputs are the four timing constants (compute tau, uncompressed communication
phi, compressed communication psi, compression overhead delta) plus the
correction period k. Within one period of k iterations, k-1 iterations ship
compressed gradients and one ships full precision. Overlapped algorithms
take the max of compute and communication per iteration; ties resolve to the
communication branch so every function is total.

The savings functions come in two flavours: the published piecewise case
tables (the public API) and plain subtraction of iteration times (used as a
cross-check). The two agree everywhere for the savings over the quantizing
baseline; the savings over the local-update baseline agree whenever
compressed communication is not slower than raw communication
(delta + psi <= phi), which is the premise the model is built on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

REGIME_COMPUTE = "compute-bound"
REGIME_MIXED = "comm-bound-compressed"
REGIME_COMM = "comm-bound-always"


@dataclass(frozen=True)
class CostParams:
    """Timing constants in seconds plus the correction period k."""

    tau: float
    phi: float
    psi: float
    delta: float
    k: int

    def __post_init__(self):
        for name in ("tau", "phi", "psi", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.psi > self.phi:
            warnings.warn(
                f"compressed communication ({self.psi}) slower than uncompressed ({self.phi})",
                stacklevel=2,
            )


def t_ssgd(p: CostParams) -> float:
    """Fully synchronous iteration: compute then uncompressed communication."""
    return p.tau + p.phi


def t_loc(p: CostParams) -> float:
    """Local-update iteration: compute overlaps communication, so the max rules."""
    return max(p.tau, p.phi)


def t_bit(p: CostParams) -> float:
    """Always-quantizing iteration: compute, then compression, then compressed comm."""
    return p.tau + p.delta + p.psi


def comm_cd(i: int, p: CostParams) -> float:
    """Communication cost of iteration i (1-based): compressed except every k-th."""
    if i < 1:
        raise ValueError("iteration index is 1-based")
    if i % p.k != 0:
        return p.delta + p.psi
    return p.phi


def t_cd(i: int, p: CostParams) -> float:
    """Iteration time with overlap: compute if it dominates, else the comm cost."""
    comm = comm_cd(i, p)
    return p.tau if p.tau > comm else comm


def avg_cd(p: CostParams) -> float:
    """Mean iteration time over one full k-period.

    In the comm-bound regime (tau <= delta + psi and tau <= phi) this equals
    ((k-1) * (delta + psi) + phi) / k.
    """
    return sum(t_cd(i, p) for i in range(1, p.k + 1)) / p.k


def saving_vs_loc(i: int, p: CostParams) -> float:
    """Per-iteration saving over the local-update baseline (case form).

    Valid whenever delta + psi <= phi; there it equals t_loc(p) - t_cd(i, p).
    """
    comm = comm_cd(i, p)
    if p.tau >= p.phi and p.tau >= comm:
        return 0.0
    if p.tau >= comm:
        return p.phi - p.tau
    if i % p.k != 0:
        return p.phi - p.delta - p.psi
    return 0.0


def saving_vs_bit(i: int, p: CostParams) -> float:
    """Per-iteration saving over the always-quantizing baseline (case form).

    Equals t_bit(p) - t_cd(i, p) for all parameters; negative on correction
    iterations when raw communication dominates.
    """
    comm = comm_cd(i, p)
    if p.tau >= comm:
        return p.delta + p.psi
    if i % p.k != 0:
        return p.tau
    return p.tau + p.delta + p.psi - p.phi


def classify_regime(p: CostParams) -> str:
    """Label which iterations are communication-bound.

    compute-bound: none (tau covers both comm costs). comm-bound-always:
    all of them. comm-bound-compressed: the mixed regime where exactly one
    of the two iteration kinds is bound, typically the uncompressed
    correction steps (delta + psi <= tau < phi).
    """
    compressed_comm = p.delta + p.psi
    if p.tau >= p.phi and p.tau >= compressed_comm:
        return REGIME_COMPUTE
    if p.tau < p.phi and p.tau < compressed_comm:
        return REGIME_COMM
    return REGIME_MIXED


def timeline(p: CostParams, horizon: int) -> list[tuple[int, str, float, float]]:
    """Per-iteration (iter, algo, time, cumulative) rows for all four algorithms."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rows = []
    totals = {"ssgd": 0.0, "lusgd": 0.0, "bitsgd": 0.0, "cdsgd": 0.0}
    times = {
        "ssgd": lambda i: t_ssgd(p),
        "lusgd": lambda i: t_loc(p),
        "bitsgd": lambda i: t_bit(p),
        "cdsgd": lambda i: t_cd(i, p),
    }
    for i in range(1, horizon + 1):
        for algo in ("ssgd", "lusgd", "bitsgd", "cdsgd"):
            step = times[algo](i)
            totals[algo] += step
            rows.append((i, algo, step, totals[algo]))
    return rows
