"""Simulation check of coverage and scaled expected length.

Draws the independent reduction variables directly:

    G ~ N(0, 1),   Q = (Z_1 + |gamma|)^2 + chi2_{s-1},   W = sqrt(chi2_m / m)

and records whether |G| <= W d(V/W) with V = sqrt(Q/s).  The length ratio is
W d(V/W) / (t(m) E(W)) with the exact E(W) in the denominator.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .distributions import expected_W, t_quantile
from .evaluator import _worker_count
from .spline import DFunction

__all__ = ["SimulationPlan", "SimulationResult", "simulate", "MIN_REPLICATIONS"]

MIN_REPLICATIONS = 10_000
CHUNK = 1 << 17


@dataclass(frozen=True)
class SimulationPlan:
    replications: int
    seed: int
    m: int
    s: int
    gamma: float
    d: DFunction
    alpha: float

    def __post_init__(self):
        if self.replications < MIN_REPLICATIONS:
            raise ValueError(f"replications must be at least {MIN_REPLICATIONS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.m < 1 or self.s < 1:
            raise ValueError("m and s must be positive integers")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError("gamma must be finite and nonnegative")
        if abs(self.d.tail - t_quantile(self.m, self.alpha)) > 1e-9 * self.d.tail:
            raise ValueError("d.tail must equal t(m) for the plan's m and alpha")


@dataclass(frozen=True)
class SimulationResult:
    coverage_estimate: float
    coverage_stderr: float
    sel_estimate: float
    sel_stderr: float
    replications: int

    @property
    def sel_squared_estimate(self) -> float:
        return self.sel_estimate**2

    @property
    def sel_squared_stderr(self) -> float:
        # delta method
        return 2.0 * abs(self.sel_estimate) * self.sel_stderr

    def to_dict(self) -> dict:
        return {
            "coverage_estimate": self.coverage_estimate,
            "coverage_stderr": self.coverage_stderr,
            "sel_estimate": self.sel_estimate,
            "sel_stderr": self.sel_stderr,
            "replications": self.replications,
        }

    @classmethod
    def from_dict(cls, data) -> "SimulationResult":
        return cls(**{k: data[k] for k in ("coverage_estimate", "coverage_stderr", "sel_estimate", "sel_stderr", "replications")})


def draw_reduction(rng: np.random.Generator, n, m, s, gamma):
    """One block of (G, V, W) draws."""
    g = rng.standard_normal(n)
    z1 = rng.standard_normal(n) + gamma
    q = z1 * z1
    if s > 1:
        q = q + rng.chisquare(s - 1, n)
    v = np.sqrt(q / s)
    w = np.sqrt(rng.chisquare(m, n) / m)
    return g, v, w


def _chunk_sums(seq, n, plan, scale):
    rng = np.random.Generator(np.random.PCG64(seq))
    g, v, w = draw_reduction(rng, n, plan.m, plan.s, plan.gamma)
    half = w * plan.d(v / w)
    covered = np.abs(g) <= half
    ratio = half / scale
    return np.array([covered.sum(), ratio.sum(), np.square(ratio).sum()], dtype=float)


def simulate(plan: SimulationPlan, workers=None) -> SimulationResult:
    """Monte Carlo estimates with standard errors.

    Replications are cut into fixed-size chunks, each with its own spawned
    seed, so the result does not depend on the number of workers.
    """
    n = plan.replications
    sizes = [CHUNK] * (n // CHUNK) + ([n % CHUNK] if n % CHUNK else [])
    seeds = np.random.SeedSequence(plan.seed).spawn(len(sizes))
    scale = t_quantile(plan.m, plan.alpha) * expected_W(plan.m)
    workers = _worker_count() if workers is None else max(1, int(workers))

    def job(i):
        return _chunk_sums(seeds[i], sizes[i], plan, scale)

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(i) for i in range(len(sizes))]
    hits, s1, s2 = np.sum(parts, axis=0)

    cov = hits / n
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0) * n / (n - 1)
    return SimulationResult(
        coverage_estimate=float(cov),
        coverage_stderr=float(math.sqrt(max(cov * (1.0 - cov), 1.0 / n) / n)),
        sel_estimate=float(mean),
        sel_stderr=float(math.sqrt(var / n)) if var > 0 else float(1.0 / n),
        replications=n,
    )
