"""
Monte Carlo probes of the joint law of (Y_n, N_n) for the critical system.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from dist_core.errors import ConfigurationError, InequalityViolation
from dist_core.pmf import ModelSpec, TruncationPolicy, DEFAULT_POLICY, iterate_laws, weighted_moment
from open_paths.montecarlo import McEstimate, mc_samples, summarize
from open_paths.tree import NODE_BUDGET, TreeSampler

logger = logging.getLogger(__name__)

CEILING_SE_FACTOR = 4.0


def critical_mgf(spec: ModelSpec, n: int, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    """H_n(m) = E(m^{Y_n}) from the exact critical iteration."""
    law = None
    for law in iterate_laws(spec.critical(), n, policy):
        pass
    return weighted_moment(law, 0, spec.m)


def default_alphas(n: int) -> list:
    return [n, int(math.floor(n ** 1.5))]


@dataclass
class DeviationReport:
    n: int
    j: int
    estimate: McEstimate
    ceiling: float                       # m^{-n/j} H_n(m)
    allowed: float                       # ceiling · (1 + 4 · relative SE)
    survival: McEstimate                 # P(Y_n >= 1)
    conditional: dict = field(default_factory=dict)   # α -> P(N_n <= α | Y_n >= 1)
    tail: Optional["TailReport"] = None

    @property
    def passed(self) -> bool:
        return self.estimate.mean <= self.allowed

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "j": self.j,
            "estimate": self.estimate.as_dict(),
            "ceiling": self.ceiling,
            "allowed": self.allowed,
            "survival": self.survival.as_dict(),
            "conditional": {str(a): v for a, v in sorted(self.conditional.items())},
            "tail": None if self.tail is None else self.tail.as_dict(),
            "pass": self.passed,
        }


def deviation_probe(spec: ModelSpec, n: int, j: int, count: int, seed: int,
                    workers: int = 1, node_budget: int = NODE_BUDGET,
                    alphas: Optional[Sequence[int]] = None,
                    policy: TruncationPolicy = DEFAULT_POLICY,
                    strict: bool = True, ell: Optional[int] = None,
                    rho: float = 0.5) -> DeviationReport:
    """
    Estimates P(Y_n >= ceil(n/j), 1 <= N_n <= j·n) and checks it against
    m^{-n/j} H_n(m) (Markov's inequality on m^{Y_n}), widened by four
    relative standard errors. With ell set, the tail report is read off the
    same samples.
    """
    if n < 1 or j < 1:
        raise ConfigurationError(f"deviation probe needs n >= 1 and j >= 1, got n={n}, j={j}")
    sampler = TreeSampler(spec.critical(), n, False, node_budget)
    rows = mc_samples(sampler, count, seed, workers)
    y, opened = rows[:, 0], rows[:, 1]

    level = math.ceil(n / j)
    hits = (y >= level) & (opened >= 1) & (opened <= j * n)
    estimate = summarize(hits, seed)
    ceiling = spec.m ** (-n / j) * critical_mgf(spec, n, policy)
    allowed = ceiling * (1.0 + CEILING_SE_FACTOR * estimate.relative_error())

    alive = y >= 1
    conditional = {}
    for alpha in (default_alphas(n) if alphas is None else alphas):
        conditional[int(alpha)] = (
            float(np.mean(opened[alive] <= alpha)) if alive.any() else None
        )

    tail = None if ell is None else tail_from_rows(rows, spec, n, ell, rho, seed)
    report = DeviationReport(n, j, estimate, ceiling, allowed, summarize(alive, seed), conditional, tail)
    logger.info("deviation probe n=%d j=%d: %.4g ± %.2g (ceiling %.4g)",
                n, j, estimate.mean, estimate.std_error, ceiling)
    if strict and not report.passed:
        raise InequalityViolation(
            f"P(Y_n >= {level}, 1 <= N_n <= {j * n}) = {estimate.mean!r} exceeds ceiling {allowed!r}"
        )
    return report


@dataclass
class TailReport:
    n: int
    ell: int
    rho: float
    estimate: McEstimate
    reference: float      # n^{-(2+ρ)} m^{-ℓ}

    def as_dict(self) -> dict:
        return {"n": self.n, "ell": self.ell, "rho": self.rho,
                "estimate": self.estimate.as_dict(), "reference": self.reference}


def tail_from_rows(rows: np.ndarray, spec: ModelSpec, n: int, ell: int, rho: float,
                   seed: int) -> TailReport:
    """P(Y_n >= ℓ+1, N_n <= n^{2+ρ}) from (Y_n, N_n) rows, next to n^{-(2+ρ)} m^{-ℓ}."""
    if n < 1 or ell < 0 or rho <= 0:
        raise ConfigurationError(f"tail probe needs n >= 1, ell >= 0, rho > 0; got {n}, {ell}, {rho}")
    cap = n ** (2.0 + rho)
    estimate = summarize((rows[:, 0] >= ell + 1) & (rows[:, 1] <= cap), seed)
    reference = n ** (-(2.0 + rho)) * float(spec.m) ** (-ell)
    return TailReport(n, ell, rho, estimate, reference)


def tail_probe(spec: ModelSpec, n: int, ell: int, rho: float, count: int, seed: int,
               workers: int = 1, node_budget: int = NODE_BUDGET) -> TailReport:
    """Reported only."""
    if n < 1 or ell < 0 or rho <= 0:
        raise ConfigurationError(f"tail probe needs n >= 1, ell >= 0, rho > 0; got {n}, {ell}, {rho}")
    rows = mc_samples(TreeSampler(spec.critical(), n, False, node_budget), count, seed, workers)
    return tail_from_rows(rows, spec, n, ell, rho, seed)
