"""
Exact open-path transform of the critical system.

    a_n(y) = E[θ^{N_n} 1{Y_n = y}]

One generation: a'(y) = a^{⊛m}(y+1) for y >= 1 and
a'(0) = a^{⊛m}(1) + P(Y_n = 0)^m. When all parents are 0 the child has no
open path, so that event carries weight θ^0 = 1.
"""

import logging
from dataclasses import dataclass

import numpy as np

from dist_core.errors import ConfigurationError, InequalityViolation
from dist_core.pmf import (
    DEFAULT_POLICY,
    IntPmf,
    ModelSpec,
    TruncationPolicy,
    dr_step,
    iterate_laws,
    make_initial_law,
    power_arrays,
    survival,
    weighted_moment,
)

logger = logging.getLogger(__name__)

COUPLING_TOLERANCE = 1e-14


@dataclass(frozen=True)
class OpenPathTransform:
    theta: float
    a: np.ndarray
    companion: IntPmf          # law of Y_n, the critical system
    n: int = 0

    def open_mass(self) -> float:
        """E[θ^{N_n} 1{Y_n >= 1}]"""
        return float(self.a[1:].sum())

    def total(self) -> float:
        return float(self.a.sum())


def transform_init(spec: ModelSpec, theta: float) -> OpenPathTransform:
    """Every generation-0 vertex carries one open path, so a_0 = θ·P(Y_0 = ·)."""
    if not (0.0 <= theta <= 1.0):
        raise ConfigurationError(f"theta must lie in [0, 1], got {theta}")
    companion = make_initial_law(spec.critical())
    a = theta * np.array(companion.true_probs(), dtype=np.float64)
    return OpenPathTransform(theta, a, companion, 0)


def transform_step(t: OpenPathTransform, spec: ModelSpec,
                   policy: TruncationPolicy = DEFAULT_POLICY) -> OpenPathTransform:
    companion = dr_step(t.companion, spec.critical(), policy)
    conv = power_arrays(t.a, spec.m)
    a = np.array(conv[1:], dtype=np.float64) if conv.size > 1 else np.zeros(1)
    a[0] += t.companion[0] ** spec.m
    # a <= companion entrywise; anything past the companion's support was truncated there too
    a = a[: companion.probs.size]
    return OpenPathTransform(t.theta, a, companion, t.n + 1)


@dataclass
class TransformRun:
    theta: float
    open_mass: np.ndarray            # Σ_{y>=1} a_n(y), n = 0..n_max
    total: np.ndarray                # Σ_y a_n(y)
    companion_survival: np.ndarray   # P(Y_n >= 1)
    companion_h_m: np.ndarray        # E(m^{Y_n})
    final: OpenPathTransform

    def no_open_path(self) -> np.ndarray:
        """P(N_n >= 1) = 1 - Σ_y a_n(y), meaningful at θ = 0."""
        return 1.0 - self.total


def transform_run(spec: ModelSpec, theta: float, n_max: int,
                  policy: TruncationPolicy = DEFAULT_POLICY) -> TransformRun:
    t = transform_init(spec, theta)
    open_mass, total, surv, h_m = [], [], [], []
    for n in range(n_max + 1):
        if n > 0:
            t = transform_step(t, spec, policy)
        open_mass.append(t.open_mass())
        total.append(t.total())
        surv.append(survival(t.companion))
        h_m.append(weighted_moment(t.companion, 0, spec.m))
    logger.debug("transform run theta=%.4g to n=%d: open mass %.3e", theta, n_max, open_mass[-1])
    return TransformRun(theta, np.array(open_mass), np.array(total),
                        np.array(surv), np.array(h_m), t)


# ── Coupling check ────────────────────────────────────────────────────────────

@dataclass
class CouplingReport:
    rows: list      # (n, lhs, rhs, margin, allowance)

    @property
    def min_margin(self) -> float:
        return min(r[3] for r in self.rows)

    @property
    def passed(self) -> bool:
        return all(r[3] >= -r[4] for r in self.rows)


def coupling_check(spec: ModelSpec, n: int, policy: TruncationPolicy = DEFAULT_POLICY,
                   strict: bool = True) -> CouplingReport:
    """
    P(X_n >= 1) >= E[(p/p_c)^{N_n} 1{Y_n >= 1}] for every generation up to n.
    LHS comes from the subcritical iteration, RHS from the transform at
    θ = p/p_c; the allowance is the LHS defect plus rounding.
    """
    if not (0.0 < spec.p < spec.p_c):
        raise ConfigurationError(
            f"coupling needs 0 < p < p_c, got p={spec.p!r}, p_c={spec.p_c!r}"
        )
    run = transform_run(spec, spec.theta, n, policy)
    rows = []
    for k, law in enumerate(iterate_laws(spec, n, policy)):
        lhs = survival(law)
        rhs = float(run.open_mass[k])
        allowance = law.defect + COUPLING_TOLERANCE
        rows.append((k, lhs, rhs, lhs - rhs, allowance))
        if strict and lhs - rhs < -allowance:
            raise InequalityViolation(
                f"coupling violated at n={k}: P(X_n >= 1)={lhs!r} < transform {rhs!r}"
            )
    report = CouplingReport(rows)
    logger.info("coupling margins to n=%d: min %.3e", n, report.min_margin)
    return report
