"""
Checks and reports along iteration traces.

Hard checks raise InequalityViolation; reports return a small dataclass the
command layer serializes. All checks compare stored (lower-bound) scalars and
use the recorded defect as the allowance where the direction requires one.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from analytics.criticality import IterationTrace
from dist_core.errors import ConfigurationError, InequalityViolation
from dist_core.pmf import (
    DEFAULT_POLICY,
    IntPmf,
    ModelSpec,
    TruncationPolicy,
    iterate_laws,
    mean,
    weighted_moment,
)

logger = logging.getLogger(__name__)

PRODUCT_TOLERANCE     = 1e-8
CONTRACTION_TOLERANCE = 1e-8
RESIDUAL_TOLERANCE    = 1e-9
ROUNDING_TOLERANCE    = 1e-12
DEFAULT_ESCAPE        = 3.0


# ── δ recursion ───────────────────────────────────────────────────────────────

def delta_recursion_residual(trace: IterationTrace) -> np.ndarray:
    """
    residual_n = δ_{n+1} - δ_n H_n(m)^{m-1}. For subcritical runs δ_n must also
    stay in (0, 1].
    """
    if len(trace) < 2:
        raise ConfigurationError("delta recursion needs at least two records")
    m = trace.spec.m
    delta = trace.column("delta")
    h_m = trace.column("h_m")
    residual = delta[1:] - delta[:-1] * h_m[:-1] ** (m - 1)

    if trace.spec.regime == "subcritical":
        bad = np.flatnonzero((delta <= 0.0) | (delta > 1.0 + ROUNDING_TOLERANCE))
        if bad.size:
            n = int(bad[0])
            raise InequalityViolation(
                f"subcritical delta left (0, 1] at n={n}: delta={delta[n]!r}"
            )
    logger.debug("delta recursion: max |residual| = %.3e", float(np.abs(residual).max()))
    return residual


def residual_allowance(trace: IterationTrace) -> np.ndarray:
    """1e-9 · max(1, δ_n) per consecutive pair."""
    delta = trace.column("delta")[:-1]
    return RESIDUAL_TOLERANCE * np.maximum(1.0, np.abs(delta))


def running_product(trace: IterationTrace) -> np.ndarray:
    """Π_{i<n} H_i(m)^{m-1} for n = 0..n_max, accumulated in log space."""
    m = trace.spec.m
    logs = (m - 1) * np.log(trace.column("h_m")[:-1])
    return np.exp(np.concatenate(([0.0], np.cumsum(logs))))


# ── Product bound ─────────────────────────────────────────────────────────────

@dataclass
class ProductBoundReport:
    regime: str
    products: np.ndarray
    bound: Optional[float] = None            # 1/δ_0, subcritical only
    max_product: float = 0.0
    window: Optional[tuple] = None           # critical only
    ratio_min: Optional[float] = None
    ratio_max: Optional[float] = None

    @property
    def spread(self) -> Optional[float]:
        if self.ratio_min is None or self.ratio_min <= 0.0:
            return None
        return self.ratio_max / self.ratio_min


def product_bound_check(trace: IterationTrace, window: Optional[tuple] = None) -> ProductBoundReport:
    """
    Subcritical: the running product never exceeds 1/δ_0 (hard check).
    Critical: report product/n² over the window, default all n >= 1.
    """
    if len(trace) < 2:
        raise ConfigurationError("product bound needs at least two records")
    products = running_product(trace)
    regime = trace.spec.regime
    report = ProductBoundReport(regime=regime, products=products,
                                max_product=float(products.max()))

    if regime == "subcritical":
        delta_0 = trace.records[0].delta
        report.bound = 1.0 / delta_0
        limit = report.bound * (1.0 + PRODUCT_TOLERANCE)
        over = np.flatnonzero(products > limit)
        if over.size:
            n = int(over[0])
            raise InequalityViolation(
                f"running product {products[n]!r} exceeds 1/delta_0 = {report.bound!r} at n={n}"
            )
        return report

    if regime == "critical":
        n_lo, n_hi = window if window is not None else (1, trace.n_max)
        n_hi = min(n_hi, trace.n_max)
        if n_lo < 1 or n_lo > n_hi:
            raise ConfigurationError(f"invalid product window ({n_lo}, {n_hi}) for trace of length {len(trace)}")
        ns = np.arange(n_lo, n_hi + 1, dtype=np.float64)
        ratios = products[n_lo:n_hi + 1] / ns ** 2
        report.window = (n_lo, n_hi)
        report.ratio_min = float(ratios.min())
        report.ratio_max = float(ratios.max())
        logger.info("product/n^2 over [%d, %d]: min %.4g, max %.4g", n_lo, n_hi,
                    report.ratio_min, report.ratio_max)
    return report


# ── Contraction ───────────────────────────────────────────────────────────────

@dataclass
class ContractionReport:
    t: float
    hypothesis_met: bool
    M: Optional[int] = None
    theta: Optional[float] = None
    mgf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    max_ratio: Optional[float] = None     # max over n of (E t^X - 1) / ((t-m) θ^{n-M})
    message: str = ""


def contraction_monitor(spec: ModelSpec, t: float, n_max: int, M: Optional[int] = None,
                        policy: TruncationPolicy = DEFAULT_POLICY) -> ContractionReport:
    """
    θ = (m/t) E(t^{X_M})^{m-1}; when θ < 1, E(t^{X_n}) <= 1 + (t-m) θ^{n-M}
    must hold for all n in [M, n_max]. With M unset the first index with
    θ < 1 is used.

    E(X_{n+1}) >= m E(X_n) - 1, so once E(X_n) > 1/(m-1) the mean keeps
    growing and θ_k >= m t^{(m-1)E(X_k) - 1} > 1 for every later k (Jensen).
    Iteration stops there when no usable M precedes it.
    """
    m = spec.m
    if t <= m:
        raise ConfigurationError(f"contraction monitor needs t > m, got t={t}, m={m}")
    if M is not None and not (0 <= M <= n_max):
        raise ConfigurationError(f"M={M} outside the iterated range [0, {n_max}]")

    mgf = []
    escaped = None
    for n, law in enumerate(iterate_laws(spec, n_max, policy)):
        mgf.append(weighted_moment(law, 0, t))
        theta_n = (m / t) * mgf[-1] ** (m - 1)
        if M is None and theta_n < 1.0:
            M = n
        if M == n and theta_n >= 1.0:
            break
        if (M is None or M > n) and mean(law) > 1.0 / (m - 1):
            escaped = n
            break
    mgf = np.array(mgf)

    if escaped is not None or M is None:
        message = (f"hypothesis not met for any M <= {n_max}" if M is None
                   else f"hypothesis not met at M={M}")
        if escaped is not None:
            message += f" (E(X_n) passed 1/(m-1) at n={escaped})"
        logger.info("contraction %s", message)
        return ContractionReport(t=t, hypothesis_met=False, M=M, mgf=mgf, message=message)

    theta = float((m / t) * mgf[M] ** (m - 1))
    if theta >= 1.0:
        return ContractionReport(t=t, hypothesis_met=False, M=M, theta=theta, mgf=mgf,
                                 message=f"hypothesis not met at M={M} (theta={theta:.6g})")

    ks = np.arange(0, n_max - M + 1, dtype=np.float64)
    slack = (t - m) * theta ** ks
    excess = mgf[M:] - 1.0
    bound = 1.0 + slack * (1.0 + CONTRACTION_TOLERANCE)
    over = np.flatnonzero(mgf[M:] > bound)
    if over.size:
        n = M + int(over[0])
        raise InequalityViolation(
            f"E(t^X_n)={mgf[n]!r} exceeds 1 + (t-m)theta^(n-M) = {bound[over[0]]!r} at n={n}"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(slack > 0.0, excess / slack, 0.0)
    return ContractionReport(t=t, hypothesis_met=True, M=M, theta=theta, mgf=mgf,
                             max_ratio=float(ratios.max()),
                             message=f"bound holds on [{M}, {n_max}]")


# ── Lower bound from the star tail ────────────────────────────────────────────

@dataclass
class LowerBoundReport:
    rows: list    # (n, mean, bound, margin)

    @property
    def min_margin(self) -> float:
        return min(r[3] for r in self.rows)


def remark_lower_bound_check(spec: ModelSpec, trace: IterationTrace) -> LowerBoundReport:
    """
    E(X_n) >= p m^n P(X* >= n+1). The stored mean misses at most
    defect · m^n · max X*, since X_n <= m^n max X* deterministically.
    """
    m = spec.m
    top = spec.star.max_value
    rows = []
    for rec in trace.records:
        n = rec.n
        bound = spec.p * float(m) ** n * spec.star.tail(n + 1) if n < top else 0.0
        allowance = rec.defect * float(m) ** n * top + ROUNDING_TOLERANCE * bound
        margin = rec.mean - bound
        if margin < -allowance:
            raise InequalityViolation(
                f"E(X_{n})={rec.mean!r} below p m^n P(X* >= n+1) = {bound!r}"
            )
        rows.append((n, rec.mean, bound, margin))
        if n >= top:
            break
    return LowerBoundReport(rows)


# ── mgf domination ────────────────────────────────────────────────────────────

def mgf_domination_check(trace: IterationTrace) -> np.ndarray:
    """
    E(X_n) <= (H_n(m) - 1 + defect)/(m - 1), from m^k - 1 >= (m-1)k. The
    recorded mgf excess already equals H_n(m) - 1 + defect. Returns the
    per-record slack.
    """
    m = trace.spec.m
    means = trace.column("mean")
    rhs = trace.column("mgf_excess") / (m - 1)
    slack = rhs - means
    bad = np.flatnonzero(slack < -ROUNDING_TOLERANCE * np.maximum(means, rhs))
    if bad.size:
        n = int(bad[0])
        raise InequalityViolation(
            f"E(X_{n})={means[n]!r} exceeds (H_n(m) - 1)/(m - 1) = {rhs[n]!r}"
        )
    return slack


# ── Reports without assertions ────────────────────────────────────────────────

def moment_ratio(law: IntPmf, n: int, m: int, c: float) -> float:
    """E(X_n^2 s^{X_n}) / n with s = m + c/n; n >= 1."""
    return weighted_moment(law, 2, m + c / n) / n


def moment_monitor(spec: ModelSpec, n_max: int, c: float,
                   policy: TruncationPolicy = DEFAULT_POLICY) -> list:
    """(n, moment_ratio) for n = 1..n_max."""
    if c < 0:
        raise ConfigurationError(f"moment monitor needs c >= 0, got {c}")
    return [(n, moment_ratio(law, n, spec.m, c))
            for n, law in enumerate(iterate_laws(spec, n_max, policy)) if n > 0]


def manifold_exit_time(trace: IterationTrace) -> Optional[int]:
    """First n with δ_n - δ_0 above half the observed δ range."""
    delta = trace.column("delta")
    rise = delta - delta[0]
    top = float(rise.max())
    if top <= 0.0:
        return None
    return int(np.flatnonzero(rise > 0.5 * top)[0])


def escape_time(spec: ModelSpec, n_max: int, threshold: float = DEFAULT_ESCAPE,
                policy: TruncationPolicy = DEFAULT_POLICY) -> Optional[int]:
    """
    First n with E(X_n) > threshold; iteration stops there, so the growing
    supercritical support is never carried further. threshold > m^{1/(m-1)}.
    """
    floor = spec.m ** (1.0 / (spec.m - 1))
    if threshold <= floor:
        raise ConfigurationError(
            f"escape threshold must exceed m^(1/(m-1)) = {floor:.6g}, got {threshold}"
        )
    for n, law in enumerate(iterate_laws(spec, n_max, policy)):
        if mean(law) > threshold:
            logger.info("mean escaped past %.3g at n=%d", threshold, n)
            return n
    return None


def criticality_ceiling(trace: IterationTrace) -> tuple:
    """(sup_n H_n(m), m^{1/(m-1)})"""
    m = trace.spec.m
    return float(trace.column("h_m").max()), m ** (1.0 / (m - 1))
