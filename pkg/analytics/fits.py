"""
Exponent and free-energy estimates from iteration traces.

All fits are unweighted least squares on a log scale over an inclusive
generation window (n_lo, n_hi).
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from analytics.criticality import IterationTrace
from dist_core.errors import ConfigurationError, ConsistencyError, TraceExhausted

logger = logging.getLogger(__name__)

MIN_WINDOW       = 10
BURN_IN_FLOOR    = 50
BURN_IN_FACTOR   = 5.0
WINDOW_FLOOR     = 1e-250   # last usable E(X_n) in absolute scale
MONOTONE_SLACK   = 1e-12

RATE_KINDS = {
    "mean": "kappa",
    "survival": "survival_kappa",
    "mgf_excess": "mgf_kappa",
}


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    window: tuple
    max_residual: float
    kind: str
    value: float

    def __post_init__(self):
        n_lo, n_hi = self.window
        if n_lo >= n_hi:
            raise ValueError(f"fit window ({n_lo}, {n_hi}) needs n_lo < n_hi")

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "slope": self.slope,
            "intercept": self.intercept,
            "window": list(self.window),
            "max_residual": self.max_residual,
            "value": self.value,
        }


def _line_fit(x: np.ndarray, y: np.ndarray) -> tuple:
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    return float(slope), float(intercept), float(np.abs(residual).max())


def _check_window(trace: IterationTrace, window: tuple) -> tuple:
    n_lo, n_hi = int(window[0]), int(window[1])
    if n_lo < 0 or n_hi > trace.n_max:
        raise ConfigurationError(f"window ({n_lo}, {n_hi}) outside trace range [0, {trace.n_max}]")
    if n_hi - n_lo + 1 < MIN_WINDOW:
        raise ConfigurationError(f"window ({n_lo}, {n_hi}) shorter than {MIN_WINDOW} generations")
    return n_lo, n_hi


def rate_fit(trace: IterationTrace, window: tuple, observable: str = "mean") -> FitResult:
    """Slope of n -> -log(observable_n) over the window."""
    if observable not in RATE_KINDS:
        raise ConfigurationError(f"unknown rate observable '{observable}'")
    n_lo, n_hi = _check_window(trace, window)
    values = trace.column(observable)[n_lo:n_hi + 1]

    bad = np.flatnonzero(values <= 0.0)
    if bad.size:
        raise TraceExhausted(n_lo + int(bad[0]), observable)

    ns = np.arange(n_lo, n_hi + 1, dtype=np.float64)
    slope, intercept, max_residual = _line_fit(ns, -np.log(values))
    return FitResult(slope, intercept, (n_lo, n_hi), max_residual, RATE_KINDS[observable], slope)


def kappa_fit(trace: IterationTrace, window: tuple) -> FitResult:
    return rate_fit(trace, window, "mean")


def burn_in_window(trace: IterationTrace, epsilon: Optional[float] = None) -> tuple:
    """
    n_lo = max(50, ceil(5 ε^{-1/2})); n_hi = last n with E(X_n) >= 1e-250.
    The system stays near the critical manifold for about ε^{-1/2}
    generations before the exponential decay sets in.
    """
    eps = trace.spec.epsilon if epsilon is None else epsilon
    if eps <= 0:
        raise ConfigurationError(f"burn-in window needs epsilon > 0, got {eps}")
    n_lo = max(BURN_IN_FLOOR, math.ceil(BURN_IN_FACTOR / math.sqrt(eps)))

    means = trace.column("mean")
    usable = np.flatnonzero(means >= WINDOW_FLOOR)
    # E(X_n) is non-increasing in the subcritical regime; the usable set is a prefix
    n_hi = int(usable[-1]) if usable.size else -1
    if n_hi < trace.n_max and n_hi - n_lo + 1 < MIN_WINDOW:
        raise TraceExhausted(n_hi + 1, "mean")
    if n_hi - n_lo + 1 < MIN_WINDOW:
        raise ConfigurationError(
            f"trace of {len(trace)} generations too short for burn-in {n_lo}; raise run.n_max"
        )
    return n_lo, n_hi


def loglog_slope(xs: Sequence[float], ys: Sequence[float], window: Optional[tuple] = None) -> FitResult:
    """Slope of log y against log x; window selects inclusive positions."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ValueError(f"loglog_slope needs matching lengths, got {xs.size} and {ys.size}")
    lo, hi = window if window is not None else (0, xs.size - 1)
    xs, ys = xs[lo:hi + 1], ys[lo:hi + 1]
    if xs.size < 2:
        raise ValueError("loglog_slope needs at least 2 points")
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ValueError("loglog_slope needs strictly positive entries")
    slope, intercept, max_residual = _line_fit(np.log(xs), np.log(ys))
    return FitResult(slope, intercept, (lo, hi), max_residual, "loglog_slope", slope)


def free_energy_estimate(trace: IterationTrace) -> FitResult:
    """
    Final E(X_n)/m^n with a certificate that the ratio never increases
    beyond relative slack 1e-12. slope is the last one-step change.
    """
    if len(trace) < 2:
        raise ConfigurationError("free energy needs at least two records")
    m = trace.spec.m
    ns = np.arange(len(trace), dtype=np.float64)
    ratios = trace.column("mean") * np.exp(-ns * math.log(m))

    steps = ratios[1:] - ratios[:-1]
    allowed = MONOTONE_SLACK * ratios[:-1]
    bad = np.flatnonzero(steps > allowed)
    if bad.size:
        n = int(bad[0]) + 1
        raise ConsistencyError(
            f"E(X_n)/m^n increased at n={n}: {ratios[n - 1]!r} -> {ratios[n]!r}"
        )
    return FitResult(
        slope=float(steps[-1]),
        intercept=float(ratios[0]),
        window=(0, trace.n_max),
        max_residual=max(float(steps.max()), 0.0),
        kind="free_energy",
        value=float(ratios[-1]),
    )


# ── ε sweep ───────────────────────────────────────────────────────────────────

@dataclass
class SweepRow:
    epsilon: float
    status: str                      # "ok" | "exhausted" | "error"
    fit: Optional[FitResult] = None
    message: str = ""

    @property
    def kappa_hat(self) -> Optional[float]:
        return self.fit.value if self.fit is not None else None


@dataclass
class SweepResult:
    rows: list
    slope_fit: Optional[FitResult] = None
    monotone: bool = False
    band: tuple = (0.35, 0.70)
    passed: bool = False
    message: str = ""
    notes: list = field(default_factory=list)


def _fit_one(trace_for_epsilon: Callable, eps: float) -> SweepRow:
    try:
        trace = trace_for_epsilon(eps)
        fit = kappa_fit(trace, burn_in_window(trace, eps))
        logger.info("epsilon=%.4g: kappa_hat=%.6g over %s", eps, fit.value, fit.window)
        return SweepRow(eps, "ok", fit)
    except TraceExhausted as e:
        logger.warning("epsilon=%.4g: %s", eps, e)
        return SweepRow(eps, "exhausted", message=str(e))


def exponent_sweep(epsilons: Sequence[float], trace_for_epsilon: Callable,
                   band: tuple = (0.35, 0.70), workers: int = 1) -> SweepResult:
    """
    κ̂ per ε, then the slope of log κ̂ against log ε. Passes when the slope
    lies in the band and κ̂ is strictly increasing in ε. trace_for_epsilon
    must be picklable when workers > 1.
    """
    lo, hi = band
    if lo > hi:
        raise ConfigurationError(f"band ({lo}, {hi}) is empty")
    eps_list = sorted(float(e) for e in epsilons)
    if any(e <= 0 for e in eps_list):
        raise ConfigurationError("sweep epsilons must be positive")

    if workers > 1 and len(eps_list) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_fit_one, [trace_for_epsilon] * len(eps_list), eps_list))
    else:
        rows = [_fit_one(trace_for_epsilon, e) for e in eps_list]
    rows.sort(key=lambda r: r.epsilon)

    result = SweepResult(rows=rows, band=(lo, hi))
    fitted = [r for r in rows if r.fit is not None]
    if len(fitted) < 2:
        result.message = "need ≥ 2 points for a slope"
        return result

    kappas = [r.kappa_hat for r in fitted]
    result.monotone = all(b > a for a, b in zip(kappas, kappas[1:]))
    if not result.monotone:
        result.notes.append("kappa_hat is not strictly increasing in epsilon")
    if any(k <= 0 for k in kappas):
        result.message = "nonpositive kappa_hat; no log-log slope"
        return result

    result.slope_fit = loglog_slope([r.epsilon for r in fitted], kappas)
    slope = result.slope_fit.slope
    result.passed = result.monotone and lo <= slope <= hi
    result.message = f"slope {slope:.6g} {'inside' if lo <= slope <= hi else 'outside'} [{lo}, {hi}]"
    return result
