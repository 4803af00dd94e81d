"""
Critical point, critical-manifold residual and iteration traces.

A trace records, for every generation n, the scalars the monitors and fits
work from: E(X_n), P(X_n >= 1), H_n(m) = E(m^{X_n}), H_n'(m) = E(X_n m^{X_n - 1}),
δ_n = H_n(m) - m(m-1) H_n'(m) and the cumulative truncation defect.
"""

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from dist_core.errors import ConfigurationError
from dist_core.pmf import (
    DEFAULT_POLICY,
    IntPmf,
    ModelSpec,
    StarLaw,
    TruncationPolicy,
    iterate_laws,
    mean,
    survival,
    weighted_moment,
)

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("n", "mean", "survival", "h_m", "h1_m", "delta", "defect")


def critical_p(star: StarLaw, m: int) -> float:
    if int(m) != m or m < 2:
        raise ConfigurationError(f"arity m must be an integer >= 2, got {m}")
    return star.critical_p(int(m))


def derivative_at(pmf: IntPmf, m: int) -> float:
    """H'(m) = E(X m^{X-1})"""
    return weighted_moment(pmf, 1, m) / m


def delta_from_moments(h_m: float, h1_m: float, m: int) -> float:
    return h_m - m * (m - 1) * h1_m


def delta(pmf: IntPmf, m: int) -> float:
    return delta_from_moments(weighted_moment(pmf, 0, m), derivative_at(pmf, m), m)


def mgf_excess(pmf: IntPmf, m: int) -> float:
    """
    Σ_{k>=1} P(X=k)(m^k - 1), i.e. H(m) - 1 plus the defect. Summed over the
    positive part directly, so it stays accurate when H(m) - 1 is far below
    double precision.
    """
    head = pmf.probs[1:]
    if head.size == 0 or not head.any():
        return 0.0
    k = np.flatnonzero(head) + 1
    x = k * np.log(m)
    # log(m^k - 1), exact for small k·log m and overflow-free for large k
    log_gain = np.where(x > 30.0, x + np.log1p(-np.exp(-x)), np.log(np.expm1(np.minimum(x, 30.0))))
    return float(np.exp(np.log(head[k - 1]) + log_gain - k * np.log(pmf.tilt)).sum())


class TraceRecord(NamedTuple):
    n: int
    mean: float
    survival: float
    h_m: float
    h1_m: float
    delta: float
    defect: float
    mgf_excess: float


def record_for(n: int, pmf: IntPmf, m: int) -> TraceRecord:
    h_m = weighted_moment(pmf, 0, m)
    h1_m = derivative_at(pmf, m)
    return TraceRecord(
        n=n,
        mean=mean(pmf),
        survival=survival(pmf),
        h_m=h_m,
        h1_m=h1_m,
        delta=delta_from_moments(h_m, h1_m, m),
        defect=pmf.defect,
        mgf_excess=mgf_excess(pmf, m),
    )


@dataclass(frozen=True)
class IterationTrace:
    records: tuple
    spec: ModelSpec

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValueError("trace needs at least one record")
        ns = [r.n for r in records]
        if ns[0] != 0 or any(b != a + 1 for a, b in zip(ns, ns[1:])):
            raise ValueError("trace generations must run 0, 1, 2, ... without gaps")
        object.__setattr__(self, "records", records)

    @classmethod
    def from_columns(cls, spec: ModelSpec, mean: Sequence[float],
                     survival: Optional[Sequence[float]] = None,
                     h_m: Optional[Sequence[float]] = None,
                     h1_m: Optional[Sequence[float]] = None,
                     defect: Optional[Sequence[float]] = None,
                     mgf_excess: Optional[Sequence[float]] = None) -> "IterationTrace":
        """Build a trace from precomputed columns; missing columns are zero-filled."""
        size = len(mean)

        def col(values):
            if values is None:
                return np.zeros(size)
            if len(values) != size:
                raise ValueError("trace columns must have equal lengths")
            return np.asarray(values, dtype=np.float64)

        surv, hm, h1, dfc, exc = col(survival), col(h_m), col(h1_m), col(defect), col(mgf_excess)
        records = tuple(
            TraceRecord(n, float(mean[n]), float(surv[n]), float(hm[n]), float(h1[n]),
                        delta_from_moments(float(hm[n]), float(h1[n]), spec.m),
                        float(dfc[n]), float(exc[n]))
            for n in range(size)
        )
        return cls(records, spec)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_max(self) -> int:
        return self.records[-1].n

    def column(self, name: str) -> np.ndarray:
        if name not in TraceRecord._fields:
            raise KeyError(f"unknown trace column '{name}'")
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)


def iterate_trace(spec: ModelSpec, n_max: int,
                  policy: TruncationPolicy = DEFAULT_POLICY,
                  stop_below: Optional[float] = None,
                  on_law: Optional[Callable[[int, IntPmf], None]] = None) -> IterationTrace:
    """
    Records generations 0..n_max; with stop_below, ends at the first E(X_n)
    below it. on_law sees every law as it is produced.
    """
    records = []
    for n, law in enumerate(iterate_laws(spec, n_max, policy)):
        records.append(record_for(n, law, spec.m))
        if on_law is not None:
            on_law(n, law)
        if stop_below is not None and records[-1].mean < stop_below:
            break
    last = records[-1]
    logger.info("iterated %d generations (p=%.6g, epsilon=%.3g): E(X_n)=%.3e, defect=%.3e",
                last.n, spec.p, spec.epsilon, last.mean, last.defect)
    return IterationTrace(tuple(records), spec)
