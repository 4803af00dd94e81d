"""
Integer-valued probability mass functions and the Derrida–Retaux map.

    X_{n+1} = (X_{n,1} + ... + X_{n,m} - 1)^+

An IntPmf is a dense array indexed by value k = 0..L. Mass removed by tail
truncation is never renormalized; it is kept in `defect`, so every scalar
computed from a truncated law is a lower bound of the untruncated value.

Laws produced by make_initial_law are stored exponentially tilted,
probs[k] = P(X = k) · m^k. Convolution commutes with the tilt, the tilted
entries of a subcritical or critical law sum to H(m) <= m^{1/(m-1)}, and the
far tail that carries the weight of E(m^X) stays representable long after
the plain probabilities would underflow.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import signal

from dist_core.errors import (
    ConfigurationError,
    ConsistencyError,
    DegenerateStarLaw,
    SupportBudgetExceeded,
    TruncationTooAggressive,
)

logger = logging.getLogger(__name__)

DEFAULT_TAU         = 1e-16     # tail threshold, relative to Σ_{k>=1} P(X=k)(m^k - 1)
DEFAULT_MAX_SUPPORT = 1 << 20   # stored entries before a run is stopped
FFT_MIN_SUPPORT     = 4096      # both supports must exceed this for FFT convolution
FFT_ROUNDOFF        = 1e-15     # FFT output below this times the input masses is zeroed
HARD_CAP_LIMIT      = 1e-6      # max relative mass a support cap may remove
LOG_TILT_CEILING    = 600.0     # ln of the largest tilted mass a step may produce
MASS_TOLERANCE      = 1e-12


# ── Types ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TruncationPolicy:
    tau: float = DEFAULT_TAU
    support_cap: Optional[int] = None   # hard cap on stored entries (L + 1)
    max_support: int = DEFAULT_MAX_SUPPORT

    def __post_init__(self):
        if not (0.0 <= self.tau < 1.0):
            raise ConfigurationError(f"truncation tau must lie in [0, 1), got {self.tau}")
        if self.support_cap is not None and self.support_cap < 2:
            raise ConfigurationError(f"support cap must be >= 2, got {self.support_cap}")
        if self.max_support < 2:
            raise ConfigurationError(f"max support must be >= 2, got {self.max_support}")


NO_TRUNCATION = TruncationPolicy(tau=0.0)
DEFAULT_POLICY = TruncationPolicy()


@dataclass(frozen=True)
class IntPmf:
    """
    Finite pmf on {0..L} with tracked truncation defect.

    Stored entries are P(X = k) · tilt^k; tilt = 1 stores plain
    probabilities. Trailing zeros are trimmed on construction and the array
    is made read-only.
    """
    probs: np.ndarray
    defect: float = 0.0
    tilt: float = 1.0

    def __post_init__(self):
        arr = np.array(self.probs, dtype=np.float64).ravel()
        if arr.size == 0:
            arr = np.zeros(1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("pmf entries must be finite")
        if np.any(arr < 0.0):
            raise ValueError("pmf entries must be nonnegative")
        if self.defect < 0.0:
            raise ValueError(f"defect must be nonnegative, got {self.defect}")
        if not (math.isfinite(self.tilt) and self.tilt >= 1.0):
            raise ValueError(f"tilt must be a finite number >= 1, got {self.tilt}")

        nz = np.flatnonzero(arr)
        arr = arr[: nz[-1] + 1] if nz.size else arr[:1]

        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)
        object.__setattr__(self, "defect", float(self.defect))
        object.__setattr__(self, "tilt", float(self.tilt))

    @classmethod
    def from_dict(cls, masses: dict, defect: float = 0.0) -> "IntPmf":
        if not masses:
            return cls(np.zeros(1), defect)
        arr = np.zeros(max(masses) + 1)
        for k, p in masses.items():
            if k < 0:
                raise ValueError(f"pmf values must be nonnegative integers, got {k}")
            arr[k] += p
        return cls(arr, defect)

    @classmethod
    def dirac(cls, k: int = 0) -> "IntPmf":
        arr = np.zeros(k + 1)
        arr[k] = 1.0
        return cls(arr)

    @property
    def support_max(self) -> int:
        return self.probs.size - 1

    def untilt(self, start: int = 0) -> np.ndarray:
        """tilt^{-k} for k = start..L; underflows to 0 far out."""
        return _untilt(self.tilt, start, self.probs.size)

    def true_probs(self) -> np.ndarray:
        if self.tilt == 1.0:
            return self.probs
        return self.probs * self.untilt()

    def stored_mass(self) -> float:
        return float(self.true_probs().sum())

    def mass_error(self) -> float:
        return abs(self.stored_mass() + self.defect - 1.0)

    def __getitem__(self, k: int) -> float:
        if k < 0 or k > self.support_max:
            return 0.0
        return float(self.probs[k]) * self.tilt ** -k

    def as_dict(self) -> dict:
        probs = self.true_probs()
        return {int(k): float(probs[k]) for k in np.flatnonzero(probs)}

    def with_tilt(self, tilt: float) -> "IntPmf":
        if tilt == self.tilt:
            return self
        k = np.arange(self.probs.size, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logs = np.log(self.probs) + k * (math.log(tilt) - math.log(self.tilt))
        return IntPmf(np.exp(logs), self.defect, tilt)


def _untilt(tilt: float, start: int, stop: int) -> np.ndarray:
    if tilt == 1.0:
        return np.ones(max(stop - start, 0))
    return np.power(tilt, -np.arange(start, stop, dtype=np.float64))


@dataclass(frozen=True)
class StarLaw:
    """Law of X* on {1, 2, ...}; finite support, P(X* >= 2) > 0."""
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64).ravel()
        probs = np.asarray(self.probs, dtype=np.float64).ravel()
        if values.size == 0 or values.size != probs.size:
            raise ConfigurationError("star law needs matching, nonempty values and probabilities")
        if np.any(values < 1):
            raise ConfigurationError("star law values must be integers >= 1")
        if np.unique(values).size != values.size:
            raise ConfigurationError("star law values must be distinct")
        if np.any(probs < 0.0):
            raise ConfigurationError("star law probabilities must be nonnegative")
        if abs(math.fsum(probs) - 1.0) > MASS_TOLERANCE:
            raise ConfigurationError(f"star law probabilities sum to {math.fsum(probs)!r}, not 1")

        keep = probs > 0.0
        order = np.argsort(values[keep])
        values, probs = values[keep][order], probs[keep][order]
        if not np.any(values >= 2):
            raise DegenerateStarLaw("X* ≡ 1")

        values.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_pairs(cls, pairs: Sequence) -> "StarLaw":
        pairs = list(pairs)
        return cls(np.array([v for v, _ in pairs]), np.array([p for _, p in pairs], dtype=float))

    @classmethod
    def constant(cls, k: int) -> "StarLaw":
        return cls(np.array([k]), np.array([1.0]))

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "StarLaw":
        values = np.arange(lo, hi + 1)
        return cls(values, np.full(values.size, 1.0 / values.size))

    @property
    def max_value(self) -> int:
        return int(self.values[-1])

    def pairs(self) -> list:
        return [(int(v), float(p)) for v, p in zip(self.values, self.probs)]

    def tail(self, k: int) -> float:
        """P(X* >= k)."""
        return math.fsum(self.probs[self.values >= k])

    def critical_p(self, m: int) -> float:
        """1 / (1 + E[((m-1)X* - 1) m^{X*}])"""
        terms = [p * ((m - 1) * int(v) - 1) * float(m) ** int(v)
                 for v, p in zip(self.values, self.probs)]
        return 1.0 / (1.0 + math.fsum(terms))


@dataclass(frozen=True)
class ModelSpec:
    m: int
    star: StarLaw
    p: float
    p_c: float = field(init=False)
    epsilon: float = field(init=False)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ConfigurationError(f"arity m must be an integer >= 2, got {self.m}")
        if not (0.0 <= self.p <= 1.0):
            raise ConfigurationError(f"p must lie in [0, 1], got {self.p}")
        p_c = self.star.critical_p(int(self.m))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "p_c", p_c)
        object.__setattr__(self, "epsilon", p_c - float(self.p))

    @classmethod
    def from_epsilon(cls, m: int, star: StarLaw, epsilon: float) -> "ModelSpec":
        p = star.critical_p(int(m)) - epsilon
        return cls(m, star, p)

    def with_p(self, p: float) -> "ModelSpec":
        return ModelSpec(self.m, self.star, p)

    def critical(self) -> "ModelSpec":
        return self.with_p(self.p_c)

    @property
    def theta(self) -> float:
        return self.p / self.p_c

    @property
    def regime(self) -> str:
        if self.epsilon > 0:
            return "subcritical"
        if self.epsilon < 0:
            return "supercritical"
        return "critical"


# ── Construction ──────────────────────────────────────────────────────────────

def make_initial_law(spec: ModelSpec, tilt: Optional[float] = None) -> IntPmf:
    """(1 - p) δ_0 + p · L(X*), stored with tilt m unless told otherwise."""
    star = spec.star
    if not np.any(star.values >= 2):
        raise DegenerateStarLaw()
    tilt = float(spec.m) if tilt is None else float(tilt)
    if star.max_value * math.log(tilt) > LOG_TILT_CEILING:
        tilt = 1.0
    arr = np.zeros(star.max_value + 1)
    arr[star.values] = spec.p * star.probs * np.power(tilt, star.values.astype(np.float64))
    arr[0] = 1.0 - spec.p
    return IntPmf(arr, tilt=tilt)


# ── Convolution ───────────────────────────────────────────────────────────────

def convolve_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size > FFT_MIN_SUPPORT and b.size > FFT_MIN_SUPPORT:
        logger.debug("FFT convolution of supports %d x %d", a.size, b.size)
        out = signal.fftconvolve(a, b)
        # round-off floor ~1e-15 * total mass; anything below it is noise
        out[out < FFT_ROUNDOFF * float(a.sum()) * float(b.sum())] = 0.0
        return out
    return np.convolve(a, b)


def power_arrays(a: np.ndarray, m: int) -> np.ndarray:
    """
    m-fold self-convolution, expanded binomially around the zero atom:
    (z δ_0 + q)^{⊛m} = Σ_j C(m, j) z^{m-j} q^{⊛j}. Only powers of the
    positive part q are convolved, so FFT round-off scales with q's mass.
    """
    if m < 1:
        raise ValueError(f"convolution power must be >= 1, got {m}")
    z, q = float(a[0]), np.asarray(a[1:], dtype=np.float64)
    out = np.zeros(m * (a.size - 1) + 1)
    out[0] = z ** m
    if q.size == 0:
        return out
    term = q
    for j in range(1, m + 1):
        if j > 1:
            term = convolve_arrays(term, q)
        # q^{⊛j} starts at value j
        out[j: j + term.size] += math.comb(m, j) * z ** (m - j) * term
    return out


def _combine_defects(d_a: float, d_b: float) -> float:
    # independent losses: 1 - (1 - d_a)(1 - d_b), never more than d_a + d_b
    return d_a + d_b - d_a * d_b


def convolve(a: IntPmf, b: IntPmf) -> IntPmf:
    """Law of the independent sum, stored with the smaller of the two tilts."""
    tilt = min(a.tilt, b.tilt)
    a, b = a.with_tilt(tilt), b.with_tilt(tilt)
    return IntPmf(
        convolve_arrays(a.probs, b.probs),
        defect=_combine_defects(a.defect, b.defect),
        tilt=tilt,
    )


def convolve_power(a: IntPmf, m: int) -> IntPmf:
    if m < 1:
        raise ValueError(f"convolution power must be >= 1, got {m}")
    if m == 1:
        return a
    defect = 0.0
    for _ in range(m):
        defect = _combine_defects(defect, a.defect)
    return IntPmf(power_arrays(a.probs, m), defect=defect, tilt=a.tilt)


# ── Truncation ────────────────────────────────────────────────────────────────

def tail_reference(a: IntPmf) -> float:
    """
    What tau is measured against, in stored units. For a law tilted by m
    this is Σ_{k>=1} P(X=k)(m^k - 1) = H(m) - 1 + defect; for plain
    probabilities it is P(X >= 1).
    """
    head = a.probs[1:]
    if head.size == 0:
        return 0.0
    if a.tilt == 1.0:
        return float(head.sum())
    k = np.arange(1, a.probs.size, dtype=np.float64)
    return float(np.dot(head, -np.expm1(-k * math.log(a.tilt))))


def truncate(a: IntPmf, policy: TruncationPolicy) -> IntPmf:
    """
    Drop the longest upper tail whose stored mass is at most
    tau · tail_reference(a); then apply the support cap. On a tilted law the
    cut therefore bounds the m^k-weighted tail, which is what later
    generations of E(X_n), δ_n and H_n(m) depend on. Removed probability
    goes to the defect, unnormalized.
    """
    probs = a.probs
    reference = tail_reference(a)
    cut = probs.size

    if policy.tau > 0.0 and reference > 0.0:
        tails = np.cumsum(probs[::-1])[::-1]
        above = np.flatnonzero(tails[1:] > policy.tau * reference)
        cut = int(above[-1]) + 2 if above.size else 1

    capped = False
    if policy.support_cap is not None and cut > policy.support_cap:
        capped_mass = float(probs[policy.support_cap:cut].sum())
        if reference > 0.0 and capped_mass / reference > HARD_CAP_LIMIT:
            raise TruncationTooAggressive(capped_mass / reference, HARD_CAP_LIMIT)
        cut = policy.support_cap
        capped = True

    if cut > policy.max_support:
        raise SupportBudgetExceeded(cut, policy.max_support)
    if cut >= probs.size:
        return a

    removed = float(np.dot(probs[cut:], a.untilt(cut)))
    if removed > MASS_TOLERANCE:
        logger.info("truncation removed %.3e mass beyond k=%d", removed, cut - 1)
    else:
        logger.debug("truncation removed %.3e mass beyond k=%d%s",
                     removed, cut - 1, " (support cap)" if capped else "")
    return IntPmf(probs[:cut], defect=a.defect + removed, tilt=a.tilt)


# ── The Derrida–Retaux step ───────────────────────────────────────────────────

def completed(a: IntPmf) -> IntPmf:
    """The defect placed back at 0: a full law stochastically below the true one."""
    probs = np.array(a.true_probs(), dtype=np.float64)
    probs[0] += a.defect
    return IntPmf(probs)


def dr_step(a: IntPmf, spec: ModelSpec, policy: TruncationPolicy = DEFAULT_POLICY) -> IntPmf:
    """
    One generation of the map, run on the completed law so that the defect
    carries forward additively.

    In stored units a'(y) = s(y + 1)/tilt for y >= 1, s the m-fold power.
    The zero atom is closed from the mass balance 1 - defect - P(X' >= 1).
    Mass the FFT floor drops from the positive part lands at 0, so
    the law only moves stochastically down.
    """
    if a.tilt != 1.0 and spec.m * math.log(max(float(a.probs.sum()), 1.0)) > LOG_TILT_CEILING:
        logger.info("tilted mass %.3e too large; continuing with plain probabilities",
                    float(a.probs.sum()))
        a = a.with_tilt(1.0)

    full = np.array(a.probs, dtype=np.float64)
    full[0] += a.defect
    s = power_arrays(full, spec.m)

    out = np.zeros(max(s.size - 1, 1))
    out[: s.size - 1] = s[1:] / a.tilt
    positive = float(np.dot(out[1:], _untilt(a.tilt, 1, out.size)))
    zero = 1.0 - a.defect - positive
    if zero < -MASS_TOLERANCE:
        raise ConsistencyError(
            f"positive mass {positive:.17g} plus carried defect {a.defect:.3e} exceeds 1"
        )
    out[0] = max(zero, 0.0)
    return truncate(IntPmf(out, defect=a.defect, tilt=a.tilt), policy)


def iterate_laws(spec: ModelSpec, n_max: int,
                 policy: TruncationPolicy = DEFAULT_POLICY) -> Iterator[IntPmf]:
    """Yield the laws of X_0, ..., X_{n_max}."""
    if n_max < 0:
        raise ConfigurationError(f"n_max must be >= 0, got {n_max}")
    law = make_initial_law(spec)
    yield law
    for n in range(1, n_max + 1):
        law = dr_step(law, spec, policy)
        logger.debug("n=%d support=%d defect=%.3e", n, law.support_max, law.defect)
        yield law


# ── Scalars ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MeanInterval:
    value: float
    upper: float
    is_lower_bound: bool


def mean(a: IntPmf) -> float:
    probs = a.true_probs()
    return float(np.dot(np.arange(probs.size, dtype=np.float64), probs))


def mean_interval(a: IntPmf) -> MeanInterval:
    """The stored mean is exact without defect, a one-sided lower bound otherwise."""
    value = mean(a)
    if a.defect > 0.0:
        return MeanInterval(value, math.inf, True)
    return MeanInterval(value, value, False)


def survival(a: IntPmf) -> float:
    """P(X >= 1)."""
    return float(a.true_probs()[1:].sum())


def weighted_moment(a: IntPmf, k: int, s: float) -> float:
    """E(X^k s^X), summed in log space so that s^X never overflows."""
    if k < 0 or s < 0:
        raise ValueError(f"weighted_moment needs k >= 0 and s >= 0, got k={k}, s={s}")
    if s == 0.0:
        return float(a[0]) if k == 0 else 0.0

    probs = a.probs
    idx = np.flatnonzero(probs)
    if k > 0:
        idx = idx[idx > 0]
    if idx.size == 0:
        return 0.0
    log_terms = np.log(probs[idx]) + idx * (math.log(s) - math.log(a.tilt))
    if k > 0:
        log_terms += k * np.log(idx.astype(np.float64))
    return float(np.exp(log_terms).sum())
