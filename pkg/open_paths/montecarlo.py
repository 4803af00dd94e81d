"""
Reproducible Monte Carlo over per-sample counter-based streams.

Sample i always draws from Philox keyed by SeedSequence(seed, spawn_key=(i,)),
so results depend only on (seed, count), never on the worker count.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from dist_core.errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    count: int
    seed: int

    def relative_error(self) -> float:
        return self.std_error / self.mean if self.mean > 0 else 0.0

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error,
                "count": self.count, "seed": self.seed}


def stream_for(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _sample_range(sampler: Callable, seed: int, bounds: tuple) -> np.ndarray:
    start, stop = bounds
    rows = [np.atleast_1d(sampler(stream_for(seed, i))) for i in range(start, stop)]
    logger.debug("samples [%d, %d) done", start, stop)
    return np.vstack(rows)


def _chunks(count: int, workers: int) -> list:
    edges = np.linspace(0, count, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges, edges[1:]) if b > a]


def mc_samples(sampler: Callable, count: int, seed: int, workers: int = 1) -> np.ndarray:
    """
    Raw sample rows in index order. Contiguous index chunks go to worker
    processes and are concatenated in order; sampler must be picklable
    when workers > 1.
    """
    if count < 1:
        raise ConfigurationError(f"sample count must be >= 1, got {count}")
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}")

    run = partial(_sample_range, sampler, seed)
    if workers == 1 or count == 1:
        return run((0, count))

    chunks = _chunks(count, workers)
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(run, chunks))
    return np.vstack(parts)


def summarize(values: np.ndarray, seed: int) -> McEstimate:
    values = np.asarray(values, dtype=np.float64).ravel()
    count = values.size
    std_error = float(values.std(ddof=1)) / math.sqrt(count) if count > 1 else 0.0
    return McEstimate(float(values.mean()), std_error, count, seed)


def mc_estimate(sampler: Callable, statistic: Callable, count: int, seed: int,
                workers: int = 1) -> McEstimate:
    """statistic maps the (count, k) sample rows to one value per sample."""
    rows = mc_samples(sampler, count, seed, workers)
    return summarize(statistic(rows), seed)


# ── Statistics over (Y, N) rows ───────────────────────────────────────────────

def open_path_weight(rows: np.ndarray, theta: float) -> np.ndarray:
    """θ^N 1{Y >= 1}, with 0^0 = 1."""
    y, count = rows[:, -2], rows[:, -1]
    return np.power(theta, count.astype(np.float64)) * (y >= 1)


def survives(rows: np.ndarray, column: int = 0) -> np.ndarray:
    return (rows[:, column] >= 1).astype(np.float64)
