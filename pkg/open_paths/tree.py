"""
Hierarchical tree representation and exact samplers for (Y_n, N_n) and the
coupled (X_n, Y_n, N_n).

Vertex j at level k has parents m·j .. m·j + m - 1 at level k - 1; level 0
holds the m^n initial values and level n the single root.

    Y(child) = (Σ parents' Y - 1)^+
    N(child) = (Σ parents' N) · 1{Σ parents' Y >= 1},  N = 1 at every leaf
    ξ(u)     = Σ over u's sibling group of Y, minus Y(u)
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from dist_core.errors import ConfigurationError, NodeBudgetExceeded
from dist_core.pmf import ModelSpec

logger = logging.getLogger(__name__)

NODE_BUDGET     = 2 ** 26   # leaves per sample
LEAF_BLOCK      = 2 ** 16   # leaves drawn and reduced at once
DEFINITIONAL_CAP = 3 ** 6


# ── Materialized trees ────────────────────────────────────────────────────────

@dataclass
class TreeSample:
    n: int
    m: int
    leaf_values: np.ndarray
    y: list = field(default_factory=list)       # y[k]: Y at level k, m^(n-k) entries
    xi: list = field(default_factory=list)      # xi[k]: ξ at level k, k < n
    counts: list = field(default_factory=list)  # counts[k]: N at level k

    @property
    def root(self) -> tuple:
        return int(self.y[-1][0]), int(self.counts[-1][0])


def _depth(leaves: int, m: int) -> int:
    n, size = 0, 1
    while size < leaves:
        size *= m
        n += 1
    if size != leaves:
        raise ConfigurationError(f"{leaves} leaf values is not a power of m={m}")
    return n


def build_tree(leaf_values: Sequence[int], m: int) -> TreeSample:
    leaves = np.asarray(leaf_values, dtype=np.int64)
    if np.any(leaves < 0):
        raise ConfigurationError("leaf values must be nonnegative")
    n = _depth(leaves.size, m)
    tree = TreeSample(n=n, m=m, leaf_values=leaves)

    y = leaves
    count = np.ones(leaves.size, dtype=np.int64)
    for _ in range(n):
        sums = y.reshape(-1, m).sum(axis=1)
        tree.y.append(y)
        tree.counts.append(count)
        tree.xi.append(np.repeat(sums, m) - y)
        count = count.reshape(-1, m).sum(axis=1) * (sums >= 1)
        y = np.maximum(sums - 1, 0)
    tree.y.append(y)
    tree.counts.append(count)
    return tree


def enumerate_definitional(n: int, m: int, leaf_values: Sequence[int]) -> int:
    """
    Count open paths from the initial generation to the root by checking
    every path literally: the path from leaf v is open iff
    Y(v) + ξ(v_0) + ... + ξ(v_i) >= i + 1 for i = 0..n-1, with v_i = v // m^i.
    """
    leaves = [int(v) for v in leaf_values]
    if m ** n > DEFINITIONAL_CAP:
        raise ConfigurationError(f"definitional enumeration capped at {DEFINITIONAL_CAP} leaves, got m^n={m ** n}")
    if len(leaves) != m ** n:
        raise ConfigurationError(f"expected {m ** n} leaf values, got {len(leaves)}")
    if n == 0:
        return 1

    # full tree, level by level, without the N recursion
    levels = [leaves]
    for _ in range(n):
        below = levels[-1]
        levels.append([max(sum(below[j * m:(j + 1) * m]) - 1, 0) for j in range(len(below) // m)])
    xi = []
    for k in range(n):
        level = levels[k]
        xi.append([sum(level[(u // m) * m:(u // m + 1) * m]) - level[u] for u in range(len(level))])

    open_paths = 0
    for v in range(m ** n):
        running = levels[0][v]
        for i in range(n):
            running += xi[i][v // m ** i]
            if running < i + 1:
                break
        else:
            open_paths += 1
    return open_paths


# ── Streaming samplers ────────────────────────────────────────────────────────

def _leaf_sampler(spec: ModelSpec):
    """Support and cdf of the critical initial law (1 - p_c)δ_0 + p_c·X*."""
    values = np.concatenate(([0], spec.star.values))
    probs = np.concatenate(([1.0 - spec.p_c], spec.p_c * spec.star.probs))
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return values.astype(np.int64), cdf


def _reduce(block: tuple, m: int, coupled: bool) -> tuple:
    """One level up for a tuple of (Y, N) or (X, Y, N) arrays."""
    if coupled:
        x, y, count = block
        xs = x.reshape(-1, m).sum(axis=1)
    else:
        y, count = block
    ys = y.reshape(-1, m).sum(axis=1)
    count = count.reshape(-1, m).sum(axis=1) * (ys >= 1)
    y = np.maximum(ys - 1, 0)
    if coupled:
        return np.maximum(xs - 1, 0), y, count
    return y, count


@dataclass(frozen=True)
class TreeSampler:
    """
    Draws one root of depth n per call. Leaves come in lexicographic blocks of
    m^b <= LEAF_BLOCK, each reduced vectorially to a single node at level b;
    block roots merge through a per-level stack, so memory stays
    O(LEAF_BLOCK + n·m). Calls return [Y, N], or [X, Y, N] when coupled.
    """
    spec: ModelSpec
    n: int
    coupled: bool = False
    node_budget: int = NODE_BUDGET

    def __post_init__(self):
        if self.n < 0:
            raise ConfigurationError(f"depth must be >= 0, got {self.n}")
        leaves = self.spec.m ** self.n
        if leaves > self.node_budget:
            raise NodeBudgetExceeded(leaves, self.node_budget)
        if self.coupled and not (0.0 < self.spec.p <= self.spec.p_c):
            raise ConfigurationError(
                f"coupled sampling needs 0 < p <= p_c, got p={self.spec.p!r}"
            )

    def _block_depth(self) -> int:
        m, b = self.spec.m, 0
        while b < self.n and m ** (b + 1) <= LEAF_BLOCK:
            b += 1
        return b

    def _draw_block(self, rng: np.random.Generator, size: int, values, cdf) -> tuple:
        y = values[np.searchsorted(cdf, rng.random(size), side="right")]
        count = np.ones(size, dtype=np.int64)
        if not self.coupled:
            return y, count
        z = rng.random(size) < self.spec.theta
        return y * z, y, count

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        m = self.spec.m
        values, cdf = _leaf_sampler(self.spec)
        b = self._block_depth()
        size = m ** b

        # pending[k]: nodes waiting at level k, at most m - 1 between merges
        pending = [[] for _ in range(self.n + 1)]
        for _ in range(m ** (self.n - b)):
            node = self._draw_block(rng, size, values, cdf)
            for _ in range(b):
                node = _reduce(node, m, self.coupled)
            level = b
            pending[level].append(node)
            while level < self.n and len(pending[level]) == m:
                merged = tuple(np.concatenate(parts) for parts in zip(*pending[level]))
                pending[level] = []
                level += 1
                pending[level].append(_reduce(merged, m, self.coupled))

        root = pending[self.n][0]
        return np.array([int(part[0]) for part in root], dtype=np.int64)


def sample_yn_pair(spec: ModelSpec, n: int, rng: np.random.Generator,
                   node_budget: int = NODE_BUDGET) -> tuple:
    """One exact draw of (Y_n, N_n) for the critical system."""
    y, count = TreeSampler(spec, n, False, node_budget)(rng)
    return int(y), int(count)


def sample_coupled(spec: ModelSpec, n: int, rng: np.random.Generator,
                   node_budget: int = NODE_BUDGET) -> tuple:
    """One draw of (X_n, Y_n, N_n) with X = Y·Z at the leaves, Z ~ Bernoulli(p/p_c)."""
    x, y, count = TreeSampler(spec, n, True, node_budget)(rng)
    return int(x), int(y), int(count)
