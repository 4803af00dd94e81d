"""
Exception types shared by every drlab package.

Library code raises these; cli/commands.py turns them into result dicts and
main.py turns the result dicts into exit codes.
"""


class DrlabError(Exception):
    """Base class for all drlab failures."""


class ConfigurationError(DrlabError, ValueError):
    """Invalid model, policy or experiment parameters."""


class DegenerateStarLaw(ConfigurationError):
    def __init__(self, detail: str = ""):
        message = "degenerate star law: P(X* ≥ 2) > 0 required"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class TruncationTooAggressive(DrlabError, RuntimeError):
    def __init__(self, removed: float, limit: float):
        self.removed = removed
        self.limit = limit
        super().__init__(
            f"truncation too aggressive: hard cap removed {removed:.3e} "
            f"relative mass (limit {limit:.0e})"
        )


class SupportBudgetExceeded(DrlabError, RuntimeError):
    def __init__(self, support: int, budget: int):
        self.support = support
        self.budget = budget
        super().__init__(
            f"law support of {support} entries exceeds run.max_support = {budget}; "
            "supercritical runs should stop at their escape time"
        )


class TraceExhausted(DrlabError, ValueError):
    def __init__(self, index: int, observable: str = "mean"):
        self.index = index
        self.observable = observable
        super().__init__(
            f"trace exhausted: {observable} is not positive at n={index}"
        )


class NodeBudgetExceeded(DrlabError, RuntimeError):
    def __init__(self, leaves: int, budget: int):
        self.leaves = leaves
        self.budget = budget
        super().__init__(
            f"tree with {leaves} leaves exceeds the node budget of {budget}; "
            "use the exact open-path transform instead of sampling"
        )


class InequalityViolation(DrlabError, RuntimeError):
    """A monitored inequality failed beyond its tolerance."""


class ConsistencyError(InequalityViolation):
    """A quantity that must hold on every run (e.g. free-energy monotonicity) did not."""
