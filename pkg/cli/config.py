"""
Experiment configuration.

Files hold one `section.key = value` per line. `#` starts a comment; values
are Python literals (numbers, lists, tuples, strings) or bare strings:

    model.m = 2
    model.star = [(2, 1.0)]
    model.epsilon = 0.01
    run.n_max = 4000
    output.format = csv
"""

import ast
import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from dist_core.errors import ConfigurationError
from dist_core.pmf import DEFAULT_MAX_SUPPORT, DEFAULT_TAU, ModelSpec, StarLaw, TruncationPolicy
from open_paths.tree import NODE_BUDGET

logger = logging.getLogger(__name__)

MAX_TAU = 1e-8


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _ordered_band(band):
    lo, hi = band
    if lo > hi:
        raise ValueError(f"band [{lo}, {hi}] needs lo <= hi")
    return band


class ModelSection(Section):
    m: int = Field(2, ge=2)
    star: List[Tuple[int, float]] = [(2, 1.0)]
    p: Optional[float] = None
    epsilon: Optional[float] = None

    @model_validator(mode="after")
    def at_most_one_of_p_epsilon(self):
        if self.p is not None and self.epsilon is not None:
            raise ValueError("model.p and model.epsilon are mutually exclusive")
        return self

    def star_law(self) -> StarLaw:
        return StarLaw.from_pairs(self.star)

    def to_spec(self, epsilon: Optional[float] = None) -> ModelSpec:
        star = self.star_law()
        if epsilon is not None:
            return ModelSpec.from_epsilon(self.m, star, epsilon)
        if self.p is not None:
            return ModelSpec(self.m, star, self.p)
        if self.epsilon is None:
            raise ConfigurationError("one of model.p and model.epsilon must be given")
        return ModelSpec.from_epsilon(self.m, star, self.epsilon)


class RunSection(Section):
    n_max: int = Field(200, ge=0)
    tau: float = Field(DEFAULT_TAU, ge=0.0, le=MAX_TAU)
    support_cap: Optional[int] = Field(None, ge=2)
    max_support: int = Field(DEFAULT_MAX_SUPPORT, ge=2)
    escape: float = Field(3.0, gt=0.0)       # supercritical runs stop once E(X_n) passes it

    def policy(self) -> TruncationPolicy:
        return TruncationPolicy(self.tau, self.support_cap, self.max_support)


class McSection(Section):
    count: int = Field(10_000, ge=1)
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    node_budget: int = Field(NODE_BUDGET, ge=1)


class FitSection(Section):
    window: Optional[Tuple[int, int]] = None    # None: burn-in window
    band: Tuple[float, float] = (0.35, 0.70)

    @field_validator("band")
    @classmethod
    def ordered_band(cls, v):
        return _ordered_band(v)

    @field_validator("window")
    @classmethod
    def ordered_window(cls, v):
        if v is not None and v[0] >= v[1]:
            raise ValueError(f"fit window {v} needs n_lo < n_hi")
        return v


class SweepSection(Section):
    epsilons: List[float] = [0.04, 0.02, 0.01, 0.005]
    n_max: int = Field(16_000, ge=1)

    @field_validator("epsilons")
    @classmethod
    def positive(cls, v):
        if any(e <= 0 for e in v):
            raise ValueError("sweep epsilons must be positive")
        return v


class CriticalSection(Section):
    window: Tuple[int, int] = (200, 1000)
    product_window: Tuple[int, int] = (200, 2000)
    slope_band: Tuple[float, float] = (-2.6, -1.5)
    spread_limit: float = Field(3.0, gt=1.0)
    moment_c: float = Field(1.0, ge=0.0)

    @field_validator("window", "product_window", "slope_band")
    @classmethod
    def ordered_bands(cls, v):
        return _ordered_band(v)


class ProbeSection(Section):
    n: int = Field(16, ge=1)
    j: int = Field(4, ge=1)
    alphas: Optional[List[int]] = None
    ell: int = Field(1, ge=0)
    rho: float = Field(0.5, gt=0.0)


class CouplingSection(Section):
    mc_check: bool = False


class OutputSection(Section):
    directory: str = "out"
    format: Literal["csv", "json"] = "csv"


class ExperimentConfig(Section):
    model: ModelSection
    run: RunSection = RunSection()
    mc: McSection = McSection()
    fit: FitSection = FitSection()
    sweep: SweepSection = SweepSection()
    critical: CriticalSection = CriticalSection()
    probe: ProbeSection = ProbeSection()
    coupling: CouplingSection = CouplingSection()
    output: OutputSection = OutputSection()

    def with_overrides(self, seed: Optional[int] = None, workers: Optional[int] = None,
                       out: Optional[str] = None) -> "ExperimentConfig":
        mc = {k: v for k, v in (("seed", seed), ("workers", workers)) if v is not None}
        output = {"directory": out} if out is not None else {}
        try:
            return self.model_copy(update={
                "mc": McSection.model_validate({**self.mc.model_dump(), **mc}),
                "output": OutputSection.model_validate({**self.output.model_dump(), **output}),
            })
        except ValidationError as e:
            raise ConfigurationError(f"invalid override: {e}") from e


# ── Parsing ───────────────────────────────────────────────────────────────────

def _value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_config_text(text: str) -> dict:
    sections: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or "." not in key:
            raise ConfigurationError(f"line {lineno}: expected 'section.key = value', got '{line}'")
        section, name = key.split(".", 1)
        entries = sections.setdefault(section, {})
        if name in entries:
            raise ConfigurationError(f"line {lineno}: duplicate key '{key}'")
        entries[name] = _value(raw.strip())
    return sections


def build_config(sections: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(sections)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read config '{path}': {e}") from e
    config = build_config(parse_config_text(text))
    logger.debug("loaded config from %s", path)
    return config
