# tests/test_config.py
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import pytest
from cli.config import (
    ExperimentConfig, build_config, load_config, parse_config_text,
)
from dist_core.errors import ConfigurationError, DegenerateStarLaw
from dist_core.pmf import DEFAULT_MAX_SUPPORT, DEFAULT_TAU

SAMPLE = """
# binary tree, constant star law
model.m = 2
model.star = [(2, 1.0)]
model.epsilon = 0.01   # p = p_c - epsilon
run.n_max = 400
output.format = json
output.directory = out/sweep
"""


class TestParseConfigText:
    def test_sections_and_literals(self):
        sections = parse_config_text(SAMPLE)
        assert sections["model"] == {"m": 2, "star": [(2, 1.0)], "epsilon": 0.01}
        assert sections["run"] == {"n_max": 400}

    def test_bare_strings_kept(self):
        sections = parse_config_text(SAMPLE)
        assert sections["output"] == {"format": "json", "directory": "out/sweep"}

    def test_missing_equals(self):
        with pytest.raises(ConfigurationError):
            parse_config_text("model.m 2\n")

    def test_missing_section(self):
        with pytest.raises(ConfigurationError):
            parse_config_text("m = 2\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigurationError):
            parse_config_text("model.m = 2\nmodel.m = 3\n")


class TestBuildConfig:
    def test_defaults(self):
        config = build_config({"model": {"p": 0.1}})
        assert config.model.m == 2
        assert config.run.tau == DEFAULT_TAU
        assert config.mc.count == 10_000
        assert config.sweep.epsilons == [0.04, 0.02, 0.01, 0.005]
        assert config.output.format == "csv"

    def test_model_spec_from_epsilon(self):
        spec = build_config(parse_config_text(SAMPLE)).model.to_spec()
        assert spec.p == pytest.approx(0.19)
        assert spec.epsilon == pytest.approx(0.01)

    def test_model_spec_epsilon_override(self):
        model = build_config(parse_config_text(SAMPLE)).model
        assert model.to_spec(epsilon=0.04).p == pytest.approx(0.16)

    def test_p_and_epsilon_both_given(self):
        with pytest.raises(ConfigurationError):
            build_config({"model": {"p": 0.1, "epsilon": 0.1}})

    def test_neither_p_nor_epsilon(self):
        model = build_config({"model": {"m": 2}}).model
        with pytest.raises(ConfigurationError):
            model.to_spec()
        assert model.to_spec(epsilon=0.01).p == pytest.approx(0.19)

    def test_model_section_required(self):
        with pytest.raises(ConfigurationError):
            build_config({})

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            build_config({"model": {"p": 0.1}, "run": {"steps": 10}})

    def test_tau_too_large(self):
        with pytest.raises(ConfigurationError):
            build_config({"model": {"p": 0.1}, "run": {"tau": 1e-6}})

    def test_zero_count(self):
        with pytest.raises(ConfigurationError):
            build_config({"model": {"p": 0.1}, "mc": {"count": 0}})

    def test_unordered_band(self):
        with pytest.raises(ConfigurationError):
            build_config({"model": {"p": 0.1}, "fit": {"band": (0.7, 0.35)}})

    def test_bad_format(self):
        with pytest.raises(ConfigurationError):
            build_config({"model": {"p": 0.1}, "output": {"format": "xml"}})

    def test_arity_one(self):
        with pytest.raises(ConfigurationError):
            build_config({"model": {"m": 1, "p": 0.1}})

    def test_degenerate_star_reported_on_use(self):
        config = build_config({"model": {"star": [(1, 1.0)], "p": 0.1}})
        with pytest.raises(DegenerateStarLaw):
            config.model.to_spec()

    def test_policy(self):
        policy = build_config({"model": {"p": 0.1}, "run": {"tau": 0.0, "support_cap": 64}}).run.policy()
        assert policy.tau == 0.0
        assert policy.support_cap == 64
        assert policy.max_support == DEFAULT_MAX_SUPPORT

    def test_max_support(self):
        config = build_config({"model": {"p": 0.1}, "run": {"max_support": 512}})
        assert config.run.policy().max_support == 512

    def test_max_support_too_small(self):
        with pytest.raises(ConfigurationError):
            build_config({"model": {"p": 0.1}, "run": {"max_support": 1}})

    def test_report_defaults(self):
        config = build_config({"model": {"p": 0.1}})
        assert config.run.escape == 3.0
        assert config.critical.window == (200, 1000)
        assert config.critical.moment_c == 1.0
        assert (config.probe.ell, config.probe.rho) == (1, 0.5)


class TestOverrides:
    def test_flags_replace_values(self):
        config = build_config({"model": {"p": 0.1}}).with_overrides(seed=7, workers=4, out="runs/a")
        assert config.mc.seed == 7
        assert config.mc.workers == 4
        assert config.output.directory == "runs/a"

    def test_unset_flags_keep_values(self):
        config = build_config({"model": {"p": 0.1}, "mc": {"seed": 3}}).with_overrides()
        assert config.mc.seed == 3

    def test_invalid_override(self):
        with pytest.raises(ConfigurationError):
            build_config({"model": {"p": 0.1}}).with_overrides(workers=0)


class TestLoadConfig:
    def test_from_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(SAMPLE)
        config = load_config(path)
        assert isinstance(config, ExperimentConfig)
        assert config.run.n_max == 400

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "absent.cfg")
