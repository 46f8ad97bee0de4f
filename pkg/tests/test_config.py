import json

import pytest
from hypothesis import given, strategies as st

from nftlab.config import (ExperimentConfig, build_config, config_from_dict, load_config, loads_config,
                           with_seeds)
from nftlab.errors import ConfigError


def test_profiles_differ_only_where_expected():
    paper = build_config({}, "paper")
    desk = build_config({}, "desk")
    assert paper.protect.iters == 800 and paper.protect.K == 50
    assert desk.protect.iters < paper.protect.iters
    assert paper.attack == desk.attack


def test_generation_profiles_switch_losses():
    for profile in ("paper", "desk"):
        cfg = build_config({"task_mode": "generation"}, profile)
        assert (cfg.protect.loss_alpha, cfg.protect.loss_beta) == ("DoS", "MSE")


def test_overrides_merge_into_the_profile():
    cfg = loads_config("protect:\n  K: 7\nseeds: [3]\n")
    assert cfg.protect.K == 7 and cfg.protect.N == build_config().protect.N and cfg.seeds == (3,)


@pytest.mark.parametrize("text, where, what", [
    ("task_mode: classification\nprotect:\n  bogus: 1\n", ":3:", "protect.bogus: unknown key"),
    ("seeds: [0]\npretrain:\n  optimizer:\n    kind: lbfgs\n", ":3:", "unknown optimizer"),
    ("protect:\n  alpha: fast\n", ":2:", "expected a number"),
    ("protect:\n  K: 2.5\n", ":2:", "expected an integer"),
    ("attack:\n  strategies: [LoRA]\n", ":1:", "unknown attack strategy"),
    ("task_mode: generation\nprotect:\n  loss_alpha: ICE\n", ":2:", "classification needs"),
    ("seeds: [1, 1]\n", "", "distinct"),
])
def test_schema_errors_name_the_line(text, where, what):
    with pytest.raises(ConfigError) as err:
        loads_config(text, source="f.yaml")
    msg = str(err.value)
    assert msg.startswith("f.yaml") and where in msg and what in msg


def test_malformed_yaml_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not valid YAML"):
        loads_config("a: [1\n")
    with pytest.raises(ConfigError, match="mapping"):
        loads_config("- 1\n")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.yaml")


def test_shipped_configs_load():
    for name in ("desk_classification", "desk_generation"):
        assert load_config(f"configs/{name}.yaml").seeds == (0, 1, 2, 3, 4)
    assert load_config("configs/paper_classification.yaml", "paper").protect.K == 50


@given(st.integers(1, 60), st.floats(1e-5, 1e-1), st.sampled_from(["classification", "generation"]))
def test_dict_round_trip_preserves_hash(k, alpha, mode):
    cfg = build_config({"task_mode": mode, "protect": {"K": k, "alpha": alpha}})
    again = config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.config_hash() == cfg.config_hash()


def test_hash_tracks_content():
    a = build_config()
    assert a.config_hash() != with_seeds(a, [0]).config_hash()
    assert a.config_hash() != build_config({"protect": {"alpha": 1e-3}}).config_hash()
    assert len(a.config_hash()) == 64


def test_seed_rules():
    with pytest.raises(ConfigError):
        with_seeds(build_config(), [])
    with pytest.raises(ConfigError):
        with_seeds(build_config(), [-1])
    assert isinstance(with_seeds(build_config(), [9]), ExperimentConfig)
