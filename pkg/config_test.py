#!/usr/bin/env python

import os
import tempfile

import pytest

from pmlab.config import load_scenario, parse, tokenize
from pmlab.config.tree import Block, Declaration
from pmlab.errors import ConfigError
from pmlab.target_models import ContinuousModel, ModelSpec
from pmlab.weight_models import Averaged, TwoPoint


SCENARIO = """
/* four-state independence sampler */
seed: 7;
output_dir: "results";

model imh4 {
    space: finite;
    states: 4;
    target: masses;
    masses: 1, 2, 3, 4;
    proposal: independent;
}

family {
    kind: two_point;
    low: 0.5;
    p_low: 0.8;
    nodes: 32;
}

# experiments run in order
experiment variance_order {
    g: 0, 1, 2, 3;
}
experiment counterexample {
    k: 1;
}
"""


def replace(text, old, new):
    assert old in text
    return text.replace(old, new)


## tokens

def test_tokenize():
    assert tokenize("seed: 7;") == [("IDENT", "seed", 1), (":", ":", 1), ("NUMBER", 7, 1), (";", ";", 1)]


def test_numbers():
    values = [value for kind, value, _ in tokenize("-1 0.5 1e-3 +2") if kind == "NUMBER"]
    assert values == [-1, 0.5, 1e-3, 2]
    assert isinstance(values[0], int)
    assert isinstance(values[1], float)


def test_strings_and_comments():
    tokens = tokenize("name: 'a b'; /* one\ntwo */ # three\nnext")
    assert tokens[2] == ("STRING", "a b", 1)
    assert tokens[-1] == ("IDENT", "next", 3)


def test_illegal_character():
    with pytest.raises(ConfigError) as info:
        tokenize("a: 1;\n\nb: @;")
    assert info.value.line == 3


## parser

def test_parse_tree():
    tree = parse("a: 1, x;\nb c { d: 'e'; }")
    expected = Block("config", items=[Declaration("a", [1, "x"]), Block("b", "c", [Declaration("d", ["e"])])])
    assert tree == expected
    assert tree.blocks("b")[0].line == 2
    assert tree.declarations()["a"].value == [1, "x"]


def test_parse_empty():
    assert parse("") == Block("config")


def test_syntax_errors():
    with pytest.raises(ConfigError) as info:
        parse("a: 1;\nb: ;")
    assert info.value.line == 2
    with pytest.raises(ConfigError):
        parse("a { b: 1;")
    with pytest.raises(ConfigError):
        parse("a: 1")


## scenarios

def test_load_scenario():
    config = load_scenario(SCENARIO)
    assert config.seed == 7
    assert config.output_dir == "results"
    assert isinstance(config.model, ModelSpec)
    assert config.model.name == "imh4"
    assert config.model.size == 4
    assert isinstance(config.family, TwoPoint)
    assert config.grid_options == {"nodes": 32}
    assert [e.kind for e in config.experiments] == ["variance_order", "counterexample"]
    assert config.experiments[0].get("g") == [0, 1, 2, 3]
    assert config.experiments[1].get("k") == 1
    assert config.experiments[1].get("truncation") is None


def test_load_scenario_from_a_file():
    path = os.path.join(tempfile.mkdtemp(), "scenario.pm")
    with open(path, "w") as handle:
        handle.write(SCENARIO)
    config = load_scenario(path)
    assert config.config_hash == load_scenario(SCENARIO).config_hash
    assert len(config.config_hash) == 64


def test_missing_file():
    with pytest.raises(ConfigError):
        load_scenario(os.path.join(tempfile.mkdtemp(), "absent.pm"))


def test_default_output_dir():
    assert load_scenario(replace(SCENARIO, 'output_dir: "results";', "")).output_dir == "out"


def test_missing_family():
    start = SCENARIO.index("family {")
    end = SCENARIO.index("}", start) + 1
    with pytest.raises(ConfigError) as info:
        load_scenario(SCENARIO[:start] + SCENARIO[end:])
    assert info.value.key == "family"


def test_missing_key():
    with pytest.raises(ConfigError) as info:
        load_scenario(replace(SCENARIO, "p_low: 0.8;", ""))
    assert info.value.key == "family.p_low"
    assert "family.p_low" in str(info.value)


def test_seed_must_be_an_integer():
    with pytest.raises(ConfigError) as info:
        load_scenario(replace(SCENARIO, "seed: 7;", "seed: 7.5;"))
    assert info.value.key == "seed"
    with pytest.raises(ConfigError):
        load_scenario(replace(SCENARIO, "seed: 7;", ""))


def test_unknown_names():
    with pytest.raises(ConfigError) as info:
        load_scenario(replace(SCENARIO, "experiment counterexample", "experiment bogus"))
    assert info.value.key == "experiment[1]"
    with pytest.raises(ConfigError) as info:
        load_scenario(SCENARIO + "plot { width: 3; }")
    assert info.value.key == "plot"
    with pytest.raises(ConfigError):
        load_scenario(replace(SCENARIO, "kind: two_point;", "kind: cauchy;"))


def test_mass_count_must_match():
    with pytest.raises(ConfigError) as info:
        load_scenario(replace(SCENARIO, "masses: 1, 2, 3, 4;", "masses: 1, 2, 3;"))
    assert info.value.key == "model.masses"


def test_random_walk_model():
    text = replace(SCENARIO, "proposal: independent;", "proposal: random_walk;\n    steps: -1, 1;")
    model = load_scenario(text).model
    assert model.proposal.escape[0] == pytest.approx(0.5)


def test_continuous_model():
    text = """
    seed: 1;
    model { space: continuous; target: quartic; scale: 0.5; }
    family { kind: lognormal; sigma: 0.3; }
    experiment drift_rwm { eta: 0.25; }
    """
    config = load_scenario(text)
    assert isinstance(config.model, ContinuousModel)
    assert config.model.scale == 0.5
    assert config.model.target.upper == 10.0


def test_averaged_family():
    config = load_scenario(replace(SCENARIO, "p_low: 0.8;", "p_low: 0.8;\n    average: 4;"))
    assert isinstance(config.family, Averaged)
    assert config.family.n == 4
    assert isinstance(config.family.base, TwoPoint)


if __name__ == "__main__":
    for name, test in sorted(globals().items()):
        if name.startswith("test_"):
            test()
    print("all tests passed.")
