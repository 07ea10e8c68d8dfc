#!/usr/bin/env python

import json
import os
import re
import tempfile

import pytest

from pmlab import cli
from pmlab.cli import build_parser, main
from pmlab.runner import EXIT_ERROR, EXIT_OK, EXIT_VIOLATION, randomized_suite, run_scenario


HEADER = """
seed: 11;
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
}
"""


def scenario(experiments="", header=HEADER):
    folder = tempfile.mkdtemp()
    path = os.path.join(folder, "scenario.pm")
    with open(path, "w") as handle:
        handle.write(header + experiments)
    return path, os.path.join(folder, "out")


def report_of(out):
    with open(os.path.join(out, "report.json")) as handle:
        return json.load(handle)


## scenarios

def test_empty_scenario():
    path, out = scenario()
    assert run_scenario(path, out=out) == EXIT_OK
    report = report_of(out)
    assert report["experiments"] == []
    assert report["seed"] == 11
    assert len(report["config_hash"]) == 64


def test_counterexample_scenario():
    path, out = scenario("experiment counterexample { k: 1; }")
    assert run_scenario(path, out=out) == EXIT_OK
    (entry,) = report_of(out)["experiments"]
    assert entry["status"] == "pass"
    assert entry["result"]["entries"][0]["quotient"] <= -0.72 + 1e-12
    with open(os.path.join(out, entry["table"])) as handle:
        assert handle.readline().startswith("k,states,joint_states,quotient")


def test_experiments_keep_their_order():
    path, out = scenario("experiment variance_order { }\n"
                         "experiment spectral_sandwich { random_sets: 4; }\n"
                         "experiment drift_imh { exponent: 2; }\n")
    assert run_scenario(path, out=out, jobs=3) == EXIT_OK
    report = report_of(out)
    assert [e["kind"] for e in report["experiments"]] == ["variance_order", "spectral_sandwich", "drift_imh"]
    assert all(e["status"] == "pass" for e in report["experiments"])
    assert os.path.exists(os.path.join(out, "01-spectral_sandwich.csv"))


def test_seed_override():
    path, out = scenario("experiment spectral_sandwich { random_sets: 2; }")
    assert run_scenario(path, out=out, seed_override=5) == EXIT_OK
    assert report_of(out)["seed"] == 5


def test_violation_dumps_the_instance():
    path, out = scenario("experiment drift_imh { exponent: 0.5; }")
    assert run_scenario(path, out=out) == EXIT_VIOLATION
    (entry,) = report_of(out)["experiments"]
    assert entry["status"] == "violation"
    with open(os.path.join(out, "00-drift_imh-instance.json")) as handle:
        assert json.load(handle)["exponent"] == 0.5


def test_errors_outrank_violations():
    path, out = scenario("experiment drift_rwm { }\nexperiment drift_imh { exponent: 0.5; }")
    assert run_scenario(path, out=out) == EXIT_ERROR
    statuses = [e["status"] for e in report_of(out)["experiments"]]
    assert statuses == ["error", "violation"]


def test_bad_scenario():
    start = HEADER.index("family {")
    path, out = scenario(header=HEADER[:start])
    assert run_scenario(path, out=out) == EXIT_ERROR
    assert not os.path.exists(os.path.join(out, "report.json"))


## randomized suite

def test_randomized_suite():
    report = randomized_suite(6, max_states=5, max_atoms=3, seed=2)
    assert report["count"] == 6
    assert all(slack >= -1e-8 for slack in report["min_slacks"].values())
    assert "pseudo_above_marginal" in report["min_slacks"]
    assert "acceptance_full" in report["min_slacks"]
    assert randomized_suite(6, max_states=5, max_atoms=3, seed=2) == report


def test_randomized_suite_at_scale():
    report = randomized_suite(500, max_states=8, max_atoms=4, seed=2024, jobs=4)
    assert report["count"] == 500
    slacks = report["min_slacks"]
    for name, slack in slacks.items():
        tolerance = 1e-10 if name.startswith("acceptance_") else 1e-8
        assert slack >= -tolerance, name
    assert "pseudo_above_marginal" in slacks
    assert "acceptance_full" in slacks
    assert "imh_positivity" in slacks


def test_randomized_suite_with_constant_weights():
    report = randomized_suite(1, seed=4, constant=True)
    assert report["min_slacks"]["pseudo_above_marginal"] == pytest.approx(0.0, abs=1e-8)
    assert report["min_slacks"]["constant_weight_equality"] == pytest.approx(0.0, abs=1e-8)


def test_randomized_suite_needs_instances():
    with pytest.raises(ValueError):
        randomized_suite(0)


## command line

def test_parser():
    args = build_parser().parse_args(["run", "--config", "a.pm", "--jobs", "2"])
    assert args.command == "run"
    assert args.jobs == 2
    assert args.seed_override is None
    with pytest.raises(SystemExit):
        build_parser().parse_args(["random"])


def test_documented_usage_parses():
    usages = [line.split(None, 1)[1] for line in cli.__doc__.splitlines() if line.strip().startswith("pmlab ")]
    assert len(usages) == 2
    for usage in usages:
        words = re.sub(r"\[[^\]]*\]", "", usage).split()
        args = build_parser().parse_args(["3" if word in ("N", "S") else word for word in words])
        if args.command == "run":
            assert os.path.splitext(args.config)[1] == ".pm"


def test_main_run():
    path, out = scenario("experiment counterexample { k: 1; }")
    assert main(["run", "--config", path, "--out", out]) == EXIT_OK
    assert report_of(out)["experiments"][0]["kind"] == "counterexample"


def test_main_random():
    out = os.path.join(tempfile.mkdtemp(), "random")
    assert main(["random", "--count", "2", "--seed", "3", "--max-states", "4", "--out", out]) == EXIT_OK
    assert report_of(out)["count"] == 2
    assert main(["random", "--count", "0", "--seed", "3"]) == EXIT_ERROR


if __name__ == "__main__":
    for name, test in sorted(globals().items()):
        if name.startswith("test_"):
            test()
    print("all tests passed.")
