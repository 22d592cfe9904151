import copy
import json

import pytest

from infsym import abstraction, designer, netspec, synthesis
from infsym.cli import bundled_config

TRAFFIC = bundled_config()


def traffic_raw():
    return json.loads(TRAFFIC.read_text())


def ring_raw(a="0.5", d="0.2", b="1", inputs=("-1", "0", "1"), x=("0", "4"), safe=None, rule="wrap"):
    """One subnetwork, every node reads its predecessor."""
    return {
        "classes": {
            "c": {
                "state_set": [list(x)],
                "safe_set": [list(safe or x)],
                "input_set": {"values": list(inputs)},
                "dynamics": {"kind": "affine", "a": a, "b": b, "d": [d]},
            }
        },
        "subnetworks": [{"id": "R", "rules": [{"class": "c", "neighbors": [-1]}], "hold_value": "1"}],
        "boundary_rule": rule,
    }


@pytest.fixture(scope="session")
def spec():
    return netspec.load_spec(TRAFFIC)


@pytest.fixture(scope="session")
def design(spec):
    return designer.run_algorithm1(spec, 0.8)


@pytest.fixture(scope="session")
def traffic_models(spec, design):
    base = abstraction.plan_models(spec, design)
    return base, abstraction.build_models(spec, base)


@pytest.fixture(scope="session")
def traffic_controllers(spec, traffic_models):
    _, models = traffic_models
    return synthesis.synthesize_all(spec, models)


@pytest.fixture
def raw():
    return copy.deepcopy(traffic_raw())


# acceptance lines, filled by test_acceptance.py and printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
