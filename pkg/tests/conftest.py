from __future__ import annotations

import pytest

from flowreplay.fixtures import fixture_path
from flowreplay.record import load_script, record
from flowreplay.world import load_world


@pytest.fixture(scope="session")
def demo_world():
    return load_world(fixture_path("demo_world.json"))


@pytest.fixture(scope="session")
def script_a():
    return load_script(fixture_path("trace_a_script.json"))


@pytest.fixture(scope="session")
def script_b():
    return load_script(fixture_path("trace_b_script.json"))


@pytest.fixture(scope="session")
def trace_a(demo_world, script_a):
    return record(script_a, demo_world)


@pytest.fixture(scope="session")
def trace_b(demo_world, script_b):
    return record(script_b, demo_world)
