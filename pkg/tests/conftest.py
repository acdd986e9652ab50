"""Shared fixtures: toy networks with hand-checkable hydraulics and the two
bundled systems. Everything here is deterministic."""

from __future__ import annotations

import numpy as np
import pytest

from pumpsurge.network import Network, load_bundled, parse_network

# Reservoir at 50 m feeding one junction through a single pipe: the junction
# head is 50 minus the closed-form Hazen-Williams loss (see test_hydraulics).
TOY_GRAVITY = """\
[JUNCTIONS]
J1 10.0 10.0
[RESERVOIRS]
R1 50.0
[PIPES]
P1 R1 J1 1000.0 200.0 120.0
"""

# Reservoir -> pump -> two junctions in series; exercises the pump equations.
TOY_PUMPED = """\
[JUNCTIONS]
J1 5.0 20.0
J2 5.0 15.0
[RESERVOIRS]
R1 10.0
[PUMPS]
PU1 R1 J1 HC1 EC1 2
[PIPES]
P1 J1 J2 800.0 250.0 110.0
[CURVES]
HC1 0.0 60.0
HC1 40.0 50.0
HC1 80.0 20.0
EC1 10.0 0.55
EC1 40.0 0.78
EC1 70.0 0.60
"""

# Pumped loop with a tank so tank_flows and the feed term are exercised.
TOY_TANKED = """\
[JUNCTIONS]
J1 5.0 18.0
J2 5.0 12.0
J3 5.0 0.0
[RESERVOIRS]
R1 10.0
[TANKS]
T1 42.0
[PUMPS]
PU1 R1 J1 HC1 EC1 1
[PIPES]
P1 J1 J2 600.0 250.0 110.0
P2 J2 J3 600.0 200.0 110.0
P3 J3 T1 400.0 150.0 110.0
[CURVES]
HC1 0.0 55.0
HC1 30.0 46.0
HC1 60.0 19.0
EC1 10.0 0.50
EC1 35.0 0.75
EC1 60.0 0.55
"""


@pytest.fixture(scope="session")
def toy_gravity() -> Network:
    return parse_network(TOY_GRAVITY)


@pytest.fixture(scope="session")
def toy_pumped() -> Network:
    return parse_network(TOY_PUMPED)


@pytest.fixture(scope="session")
def toy_tanked() -> Network:
    return parse_network(TOY_TANKED)


@pytest.fixture(scope="session")
def anytown() -> Network:
    return load_bundled("anytown-mod")


@pytest.fixture(scope="session")
def dtown() -> Network:
    return load_bundled("dtown-mod")


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
