import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flowstab.flows import FlowField, NodeProportional, PhaseProportional, SaturatingExp
from flowstab.inflow import InflowSignal, Sinusoid
from flowstab.network import FlowGraph, FlowNetwork

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def routing_from(n, entries):
    """Dense routing matrix from 1-based {(i, j): fraction}."""
    R = np.zeros((n, n))
    for (i, j), v in entries.items():
        R[i - 1, j - 1] = v
    return R


TABLE_A = {(1, 2): .6, (1, 5): .4, (2, 7): .1, (2, 3): .3, (2, 4): .6,
           (3, 6): 1, (5, 6): 1, (7, 2): .5, (7, 5): .5}
TABLE_B = {(1, 2): .7, (1, 5): .3, (2, 7): .3, (2, 3): .4, (2, 4): .3,
           (3, 6): 1, (5, 6): 1, (7, 2): .3, (7, 5): .7}


@pytest.fixture
def two_link_cycle():
    g = FlowGraph.from_edges([("a", "b"), ("b", "a")])
    R = np.array([[0.0, 0.9], [1.0, 0.0]])
    return FlowNetwork.checked(g, R)


@pytest.fixture
def two_link_field(two_link_cycle):
    g = two_link_cycle.graph
    return FlowField(g, (SaturatingExp(1.0), SaturatingExp(100.0)))


@pytest.fixture
def series_nodes():
    g = FlowGraph.from_edges([("v1", "v2")] * 2 + [("v2", "v3")] * 2)
    R = np.zeros((4, 4))
    R[0, 2] = R[0, 3] = 0.5
    R[1, 3] = 1.0
    return FlowNetwork.checked(g, R)


@pytest.fixture
def series_field(series_nodes):
    return FlowField.uniform(series_nodes.graph, NodeProportional(1.0))


def sinusoid_pair(A, phi):
    return InflowSignal([Sinusoid(A, 1.0, 0.0), Sinusoid(A, 1.0, phi), None, None])


@pytest.fixture
def junction():
    g = FlowGraph.from_edges([(f"n{k}", "c") for k in range(1, 5)])
    net = FlowNetwork.checked(g, np.zeros((4, 4)))
    field = FlowField.uniform(g, PhaseProportional(0.1, ((0, 2), (1, 3))))
    return net, field


@pytest.fixture
def seven_links():
    return FlowGraph.from_edges(
        [("src", "n0"), ("n0", "n1"), ("n1", "n2"), ("n1", "n3"), ("n0", "n2"), ("n2", "n3"), ("n1", "n0")]
    )


@pytest.fixture
def local_node():
    g = FlowGraph.from_edges([("a", "v"), ("b", "v"), ("c", "v")])
    net = FlowNetwork.checked(g, np.zeros((3, 3)))
    return net, FlowField.uniform(g, NodeProportional(1.0))


@pytest.fixture
def single_link():
    g = FlowGraph.from_edges([("a", "b")])
    return FlowNetwork.checked(g, np.zeros((1, 1))), FlowField.uniform(g, SaturatingExp(1.0))


PI = math.pi


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.acceptance_lines)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
