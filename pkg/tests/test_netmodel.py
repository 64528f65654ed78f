import dataclasses
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aquactrl.netmodel import (GPM_TO_CFS, NetworkError, demand_vector, parse_network, serialize_network,
                               validate_network, with_changes)


def test_three_node_counts(three_node):
    net = three_node
    assert (net.n_R, net.n_M, net.n_J, net.n_P, net.n_TK) == (1, 1, 1, 1, 1)


def test_net1_counts(net1):
    assert (net1.n_R, net1.n_M, net1.n_TK, net1.n_J, net1.n_P) == (1, 1, 1, 9, 12)


def test_empty_nodes_rejected(three_node):
    doc = json.loads(serialize_network(three_node))
    doc["nodes"] = {"reservoirs": [], "junctions": [], "tanks": []}
    with pytest.raises(NetworkError, match="no nodes"):
        parse_network(doc)


def test_syntax_error_reports_position():
    with pytest.raises(NetworkError, match="line 1 column 2"):
        parse_network("{bad")


def test_unknown_unit_tag(three_node):
    doc = json.loads(serialize_network(three_node))
    doc["links"]["pipes"][0]["length"]["unit"] = "furlong"
    with pytest.raises(NetworkError):
        parse_network(doc)


def test_missing_node_reference(three_node):
    doc = json.loads(serialize_network(three_node))
    doc["links"]["pipes"][0]["to"] = "nowhere"
    with pytest.raises(NetworkError):
        parse_network(doc)


def test_valid_network_has_no_diagnostics(three_node, net1):
    assert validate_network(three_node) == []
    assert validate_network(net1) == []


def test_tank_initial_head_diagnostic(three_node):
    tk = dataclasses.replace(three_node.tanks[0], h_init=three_node.tanks[0].h_max + 1)
    diags = validate_network(with_changes(three_node, tanks=(tk,)))
    assert any("tank initial head above maximum" in d and "TK1" in d for d in diags)


def test_nonpositive_length_diagnostic(three_node):
    p = dataclasses.replace(three_node.pipes[0], length=0.0)
    diags = validate_network(with_changes(three_node, pipes=(p,)))
    assert any("nonpositive length" in d and "P1" in d for d in diags)


def test_zero_demand_vector(three_node):
    j = dataclasses.replace(three_node.junctions[0], demand_base=0.0)
    net = with_changes(three_node, junctions=(j,))
    assert np.all(demand_vector(net, 0.0) == 0.0)


def test_demand_conversion_hand_arithmetic(three_node):
    # 100 GPM base with a 1.5 multiplier
    j = dataclasses.replace(three_node.junctions[0], demand_base=100 * GPM_TO_CFS, pattern="p")
    net = with_changes(three_node, junctions=(j,), patterns={"p": (1.5,) * 24})
    expected = float(Fraction(150) * Fraction("0.0022280093"))
    assert demand_vector(net, 0.0)[0] == pytest.approx(expected, rel=1e-12)
    assert demand_vector(net, 0.0)[0] == pytest.approx(150 * 0.0022280, rel=1e-5)


def test_last_boundary_uses_final_multiplier(three_node):
    net = three_node
    mult = net.patterns["daily"]
    base = net.junctions[0].demand_base
    assert demand_vector(net, net.horizon)[0] == pytest.approx(base * mult[-1], rel=1e-14)


def test_demand_outside_horizon(three_node):
    with pytest.raises(ValueError):
        demand_vector(three_node, three_node.horizon + 1)
    with pytest.raises(ValueError):
        demand_vector(three_node, -1.0)


def test_round_trip(three_node, net1):
    for net in (three_node, net1):
        assert parse_network(serialize_network(net)) == net


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 86400 - 1e-6))
def test_demand_piecewise_constant(three_node, t):
    net = three_node
    k = int(t // net.dt_hydraulic)
    start = k * net.dt_hydraulic
    assert np.array_equal(demand_vector(net, t), demand_vector(net, start))
