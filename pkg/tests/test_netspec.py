from fractions import Fraction

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infsym import netspec
from infsym.netspec import BoxSet, Constant

from conftest import ring_raw


def test_parse_number_exact():
    p = {"tau": netspec.parse_number("10/3600")}
    assert p["tau"] == Fraction(1, 360)
    assert netspec.parse_number("abs(-2) * tau", p) == Fraction(1, 180)
    assert netspec.parse_number("0.1") == Fraction(1, 10)
    with pytest.raises(netspec.SpecError):
        netspec.parse_number("__import__('os')")


def test_traffic_parameters(spec):
    q = spec.parameters["q"]
    assert q == Fraction(1, 3)
    c = spec.classes["cell_low_pair"]
    assert c.dynamics.a == pytest.approx(1 - 1 / 3 - 0.1)
    assert c.dynamics.d == pytest.approx((0.15, 0.15))
    assert spec.classes["cell_low_single"].dynamics.d == pytest.approx((0.3,))


def test_validate_traffic(spec):
    report = netspec.validate(spec)
    assert report.ok, report.diagnostics
    assert set(report.bounds.values()) == {5.0}


def test_boxset_span():
    assert BoxSet.interval(5, 15).span() == 10
    assert BoxSet(((0, 1), (2, 2.5))).span() == 0.5


def test_large_e_gives_certificate_diagnostic(raw):
    raw["parameters"]["e"] = "1.5"
    report = netspec.validate(netspec.load_spec(raw))
    assert not report.ok
    assert any(d.code == "certificate" for d in report.diagnostics)


def test_arity_mismatch(raw):
    raw["subnetworks"][0]["rules"][1]["neighbors"] = [1]
    report = netspec.validate(netspec.load_spec(raw))
    assert any(d.code == "arity" for d in report.diagnostics)


def test_missing_link_under_cross_feed(raw):
    raw["links"] = raw["links"][:1]
    report = netspec.validate(netspec.load_spec(raw))
    assert any(d.code == "topology" for d in report.diagnostics)


def test_instantiate_small(spec):
    net = netspec.instantiate(spec, 4)
    assert len(net) == 16
    assert net.node(1).slots == (2, 3)
    assert net.node(2).slots == (1,)
    assert net.node(2).cls == "cell_low_single"
    # G3 node 2 reads G2 node 1 through the link, then G3 node 1
    assert net.node(net.gid("G3", 2)).slots == (net.gid("G2", 1), net.gid("G3", 1))


def test_truncation_below_arity(spec):
    with pytest.raises(netspec.InstantiationError):
        netspec.instantiate(spec, 1)


def test_wrap_and_constant_hold():
    wrap = netspec.instantiate(netspec.load_spec(ring_raw()), 5)
    assert wrap.node(1).slots == (5,)
    held = netspec.instantiate(netspec.load_spec(ring_raw(rule="constant-hold")), 5)
    assert held.node(1).slots == (Constant(1.0),)
    assert held.node(3).slots == (2,)


def test_decompose_traffic(spec):
    dec = netspec.decompose(netspec.instantiate(spec, 10))
    assert dec.labels == ["G1", "G2", "G3", "G4"]
    assert dec.edges == {(1, 2), (2, 3)}
    assert sorted(dec.bottom_labels()) == ["G1", "G4"]


def test_declared_scc_that_splits():
    held = netspec.instantiate(netspec.load_spec(ring_raw(rule="constant-hold")), 5)
    with pytest.raises(netspec.TopologyError):
        netspec.decompose(held)


def _nx_sccs(net):
    g = nx.DiGraph()
    g.add_nodes_from(v.gid for v in net.nodes)
    g.add_edges_from((j, i) for i, js in net.in_neighbors.items() for j in js)
    return {frozenset(c) for c in nx.strongly_connected_components(g)}


@pytest.mark.parametrize("n", [4, 5, 10, 37])
def test_tarjan_matches_networkx(spec, n):
    net = netspec.instantiate(spec, n)
    assert set(netspec.decompose(net).components) == _nx_sccs(net)


@settings(max_examples=60, deadline=None)
@given(edges=st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12)), max_size=40))
def test_tarjan_random_graphs(edges):
    verts = list(range(13))
    succ = {v: [b for a, b in edges if a == v] for v in verts}
    ours = {frozenset(c) for c in netspec.tarjan(verts, lambda v: succ[v])}
    g = nx.DiGraph()
    g.add_nodes_from(verts)
    g.add_edges_from(edges)
    assert ours == {frozenset(c) for c in nx.strongly_connected_components(g)}


def test_role_graph(spec):
    rg = netspec.role_graph(spec)
    assert len(rg.roles) == 6
    g2p, g2s = ("G2", "cell_low_pair"), ("G2", "cell_low_single")
    g3 = ("G3", "cell_high_pair")
    assert rg.cross_in(g3) == [g2p]
    assert rg.intra(g2s) == [g2p]
    assert set(rg.intra(g2p)) == {g2p, g2s}
    assert rg.cross_out(g2p) == [g3]


@settings(max_examples=25, deadline=None)
@given(n=st.integers(min_value=4, max_value=60))
def test_truncation_edges_within_role_graph(spec, n):
    rg = netspec.role_graph(spec)
    assert netspec.truncation_role_edges(netspec.instantiate(spec, n, validate_first=False)) <= rg.edges
