import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infsym import gains, netspec
from infsym.gains import GainMatrix
from infsym.netspec import AffineDynamics


def test_traffic_gain(spec):
    c = spec.classes["cell_low_pair"].certificate
    assert gains.linear_gain(c, c) == pytest.approx(9 / 13, abs=1e-15)


def test_traffic_certificates_consistent(spec):
    for c in spec.classes.values():
        probes = netspec.probe_points(10.0)
        assert c.certificate.check(probes) == []
        assert c.certificate.check_against_affine(c.dynamics, c.output_map, probes) == []


def test_derive_affine_certificate():
    cert = gains.derive_affine_certificate(AffineDynamics(0.5, 2.0, (0.1, -0.3)))
    s = cert.linear_slopes()
    assert s["kappa"] == 0.5 and s["rho_w"] == pytest.approx(0.4) and s["rho_u"] == 2.0
    with pytest.raises(gains.NoCertificate):
        gains.derive_affine_certificate(AffineDynamics(1.0, 1.0, (0.1,)))


@pytest.mark.parametrize("n", [10, 50])
def test_small_gain_traffic_truncations(spec, n):
    net = netspec.instantiate(spec, n)
    dec = netspec.decompose(net)
    certs = {c: k.certificate for c, k in spec.classes.items()}
    gm = gains.build_gain_matrix(net, dec, certs)
    assert all(abs(g - 9 / 13) <= 1e-6 for e in gm.entries for g in e.values())
    # no cross-SCC entries
    assert all(dec.comp_of[i] == dec.comp_of[j] for e in gm.entries for (i, j) in e)
    short = gains.check_small_gain(gm, gains.assumption_bounds(certs))
    exact = gains.check_small_gain(gm, method="cycle-mean")
    for a, b in zip(short, exact):
        assert a.method == "uniform-gain-shortcut"
        assert set(a.sigma.values()) == {1.0}
        assert a.lam == pytest.approx(9 / 13, abs=1e-12)
        assert b.method == "cycle-mean"
        assert abs(b.spectral_radius_estimate - a.lam) <= 1e-9
        assert abs(b.lam - a.lam) <= 1e-9


def test_two_cycle_nonuniform():
    gm = GainMatrix([[1, 2]], [{(1, 2): 2.0, (2, 1): 0.4}])
    rho, cyc = gains.max_cycle_mean([1, 2], gm.entries[0])
    assert rho == pytest.approx(math.sqrt(0.8))
    assert sorted(cyc) == [1, 2]
    (cert,) = gains.check_small_gain(gm)
    assert cert.method == "cycle-mean"
    assert cert.lam < 1.0
    assert gains.contraction_holds(gm.entries[0], cert.sigma, cert.lam)


def test_small_gain_failure():
    gm = GainMatrix([[1, 2]], [{(1, 2): 2.0, (2, 1): 0.6}])
    with pytest.raises(gains.SmallGainFailure) as err:
        gains.check_small_gain(gm)
    assert err.value.estimate == pytest.approx(math.sqrt(1.2))


def _cycle_oracle(members, entries):
    g = nx.DiGraph()
    g.add_nodes_from(members)
    for (i, j), w in entries.items():
        g.add_edge(j, i, w=w)
    best = 0.0
    for cyc in nx.simple_cycles(g):
        ws = [g[cyc[k]][cyc[(k + 1) % len(cyc)]]["w"] for k in range(len(cyc))]
        best = max(best, math.prod(ws) ** (1.0 / len(ws)))
    return best


@settings(max_examples=80, deadline=None)
@given(
    n=st.integers(2, 6),
    data=st.data(),
)
def test_karp_matches_cycle_enumeration(n, data):
    members = list(range(n))
    # a ring keeps the component strongly connected; chords are random
    entries = {((k + 1) % n, k): data.draw(st.floats(0.05, 3.0)) for k in range(n)}
    chords = data.draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=8))
    for i, j in chords:
        entries[(i, j)] = data.draw(st.floats(0.05, 3.0))
    rho, cyc = gains.max_cycle_mean(members, entries)
    assert rho == pytest.approx(_cycle_oracle(members, entries), rel=1e-9)
    # the reported cycle attains the maximum
    ws = [entries[(cyc[(k + 1) % len(cyc)], cyc[k])] for k in range(len(cyc))]
    assert math.prod(ws) ** (1 / len(ws)) == pytest.approx(rho, rel=1e-9)
    if rho < 1.0:
        (cert,) = gains.check_small_gain(GainMatrix([members], [entries]), method="cycle-mean")
        g = gains.gamma_apply(entries, cert.sigma)
        assert all(g[i] <= cert.lam * cert.sigma[i] for i in members)
        assert all(cert.sigma[i] > 0 for i in members)
