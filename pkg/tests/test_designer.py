import json

import pytest

from infsym import designer, netspec
from infsym.designer import DesignOptions, InfeasibleDesign, snap_pitch
from infsym.netspec import BoxSet

from conftest import ring_raw


def test_traffic_design_values(design):
    assert design.epsilon_hat == pytest.approx(0.8)
    for d in design.roles.values():
        assert d.varpi == pytest.approx(0.8, abs=1e-15)
        assert d.vartheta == pytest.approx(0.8, abs=1e-15)
        assert d.eta_u == 0.0
        assert abs(d.eta_x_bound - 0.32 / 3) <= 1e-12
        assert d.eta_x == 0.1
    assert set(design.phi.values()) == {0.0}


def test_peeling_order(design):
    first = {r[0] for r in design.order[0]} | {r[0] for r in design.order[1]}
    assert {"G1", "G4"} <= first
    assert design.roles[("G1", "cell_low_pair")].provenance["varpi"] == "line 5"
    assert design.roles[("G2", "cell_low_pair")].provenance["varpi"] == "line 7"


def test_scaling(spec, design):
    half = designer.run_algorithm1(spec, 0.4)
    for r, d in design.roles.items():
        h = half.roles[r]
        assert h.varpi == pytest.approx(0.5 * d.varpi, rel=1e-12)
        assert h.vartheta == pytest.approx(0.5 * d.vartheta, rel=1e-12)
        assert h.eta_x_bound == pytest.approx(0.5 * d.eta_x_bound, rel=1e-12)
    assert half.roles[("G1", "cell_low_pair")].eta_x == 0.05


def test_verify_traffic(spec, design):
    rep = designer.verify_design(design, spec)
    assert rep.ok
    slacks = [r["slack"] for r in rep.secquantinit]
    assert all(abs(s - 0.1 / 15) <= 1e-9 for s in slacks)
    assert all(r["slack"] >= 0 for r in rep.compoquaninit)


def test_verify_catches_forged_vartheta(spec, design):
    forged = designer.QuantDesign.from_dict(design.to_dict())
    forged.roles[("G3", "cell_high_pair")].vartheta = 0.5
    rep = designer.verify_design(forged, spec)
    assert not rep.ok
    with pytest.raises(designer.VerificationFailure):
        designer.verify_design(forged, spec, raise_on_failure=True)


def test_verify_catches_forged_eta(spec, design):
    forged = designer.QuantDesign.from_dict(design.to_dict())
    forged.roles[("G1", "cell_low_pair")].eta_x = 0.2
    assert not designer.verify_design(forged, spec).ok


def test_slack_mode_boundary_case(spec):
    d = designer.run_algorithm1(spec, 0.8, DesignOptions(phi_mode="slack"))
    assert any(p > 0 for p in d.phi.values())
    assert designer.verify_design(d, spec).ok
    # phi set so that the coupling inequality is tight still passes
    tight = designer.QuantDesign.from_dict(d.to_dict())
    for (i, j) in tight.phi:
        if i[0] == j[0]:
            tight.phi[(i, j)] = tight.roles[i].vartheta - tight.roles[j].varpi
    assert all(r["ok"] for r in designer.verify_design(tight, spec).compoquaninit)


def test_eta_override(spec):
    d = designer.run_algorithm1(spec, 0.8, DesignOptions(eta_x=0.05))
    assert {r.eta_x for r in d.roles.values()} == {0.05}
    with pytest.raises(InfeasibleDesign):
        designer.run_algorithm1(spec, 0.8, DesignOptions(eta_x=0.2))


def test_small_gain_failure_propagates():
    spec = netspec.load_spec(ring_raw(a="0.5", d="0.6"))
    from infsym.gains import SmallGainFailure

    with pytest.raises(SmallGainFailure):
        designer.run_algorithm1(spec, 0.5)


def test_ring_design_verifies():
    spec = netspec.load_spec(ring_raw())
    d = designer.run_algorithm1(spec, 0.5)
    assert designer.verify_design(d, spec).ok
    (r,) = d.roles.values()
    # room = 0.5 * (1 - 0.5) - 0.2 * 0.5 = 0.15
    assert r.eta_x_bound == pytest.approx(0.15)
    assert r.eta_x == 0.1


@pytest.mark.parametrize(
    "bound, boxes, want",
    [
        (0.10667, ((5, 15),), 0.1),
        (0.3, ((5, 15),), 0.2),
        (0.0667, ((5, 15),), 0.05),
        (0.15, ((0, 4),), 0.1),
        (7.0, ((0, 4), (6, 10)), 2.0),
        (0.0, ((0, 1),), 0.0),
    ],
)
def test_snap_pitch(bound, boxes, want):
    assert snap_pitch(bound, BoxSet(boxes)) == want


def test_json_roundtrip(design):
    doc = json.loads(json.dumps(design.to_dict()))
    back = designer.QuantDesign.from_dict(doc)
    assert back.to_dict() == design.to_dict()


def test_options_validation():
    with pytest.raises(ValueError):
        DesignOptions(theta=1.0)
    with pytest.raises(ValueError):
        DesignOptions(phi_mode="other")
