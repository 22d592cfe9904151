import numba
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infsym import abstraction, netspec, synthesis
from infsym.abstraction import OUT, Grid, ModelKey, SymbolicModel
from infsym.netspec import BoxSet


# -- brute-force oracles: explicit triple loops, set shrinking from the full safe grid


def oracle_python(lo, hi, safe, safe_w):
    dom = {int(i) for i in np.flatnonzero(safe)}
    nx, nu, _ = lo.shape
    while True:
        keep = set()
        for x in dom:
            for u in range(nu):
                ok = True
                for w in safe_w:
                    a, b = int(lo[x, u, w]), int(hi[x, u, w])
                    if a == OUT or any(s not in dom for s in range(a, b + 1)):
                        ok = False
                        break
                if ok:
                    keep.add(x)
                    break
        if keep == dom:
            return dom
        dom = keep


@numba.njit(cache=True)
def _oracle_numba(lo, hi, safe, safe_w):
    dom = safe.copy()
    nx, nu = lo.shape[0], lo.shape[1]
    changed = True
    while changed:
        changed = False
        nxt = dom.copy()
        for x in range(nx):
            if not dom[x]:
                continue
            any_u = False
            for u in range(nu):
                ok = True
                for k in range(safe_w.size):
                    w = safe_w[k]
                    a = lo[x, u, w]
                    if a == -1:
                        ok = False
                        break
                    for s in range(a, hi[x, u, w] + 1):
                        if not dom[s]:
                            ok = False
                            break
                    if not ok:
                        break
                if ok:
                    any_u = True
                    break
            if not any_u:
                nxt[x] = False
                changed = True
        dom = nxt
    return dom


def toy_model(lo, hi):
    lo = np.asarray(lo, dtype=np.int32)
    hi = np.asarray(hi, dtype=np.int32)
    nx, nu, nw = lo.shape
    key = ModelKey("t", 1.0, 0.0, ())
    return SymbolicModel(key, Grid.uniform(BoxSet.interval(0, nx - 1), 1.0), Grid.explicit(range(nu)), [], lo, hi)


def test_self_loop_gives_full_domain():
    n = 5
    idx = np.arange(n).reshape(n, 1, 1)
    m = toy_model(np.concatenate([idx, np.full((n, 1, 1), OUT)], axis=1),
                  np.concatenate([idx, np.full((n, 1, 1), OUT - 1)], axis=1))
    c = synthesis.synthesize_safety(m, BoxSet.interval(0, 4), np.array([0]))
    assert c.dom.all()
    assert all(c.actions(i).tolist() == [0] for i in range(n))
    assert c.iterations == 1


def test_unwinnable_gives_empty_domain():
    n = 4
    m = toy_model(np.full((n, 2, 1), OUT), np.full((n, 2, 1), OUT - 1))
    c = synthesis.synthesize_safety(m, BoxSet.interval(0, 3), np.array([0]))
    assert c.empty
    assert synthesis.closure_violations(c, m) == 0


def test_safe_subset_shrinks():
    # x -> x + 1 under the only input: everything eventually leaves {0..2}
    n = 5
    nxt = np.minimum(np.arange(n) + 1, n - 1).reshape(n, 1, 1)
    m = toy_model(nxt, nxt)
    c = synthesis.synthesize_safety(m, BoxSet.interval(0, 2), np.array([0]))
    assert c.empty
    assert c.iterations <= 3 + 1


@settings(max_examples=150, deadline=None)
@given(data=st.data())
def test_matches_python_oracle(data):
    nx = data.draw(st.integers(2, 8))
    nu = data.draw(st.integers(1, 3))
    nw = data.draw(st.integers(1, 3))
    lo = np.empty((nx, nu, nw), np.int32)
    hi = np.empty_like(lo)
    for t in np.ndindex(lo.shape):
        if data.draw(st.integers(0, 5)) == 0:
            lo[t], hi[t] = OUT, OUT - 1
        else:
            a = data.draw(st.integers(0, nx - 1))
            lo[t], hi[t] = a, min(nx - 1, a + data.draw(st.integers(0, 2)))
    safe_hi = data.draw(st.integers(0, nx - 1))
    m = toy_model(lo, hi)
    safe_w = np.arange(nw)
    c = synthesis.synthesize_safety(m, BoxSet.interval(0, safe_hi), safe_w)
    want = oracle_python(lo, hi, np.arange(nx) <= safe_hi, safe_w)
    assert set(c.dom_indices().tolist()) == want
    assert synthesis.closure_violations(c, m) == 0
    assert c.iterations <= (safe_hi + 1) + 1
    for x in c.dom_indices():
        assert len(c.actions(x)) > 0


def test_traffic_matches_numba_oracle(spec, traffic_models, traffic_controllers):
    for m, c in zip(traffic_models[1], traffic_controllers):
        safe = np.asarray(spec.classes[m.cls].safe_set.contains(m.state_grid.points), dtype=np.bool_)
        want = _oracle_numba(m.lo, m.hi, safe, c.safe_w)
        assert np.array_equal(want, c.dom), m.key.label()


def test_traffic_controllers(spec, traffic_models, traffic_controllers):
    for m, c in zip(traffic_models[1], traffic_controllers):
        p = m.state_grid.points
        assert c.dom.all()  # the whole safe grid is controlled invariant
        assert synthesis.closure_violations(c, m) == 0
        assert c.actions(0).tolist() == [1]  # lowest density: green only
        assert c.actions(len(p) - 1).tolist() == [0]  # highest density: red only
        assert np.all(spec.classes[m.cls].safe_set.contains(p[c.dom_indices()]))


def test_restricted_internal_is_safe_outputs(traffic_models):
    m = traffic_models[1][0]
    w = synthesis.restricted_internal(m)
    assert w.size == len(m.slot_grids[0]) * len(m.slot_grids[1])


def test_refine(traffic_models, traffic_controllers):
    m, c = traffic_models[1][0], traffic_controllers[0]
    u, xh, iu, ix = synthesis.refine(c, m, 7.23)
    assert xh == pytest.approx(7.2) and iu in c.actions(ix)
    assert synthesis.refine(c, m, 7.2)[1] == pytest.approx(7.2)
    with pytest.raises(synthesis.RefinementError):
        synthesis.refine(c, m, 4.2, node=3)


def test_refine_outside_domain():
    n = 4
    m = toy_model(np.full((n, 1, 1), OUT), np.full((n, 1, 1), OUT - 1))
    c = synthesis.synthesize_safety(m, BoxSet.interval(0, 3), np.array([0]))
    with pytest.raises(synthesis.RefinementError):
        synthesis.refine(c, m, 1.0)


def test_export_import(tmp_path, traffic_controllers):
    c = traffic_controllers[1]
    c.save(tmp_path / "c.json")
    back = synthesis.SafetyController.load(tmp_path / "c.json")
    assert back.key == c.key
    assert np.array_equal(back.dom, c.dom) and np.array_equal(back.policy, c.policy)
    assert np.array_equal(back.safe_w, c.safe_w)


def test_compose(spec, design, traffic_models, traffic_controllers):
    base, models = traffic_models
    net = netspec.instantiate(spec, 10)
    plan = abstraction.plan_models(spec, design, net, base)
    cc = synthesis.compose(net, plan, models, traffic_controllers)
    assert len(cc.net) == 40
    assert cc.n_distinct == len(models) == 4
    assert cc.in_dom(np.zeros(40, dtype=int))
    # one node with an empty controller
    broken = list(traffic_controllers)
    empty = synthesis.SafetyController(broken[0].key, np.zeros_like(broken[0].dom),
                                       np.zeros_like(broken[0].policy), broken[0].safe_w)
    broken[0] = empty
    with pytest.raises(synthesis.CompositionError, match="node"):
        synthesis.compose(net, plan, models, broken)
