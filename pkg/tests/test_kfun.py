import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infsym import kfun
from infsym.kfun import Composition, Linear, Power, Sum


def test_linear_eval_and_inverse():
    f = Linear(0.3)
    assert f(2.0) == pytest.approx(0.6)
    assert f.inverse(0.6) == pytest.approx(2.0)


def test_power_closed_inverse():
    assert Power(2.0, 2.0).inverse(8.0) == pytest.approx(2.0)


def test_composition_inverse():
    f = Composition(Linear(0.5), Power(1.0, 2.0))
    assert f.inverse(2.0) == pytest.approx(2.0)


def test_sum_bisection_matches_root():
    # r + r^3 = 2 has the single real root r = 1
    f = Sum(Linear(1.0), Power(1.0, 3.0))
    r = f.inverse(2.0)
    assert abs(r - 1.0) <= 1e-10


def test_inverse_at_zero():
    assert Sum(Linear(1.0), Power(1.0, 3.0)).inverse(0.0) == 0.0


def test_negative_argument_rejected():
    with pytest.raises(kfun.KFnError):
        Linear(1.0)(-1.0)


def test_linear_zero_not_invertible():
    with pytest.raises(kfun.KFnError):
        Linear(0.0).inverse(1.0)
    assert not Linear(0.0).is_kinf()


def test_bisection_reports_non_convergence():
    # saturating sum never reaches y: the bracket doubling gives up
    class Capped(kfun.KFn):
        def _eval(self, r):
            return min(r, 1.0)

        def leaves(self):
            return (Linear(1.0),)

    with pytest.raises(kfun.InverseNotConverged):
        Capped().inverse(5.0)


def test_one_minus_requires_contraction():
    assert kfun.one_minus(Linear(0.25), 4.0) == pytest.approx(3.0)
    with pytest.raises(kfun.CertificateViolation):
        kfun.one_minus(Linear(1.2), 1.0)


def test_compose_folds_linear():
    f = kfun.compose(Linear(2.0), Linear(0.25))
    assert isinstance(f, Linear) and f.c == 0.5
    assert kfun.compose(Linear(1.0), Power(1, 2)) == Power(1, 2)


def test_inverse_fn_roundtrip():
    f = Composition(Linear(3.0), Power(2.0, 0.5))
    g = kfun.inverse_fn(f)
    for r in (0.1, 1.0, 7.5):
        assert g(f(r)) == pytest.approx(r)


def test_from_dict_roundtrip():
    f = Sum(Linear(0.3), Composition(Power(1.0, 2.0), Linear(2.0)))
    assert kfun.from_dict(f.to_dict()) == f
    assert kfun.from_dict({"kind": "identity"}) == kfun.IDENTITY
    with pytest.raises(kfun.KFnError):
        kfun.from_dict({"kind": "spline"})


pos = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(c=pos, p=st.floats(min_value=0.2, max_value=4.0), r=pos)
def test_inverse_is_left_inverse(c, p, r):
    for f in (Linear(c), Power(c, p), Sum(Linear(c), Power(1.0, p))):
        y = f(r)
        assert f(f.inverse(y)) == pytest.approx(y, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(c=pos, a=pos, b=pos)
def test_monotone(c, a, b):
    f = Sum(Linear(c), Power(c, 1.5))
    lo, hi = sorted((a, b))
    assert f(lo) <= f(hi)
    assert math.isfinite(f.inverse(f(hi)))
