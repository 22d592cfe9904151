"""Comparison functions of class K-infinity.

Four closed-form representations cover every gain used by the certificates:
``Linear``, ``Power``, ``Composition`` and ``Sum``.  All are immutable and
map nonnegative reals to nonnegative reals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Optional


class KFnError(ValueError):
    """Domain or representation error for a comparison function."""


class InverseNotConverged(ArithmeticError):
    def __init__(self, y: float, residual: float, iterations: int):
        super().__init__(
            f"bisection for inverse at y={y!r} did not converge after "
            f"{iterations} iterations (residual {residual:.3e})"
        )
        self.y = y
        self.residual = residual
        self.iterations = iterations


class CertificateViolation(ValueError):
    """A contraction-type precondition (kappa < identity) does not hold."""


DEFAULT_TOL = 1e-12
MAX_ITER = 200


def _check_domain(r: float) -> float:
    r = float(r)
    if not r >= 0.0:  # also rejects NaN
        raise KFnError(f"comparison functions are defined on r >= 0, got {r!r}")
    return r


class KFn:
    """Base class; subclasses implement ``_eval`` and ``leaves``."""

    def __call__(self, r: float) -> float:
        return self.eval(r)

    def eval(self, r: float) -> float:
        return self._eval(_check_domain(r))

    def _eval(self, r: float) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def leaves(self):  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def slope(self) -> Optional[float]:
        """Slope when the function is linear (compositions and sums of
        ``Linear`` leaves included), otherwise ``None``."""
        return None

    def is_kinf(self) -> bool:
        """Structural class-K-infinity check: every leaf has positive
        coefficient (and exponent)."""
        return all(leaf._leaf_positive() for leaf in self.leaves())

    def inverse(self, y: float, tol: float = DEFAULT_TOL) -> float:
        y = _check_domain(y)
        if y == 0.0:
            return 0.0
        closed = self._closed_inverse(y)
        if closed is not None:
            return closed
        return _bisect_inverse(self._eval, y, tol)

    def _closed_inverse(self, y: float) -> Optional[float]:
        return None

    def to_dict(self) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class Linear(KFn):
    c: float

    def __post_init__(self):
        c = float(self.c)
        if not c >= 0.0 or math.isinf(c):
            raise KFnError(f"linear gain needs a finite nonnegative slope, got {self.c!r}")
        object.__setattr__(self, "c", c)

    def _eval(self, r):
        return self.c * r

    def leaves(self):
        return (self,)

    def _leaf_positive(self):
        return self.c > 0.0

    @property
    def slope(self):
        return self.c

    def _closed_inverse(self, y):
        if self.c == 0.0:
            raise KFnError("Linear(0) is not invertible")
        return y / self.c

    def to_dict(self):
        return {"kind": "linear", "c": self.c}


@dataclass(frozen=True)
class Power(KFn):
    """``c * r**p``."""

    c: float
    p: float

    def __post_init__(self):
        c, p = float(self.c), float(self.p)
        if not (c > 0.0 and p > 0.0) or math.isinf(c) or math.isinf(p):
            raise KFnError(f"power gain needs c > 0 and p > 0, got c={self.c!r}, p={self.p!r}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "p", p)

    def _eval(self, r):
        return self.c * r**self.p

    def leaves(self):
        return (self,)

    def _leaf_positive(self):
        return True

    @property
    def slope(self):
        return self.c if self.p == 1.0 else None

    def _closed_inverse(self, y):
        return (y / self.c) ** (1.0 / self.p)

    def to_dict(self):
        return {"kind": "power", "c": self.c, "p": self.p}


@dataclass(frozen=True)
class Composition(KFn):
    """``outer(inner(r))``."""

    outer: KFn
    inner: KFn

    def _eval(self, r):
        return self.outer._eval(self.inner._eval(r))

    def leaves(self):
        return self.outer.leaves() + self.inner.leaves()

    @property
    def slope(self):
        a, b = self.outer.slope, self.inner.slope
        return None if a is None or b is None else a * b

    def _closed_inverse(self, y):
        mid = self.outer.inverse(y)
        return self.inner.inverse(mid)

    def to_dict(self):
        return {"kind": "compose", "outer": self.outer.to_dict(), "inner": self.inner.to_dict()}


@dataclass(frozen=True)
class Sum(KFn):
    left: KFn
    right: KFn

    def _eval(self, r):
        return self.left._eval(r) + self.right._eval(r)

    def leaves(self):
        return self.left.leaves() + self.right.leaves()

    @property
    def slope(self):
        a, b = self.left.slope, self.right.slope
        return None if a is None or b is None else a + b

    def _closed_inverse(self, y):
        s = self.slope
        if s is not None and s > 0.0:
            return y / s
        return None

    def to_dict(self):
        return {"kind": "sum", "left": self.left.to_dict(), "right": self.right.to_dict()}


IDENTITY = Linear(1.0)


def _bisect_inverse(f: Callable[[float], float], y: float, tol: float) -> float:
    scale = max(1.0, y)
    lo, hi = 0.0, scale
    it = 0
    while f(hi) < y:
        lo, hi = hi, 2.0 * hi
        it += 1
        if it > MAX_ITER or math.isinf(hi):
            raise InverseNotConverged(y, abs(f(lo) - y), it)
    mid = lo
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm - y) <= tol * scale:
            return mid
        if mid <= lo or mid >= hi:
            break  # bracket exhausted at float resolution
        if fm < y:
            lo = mid
        else:
            hi = mid
    raise InverseNotConverged(y, abs(f(mid) - y), MAX_ITER)


def eval(f: KFn, r: float) -> float:  # noqa: A001 - mirrors the operation name
    return f.eval(r)


def inverse(f: KFn, y: float, tol: float = DEFAULT_TOL) -> float:
    return f.inverse(y, tol)


def one_minus(kappa: KFn, r: float) -> float:
    """``(I - kappa)(r)``; requires ``kappa(r) < r`` for ``r > 0``."""
    r = _check_domain(r)
    k = kappa.eval(r)
    if r > 0.0 and k >= r:
        raise CertificateViolation(
            f"kappa is not a contraction at r={r!r}: kappa(r)={k!r} >= r"
        )
    return r - k


def compose(outer: KFn, inner: KFn) -> KFn:
    """Composition that folds linear pieces into a single ``Linear``."""
    if isinstance(outer, Linear) and isinstance(inner, Linear):
        return Linear(outer.c * inner.c)
    if isinstance(outer, Linear) and outer.c == 1.0:
        return inner
    if isinstance(inner, Linear) and inner.c == 1.0:
        return outer
    return Composition(outer, inner)


def inverse_fn(f: KFn) -> KFn:
    """Functional inverse for the representations that have one in closed form."""
    if isinstance(f, Linear):
        if f.c == 0.0:
            raise KFnError("Linear(0) is not invertible")
        return Linear(1.0 / f.c)
    if isinstance(f, Power):
        return Power(f.c ** (-1.0 / f.p), 1.0 / f.p)
    if isinstance(f, Composition):
        return compose(inverse_fn(f.inner), inverse_fn(f.outer))
    if f.slope is not None and f.slope > 0.0:
        return Linear(1.0 / f.slope)
    raise KFnError(f"no closed-form inverse representation for {f!r}")


def from_dict(d: Any, number: Callable[[Any], Fraction | float] = float) -> KFn:
    """Parse a tagged object such as ``{"kind": "linear", "c": "0.3"}``.

    ``number`` converts coefficient fields; the config loader passes an exact
    parser so decimal strings never go through binary floats before here.
    """
    if not isinstance(d, dict) or "kind" not in d:
        raise KFnError(f"expected a tagged comparison function, got {d!r}")
    kind = d["kind"]
    try:
        if kind in ("linear", "id", "identity"):
            return Linear(float(number(d.get("c", 1))))
        if kind == "power":
            return Power(float(number(d["c"])), float(number(d["p"])))
        if kind in ("compose", "composition"):
            return Composition(from_dict(d["outer"], number), from_dict(d["inner"], number))
        if kind == "sum":
            return Sum(from_dict(d["left"], number), from_dict(d["right"], number))
    except KeyError as exc:
        raise KFnError(f"{kind!r} comparison function is missing field {exc}") from None
    raise KFnError(f"unknown comparison function kind {kind!r}")
