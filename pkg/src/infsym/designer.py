"""Compositional design of local quantization parameters.

Bottom strongly connected components of the class-level graph are designed
first and peeled off; upstream components then pick their precision so that
what they feed downstream stays inside the downstream tolerance.  All
quantities live on roles (subnetwork, class), never on instances, so the
result does not depend on the truncation size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping

from . import kfun
from .gains import (
    DeltaISSCertificate,
    SmallGainCertificate,
    assumption_bounds,
    check_small_gain,
    role_gain_matrix,
)
from .netspec import BoxSet, FiniteInputs, NetworkSpec, role_graph

Role = tuple[str, str]


class InfeasibleDesign(ValueError):
    def __init__(self, inequality: str, where: str, slack: float):
        super().__init__(f"infeasible design: {inequality} has slack {slack:.6g} <= 0 at {where}")
        self.inequality = inequality
        self.where = where
        self.slack = slack


class VerificationFailure(AssertionError):
    pass


def role_name(role: Role) -> str:
    return f"{role[0]}/{role[1]}"


@dataclass
class DesignOptions:
    theta: float = 0.5
    phi_mode: str = "share"  # "share": phi = 0 on aliased grids; "slack": phi = theta * slack
    eta_x: float | Mapping[str, float] | None = None
    eta_u: float | Mapping[str, float] | None = None

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.phi_mode not in ("share", "slack"):
            raise ValueError("phi_mode must be 'share' or 'slack'")

    def override(self, which: str, role: Role):
        v = getattr(self, which)
        if v is None or isinstance(v, (int, float)):
            return v
        return v.get(role_name(role), v.get(role[1]))


@dataclass
class RoleDesign:
    role: Role
    cls: str
    sigma: float
    r: float
    varpi: float
    vartheta: float
    eta_x_bound: float
    eta_x: float
    eta_u: float
    provenance: dict[str, str] = field(default_factory=dict)


@dataclass
class QuantDesign:
    varpi: float
    epsilon_hat: float
    varpi_lower: float
    roles: dict[Role, RoleDesign]
    phi: dict[tuple[Role, Role], float]  # (reader, feeder) -> phi
    edges: list[tuple[Role, Role]]  # (feeder, reader), influence direction
    order: list[list[Role]]  # peeling order
    slacks: list[dict]
    options: DesignOptions

    def for_class(self, cls: str) -> list[RoleDesign]:
        return [d for d in self.roles.values() if d.cls == cls]

    def to_dict(self) -> dict:
        return {
            "varpi": self.varpi,
            "epsilon_hat": self.epsilon_hat,
            "varpi_lower": self.varpi_lower,
            "roles": {
                role_name(r): {
                    "class": d.cls,
                    "sigma": d.sigma,
                    "r": d.r,
                    "varpi": d.varpi,
                    "vartheta": d.vartheta,
                    "eta_x_bound": d.eta_x_bound,
                    "eta_x": d.eta_x,
                    "eta_u": d.eta_u,
                    "provenance": d.provenance,
                }
                for r, d in self.roles.items()
            },
            "phi": [
                {"reader": role_name(i), "feeder": role_name(j), "phi": p}
                for (i, j), p in sorted(self.phi.items())
            ],
            "peeling_order": [[role_name(r) for r in step] for step in self.order],
            "slacks": self.slacks,
            "options": {"theta": self.options.theta, "phi_mode": self.options.phi_mode},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantDesign":
        def role(s):
            a, b = s.split("/", 1)
            return (a, b)

        roles = {}
        for name, v in d["roles"].items():
            r = role(name)
            roles[r] = RoleDesign(
                r, v["class"], v["sigma"], v["r"], v["varpi"], v["vartheta"],
                v["eta_x_bound"], v["eta_x"], v["eta_u"], dict(v.get("provenance", {})),
            )
        phi = {(role(p["reader"]), role(p["feeder"])): p["phi"] for p in d["phi"]}
        edges = sorted((j, i) for (i, j) in phi)
        opts = DesignOptions(**d.get("options", {}))
        order = [[role(x) for x in step] for step in d.get("peeling_order", [])]
        return cls(d["varpi"], d["epsilon_hat"], d["varpi_lower"], roles, phi, edges, order,
                   list(d.get("slacks", [])), opts)


# --------------------------------------------------------------------------
# grid-pitch snapping


def _as_decimal(x: float) -> Decimal:
    return Decimal(repr(float(x)))


def snap_pitch(bound: float, boxes: BoxSet, depth: int = 12) -> float:
    """Largest ``d * 10**k`` (``d`` in 1..9) not above ``bound`` such that every
    box endpoint is an integer multiple of it.  Returns 0.0 if none is found
    within ``depth`` decades below ``bound``."""
    if not bound > 0.0:
        return 0.0
    ends = [_as_decimal(v) for box in boxes.boxes for v in box]
    top = math.floor(math.log10(bound))
    for k in range(top, top - depth, -1):
        for d in range(9, 0, -1):
            eta = Decimal(d).scaleb(k)
            if float(eta) > bound:
                continue
            if all((e / eta) % 1 == 0 for e in ends):
                return float(eta)
    return 0.0


# --------------------------------------------------------------------------
# bottom-up design over role-level components


def _alpha_lo_inv(cert: DeltaISSCertificate, v: float) -> float:
    return cert.alpha_lo.inverse(v)


def _rho_w_inv(cert: DeltaISSCertificate, v: float) -> float:
    if cert.rho_w.slope == 0.0:
        return math.inf
    return cert.rho_w.inverse(v)


def _slot_span(spec: NetworkSpec, feeder: Role) -> float:
    c = spec.classes[feeder[1]]
    return c.output_map.c * c.state_set.span()


def run_algorithm1(
    spec: NetworkSpec,
    varpi: float,
    options: DesignOptions | None = None,
    small_gain: list[SmallGainCertificate] | None = None,
) -> QuantDesign:
    """Design ``varpi_i, vartheta_i, phi_ij, eta_x_i, eta_u_i`` for precision ``varpi``."""
    options = options or DesignOptions()
    varpi = float(varpi)
    if not varpi > 0.0:
        raise ValueError("varpi must be positive")
    rg = role_graph(spec)
    certs = {cid: c.certificate for cid, c in spec.classes.items()}
    gm, dec = role_gain_matrix(rg, spec)
    bounds = assumption_bounds(certs)
    if small_gain is None:
        small_gain = check_small_gain(gm, bounds)
    comp_of = dec.comp_of

    phi: dict[tuple[Role, Role], float] = {}
    designs: dict[Role, RoleDesign] = {}
    slacks: list[dict] = []
    order: list[list[Role]] = []

    def note(ineq, where, value, line):
        slacks.append({"inequality": ineq, "where": where, "slack": value, "line": line})
        if not value > 0.0:
            raise InfeasibleDesign(ineq, where, value)

    remaining = set(range(len(dec.components)))
    first = True
    while remaining:
        bottoms = sorted(k for k in remaining if not any(a == k and b in remaining for a, b in dec.edges))
        for k in bottoms:
            members = sorted(dec.components[k])
            sigma = small_gain[k].sigma
            sig_max = max(sigma[m] for m in members)
            if first:
                r, line = varpi / sig_max, "5"
            else:
                r, line = varpi / sig_max, "7"
                for i in members:
                    for dst in rg.cross_out(i):
                        room = designs[dst].vartheta - phi[(dst, i)]
                        note("downstream-tolerance", f"{role_name(i)}->{role_name(dst)}", room, "7")
                        r = min(r, certs[i[1]].alpha_lo(room) / sigma[i])
            if not r > 0.0:
                raise InfeasibleDesign("line-7 precision", f"SCC {k}", r)
            for i in members:
                designs[i] = RoleDesign(i, i[1], sigma[i], r, sigma[i] * r, math.nan, math.nan,
                                        math.nan, math.nan, {"varpi": f"line {line}"})
            for i in members:
                ci = certs[i[1]]
                intra = [j for j in rg.intra(i) if comp_of[j] == k]
                cap = _rho_w_inv(ci, kfun.one_minus(ci.kappa, designs[i].varpi))
                if intra:
                    need = max(_alpha_lo_inv(certs[j[1]], designs[j].varpi) for j in intra)
                    slack = cap - need
                    note("phi-bound", role_name(i), slack, "8")
                    for j in intra:
                        p = 0.0 if options.phi_mode == "share" else options.theta * slack
                        phi[(i, j)] = min(p, _slot_span(spec, j))
                    vartheta = max(_alpha_lo_inv(certs[j[1]], designs[j].varpi) + phi[(i, j)] for j in intra)
                    designs[i].provenance["vartheta"] = "line 9"
                else:
                    vartheta = 0.0
                    designs[i].provenance["vartheta"] = "line 9 (no intra in-neighbors)"
                    if rg.cross_in(i):
                        if math.isinf(cap):
                            vartheta = max(_slot_span(spec, j) for j in rg.cross_in(i))
                        else:
                            vartheta = options.theta * cap
                        designs[i].provenance["vartheta"] = "theta share of rho_w^-1((I-kappa)(varpi_i))"
                designs[i].vartheta = vartheta
                designs[i].provenance["phi"] = "line 8"
                for j in rg.cross_in(i):
                    p = 0.0 if options.phi_mode == "share" else options.theta * vartheta
                    phi[(i, j)] = min(p, _slot_span(spec, j))
                    if not phi[(i, j)] < vartheta:
                        raise InfeasibleDesign("line-10 phi < vartheta", f"{role_name(i)}<-{role_name(j)}",
                                               vartheta - phi[(i, j)])
            order.append(members)
        remaining -= set(bottoms)
        first = False

    for i, d in designs.items():
        c = spec.classes[i[1]]
        cert = c.certificate
        room = kfun.one_minus(cert.kappa, d.varpi) - cert.rho_w(d.vartheta)
        note("secquantinit-room", role_name(i), room, "13")
        eta_u = options.override("eta_u", i)
        if eta_u is None:
            if isinstance(c.input_set, FiniteInputs):
                eta_u = 0.0
            else:
                eta_u = snap_pitch(cert.rho_u.inverse(options.theta * room), c.input_set)
                if eta_u <= 0.0:
                    raise InfeasibleDesign("eta_u snapping", role_name(i), eta_u)
        eta_u = float(eta_u)
        left = room - cert.rho_u(eta_u)
        bound = cert.gamma_hat.inverse(left) if left > 0.0 else left
        note("eta_x-bound", role_name(i), bound, "13")
        eta_x = options.override("eta_x", i)
        if eta_x is None:
            eta_x = snap_pitch(min(bound, c.state_set.span()), c.state_set)
            d.provenance["eta_x"] = "line 13, snapped"
        else:
            d.provenance["eta_x"] = "line 13, override"
        eta_x = float(eta_x)
        if not 0.0 < eta_x <= min(bound, c.state_set.span()):
            raise InfeasibleDesign("secquantinit", role_name(i), bound - eta_x)
        d.eta_x_bound, d.eta_x, d.eta_u = bound, eta_x, eta_u
        d.provenance["eta_u"] = "finite input set" if isinstance(c.input_set, FiniteInputs) else "line 13"
        slacks.append({"inequality": "secquantinit", "where": role_name(i), "slack": bound - eta_x, "line": "13"})

    alpha_lo = kfun.Linear(bounds.alpha_lo)
    edges = sorted((j, i) for (i, j) in phi)
    return QuantDesign(
        varpi=varpi,
        epsilon_hat=alpha_lo.inverse(varpi),
        varpi_lower=min(d.varpi for d in designs.values()),
        roles={r: designs[r] for r in rg.roles},
        phi=phi,
        edges=edges,
        order=order,
        slacks=slacks,
        options=options,
    )


# --------------------------------------------------------------------------
# verification


@dataclass
class VerificationReport:
    compoquaninit: list[dict]
    secquantinit: list[dict]
    bounds: list[dict]

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.compoquaninit + self.secquantinit + self.bounds if not r["ok"]]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self):
        return {
            "ok": self.ok,
            "compoquaninit": self.compoquaninit,
            "secquantinit": self.secquantinit,
            "bounds": self.bounds,
        }


REL_TOL = 1e-12


def verify_design(design: QuantDesign, spec_or_certs, raise_on_failure: bool = False) -> VerificationReport:
    """Re-evaluate both competing inequalities from the raw parameters.

    Only comparison-function primitives are used; none of the designer's
    intermediate values are reused.  Comparisons are non-strict with a
    relative tolerance of 1e-12 for float round-off.
    """
    if isinstance(spec_or_certs, NetworkSpec):
        classes = spec_or_certs.classes
        certs = {cid: c.certificate for cid, c in classes.items()}
    else:
        classes, certs = None, dict(spec_or_certs)

    def le(lhs, rhs):
        return lhs <= rhs + REL_TOL * max(1.0, abs(rhs))

    comp = []
    for (i, j), p in sorted(design.phi.items()):
        lhs = certs[j[1]].alpha_lo.inverse(design.roles[j].varpi) + p
        rhs = design.roles[i].vartheta
        comp.append({"reader": role_name(i), "feeder": role_name(j), "lhs": lhs, "rhs": rhs,
                     "slack": rhs - lhs, "ok": le(lhs, rhs)})
    sec = []
    for r, d in sorted(design.roles.items()):
        c = certs[d.cls]
        lhs = c.kappa(d.varpi) + c.rho_w(d.vartheta) + c.rho_u(d.eta_u) + c.gamma_hat(d.eta_x)
        sec.append({"role": role_name(r), "lhs": lhs, "rhs": d.varpi, "ok": le(lhs, d.varpi),
                    "slack": c.gamma_hat.inverse(max(d.varpi - lhs + c.gamma_hat(d.eta_x), 0.0)) - d.eta_x})
    bnd = []
    lower = min(d.varpi for d in design.roles.values())
    for r, d in sorted(design.roles.items()):
        ok = lower > 0.0 and le(d.varpi, design.varpi) and d.eta_x >= 0.0 and d.eta_u >= 0.0
        if classes is not None:
            c = classes[d.cls]
            ok = ok and le(d.eta_x, c.state_set.span())
            if isinstance(c.input_set, BoxSet):
                ok = ok and le(d.eta_u, c.input_set.span())
        bnd.append({"role": role_name(r), "varpi": d.varpi, "ok": bool(ok)})
    if classes is not None:
        for (i, j), p in sorted(design.phi.items()):
            cj = classes[j[1]]
            ok = 0.0 <= p and le(p, cj.output_map.c * cj.state_set.span())
            bnd.append({"role": f"phi {role_name(i)}<-{role_name(j)}", "phi": p, "ok": bool(ok)})
    report = VerificationReport(comp, sec, bnd)
    if raise_on_failure and not report.ok:
        raise VerificationFailure("design violates: " + "; ".join(str(f) for f in report.failures))
    return report
