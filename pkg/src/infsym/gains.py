"""Incremental stability certificates, gain matrices and small-gain checks.

Gains are linear in this version: a certificate whose comparison functions
are all ``Linear`` yields scalar gains

    gamma_ij = (1 - kappa_i)^-1 * rho_w_i * alpha_lo_j^-1      (j an in-neighbor of i)

and the gain operator of a strongly connected component is a max-times
matrix.  Its spectral radius on a finite graph is the maximum cycle
geometric mean, computed exactly with Karp's algorithm on log-gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Hashable, Mapping, Sequence

import numpy as np

from . import kfun
from .kfun import IDENTITY, KFn, Linear

if TYPE_CHECKING:  # pragma: no cover
    from .netspec import AffineDynamics, OutputMap, SccDecomposition, TruncatedNetwork


class NoCertificate(ValueError):
    pass


class UnsupportedRepresentation(ValueError):
    pass


class SmallGainFailure(ValueError):
    def __init__(self, scc, estimate: float, worst_cycle: list):
        super().__init__(
            f"small-gain condition fails on SCC {scc!r}: spectral radius estimate "
            f"{estimate:.6g} >= 1 on cycle {worst_cycle}"
        )
        self.scc = scc
        self.estimate = estimate
        self.worst_cycle = worst_cycle


@dataclass(frozen=True)
class DeltaISSCertificate:
    """Comparison functions of a delta-ISS Lyapunov function ``V(x, x') = |x - x'|``."""

    psi_lo: KFn
    psi_hi: KFn
    kappa: KFn
    rho_w: KFn
    rho_u: KFn
    gamma_hat: KFn = IDENTITY
    ell: KFn = IDENTITY

    @property
    def alpha_lo(self) -> KFn:
        return kfun.compose(self.psi_lo, kfun.inverse_fn(self.ell))

    @property
    def alpha_hi(self) -> KFn:
        return self.psi_hi

    @staticmethod
    def V(x, xhat):
        return np.abs(np.asarray(x, dtype=float) - xhat)

    def check(self, probes: Sequence[float]) -> list[str]:
        """Problems found at the probe radii (empty when consistent)."""
        out = []
        for name in ("psi_lo", "psi_hi", "gamma_hat", "ell"):
            if not getattr(self, name).is_kinf():
                out.append(f"{name} is not of class K-infinity")
        bad = [r for r in probes if self.kappa(r) >= r]
        if bad:
            out.append(f"kappa is not below the identity (kappa(r) >= r at r={bad[0]:.4g})")
        try:
            lo = self.alpha_lo
            bad = [r for r in probes if lo(r) > self.alpha_hi(r) * (1 + 1e-12)]
            if bad:
                out.append(f"alpha_lo exceeds alpha_hi at r={bad[0]:.4g}")
        except kfun.KFnError as exc:
            out.append(str(exc))
        return out

    def check_against_affine(self, dyn: "AffineDynamics", output: "OutputMap", probes) -> list[str]:
        """For ``V = |x - x'|`` and affine dynamics the conditions reduce to
        slope comparisons; report every comparison that fails."""
        out = []
        need = {
            "kappa": abs(dyn.a),
            "rho_w": sum(abs(v) for v in dyn.d),
            "rho_u": abs(dyn.b),
            "gamma_hat": 1.0,
            "psi_hi": 1.0,
        }
        for name, slope in need.items():
            f = getattr(self, name)
            r = next((r for r in probes if f(r) < slope * r * (1 - 1e-12)), None)
            if r is not None:
                out.append(
                    f"{name} is too small for the dynamics: {name}({r:.4g}) = {f(r):.6g} "
                    f"< {slope:.6g} * r"
                )
        r = next((r for r in probes if self.psi_lo(r) > r * (1 + 1e-12)), None)
        if r is not None:
            out.append("psi_lo exceeds the identity, incompatible with V = |x - x'|")
        r = next((r for r in probes if self.ell(r) < output.c * r * (1 - 1e-12)), None)
        if r is not None:
            out.append("ell is smaller than the output map's Lipschitz constant")
        return out

    def linear_slopes(self) -> dict[str, float]:
        out = {}
        for name in ("kappa", "rho_w", "rho_u", "gamma_hat"):
            out[name] = getattr(self, name).slope
        out["alpha_lo"] = self.alpha_lo.slope
        return out

    def to_dict(self) -> dict:
        return {
            name: getattr(self, name).to_dict()
            for name in ("psi_lo", "psi_hi", "kappa", "rho_w", "rho_u", "gamma_hat", "ell")
        }


def certificate_from_dict(d: Mapping, number: Callable = float) -> DeltaISSCertificate:
    def get(name, default=None):
        if name not in d:
            if default is None:
                raise kfun.KFnError(f"certificate is missing {name!r}")
            return default
        return kfun.from_dict(d[name], number)

    return DeltaISSCertificate(
        psi_lo=get("psi_lo", IDENTITY),
        psi_hi=get("psi_hi", IDENTITY),
        kappa=get("kappa"),
        rho_w=get("rho_w"),
        rho_u=get("rho_u"),
        gamma_hat=get("gamma_hat", IDENTITY),
        ell=get("ell", IDENTITY),
    )


def derive_affine_certificate(cls_or_dyn: Any, output: "OutputMap | None" = None) -> DeltaISSCertificate:
    """Certificate for scalar affine dynamics with ``V(x, x') = |x - x'|``."""
    dyn = getattr(cls_or_dyn, "dynamics", cls_or_dyn)
    if output is None:
        output = getattr(cls_or_dyn, "output_map", None)
    a = abs(dyn.a)
    if a >= 1.0:
        raise NoCertificate(f"|a| = {a} >= 1: kappa < identity cannot hold")
    return DeltaISSCertificate(
        psi_lo=IDENTITY,
        psi_hi=IDENTITY,
        kappa=Linear(a),
        rho_w=Linear(sum(abs(v) for v in dyn.d)),
        rho_u=Linear(abs(dyn.b)),
        gamma_hat=IDENTITY,
        ell=output.lipschitz if output is not None else IDENTITY,
    )


# --------------------------------------------------------------------------
# gains


def linear_gain(cert_i: DeltaISSCertificate, cert_j: DeltaISSCertificate) -> float:
    k, rw, al = cert_i.kappa.slope, cert_i.rho_w.slope, cert_j.alpha_lo.slope
    if k is None or rw is None or al is None:
        raise UnsupportedRepresentation(
            "gain matrices need linear kappa, rho_w and alpha_lo; "
            "replace nonlinear comparison functions by linear upper/lower bounds"
        )
    if al <= 0.0:
        raise UnsupportedRepresentation("alpha_lo has zero slope")
    return rw / ((1.0 - k) * al)


@dataclass
class GainMatrix:
    """Sparse gains per SCC: ``entries[k][(i, j)] = gamma_ij`` for in-neighbor ``j`` of ``i``."""

    members: list[list]
    entries: list[dict[tuple, float]]
    class_gains: dict[tuple, float] = field(default_factory=dict)

    def sup(self, k: int) -> float:
        return max(self.entries[k].values(), default=0.0)


def build_gain_matrix(
    net: "TruncatedNetwork", sccs: "SccDecomposition", certs: Mapping[str, DeltaISSCertificate]
) -> GainMatrix:
    members, entries, class_gains = [], [], {}
    for comp in sccs.components:
        rows = {}
        for i in sorted(comp):
            ni = net.node(i)
            for j in net.in_neighbors[i]:
                if j not in comp:
                    continue
                nj = net.node(j)
                g = linear_gain(certs[ni.cls], certs[nj.cls])
                rows[(i, j)] = g
                key = (ni.cls, nj.cls)
                if class_gains.setdefault(key, g) != g:  # pragma: no cover - deterministic
                    raise AssertionError(f"class gain {key} differs between instances")
        members.append(sorted(comp))
        entries.append(rows)
    return GainMatrix(members, entries, class_gains)


def role_gain_matrix(rg, spec) -> tuple[GainMatrix, Any]:
    """Class-level gains over the role graph, grouped by role-level SCC."""
    from .netspec import condense

    certs = {c: spec.classes[c].certificate for c in spec.classes}
    out_edges = {r: sorted(dst for src, dst in rg.edges if src == r) for r in rg.roles}
    dec = condense(rg.roles, lambda r: out_edges[r])
    members, entries, class_gains = [], [], {}
    for comp in dec.components:
        rows = {}
        for src, dst in rg.edges:
            if src in comp and dst in comp:
                g = linear_gain(certs[dst[1]], certs[src[1]])
                rows[(dst, src)] = g
                class_gains[(dst[1], src[1])] = g
        members.append(sorted(comp))
        entries.append(rows)
    return GainMatrix(members, entries, class_gains), dec


# --------------------------------------------------------------------------
# small-gain


@dataclass
class AssumptionBounds:
    kappa_bar: float
    rho_w_bar: float
    alpha_lo: float


def assumption_bounds(certs: Mapping[str, DeltaISSCertificate]) -> AssumptionBounds:
    """Uniform bounds over classes (never over instances)."""
    slopes = [c.linear_slopes() for c in certs.values()]
    if any(s["kappa"] is None or s["rho_w"] is None or s["alpha_lo"] is None for s in slopes):
        raise UnsupportedRepresentation("uniform bounds need linear certificates")
    return AssumptionBounds(
        max(s["kappa"] for s in slopes),
        max(s["rho_w"] for s in slopes),
        min(s["alpha_lo"] for s in slopes),
    )


@dataclass
class SmallGainCertificate:
    scc: int
    sigma: dict
    lam: float
    spectral_radius_estimate: float
    method: str
    worst_cycle: list

    def to_dict(self):
        sig = set(self.sigma.values())
        return {
            "scc": self.scc,
            "lambda": self.lam,
            "spectral_radius_estimate": self.spectral_radius_estimate,
            "sigma_method": self.method,
            "sigma_uniform": len(sig) == 1,
            "worst_cycle": [str(v) for v in self.worst_cycle],
        }


def _edge_arrays(members: Sequence, entries: Mapping[tuple, float]):
    pos = {v: k for k, v in enumerate(members)}
    src, dst, w = [], [], []
    for (i, j), g in entries.items():
        if g > 0.0:
            src.append(pos[j])  # influence j -> i
            dst.append(pos[i])
            w.append(math.log(g))
    return pos, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(w)


def max_cycle_mean(members: Sequence, entries: Mapping[tuple, float]) -> tuple[float, list]:
    """Maximum cycle geometric mean of the gains (Karp), with a cycle attaining it.

    Returns ``(0.0, [])`` for acyclic components.  ``members`` should form a
    strongly connected set under ``entries`` (an SCC of the gain graph).
    """
    n = len(members)
    pos, src, dst, w = _edge_arrays(members, entries)
    if n == 0 or len(w) == 0:
        return 0.0, []
    D = np.full((n + 1, n), -np.inf)
    pred = np.full((n + 1, n), -1, dtype=np.int64)
    D[0, 0] = 0.0
    for k in range(1, n + 1):
        cand = D[k - 1, src] + w
        row = np.full(n, -np.inf)
        np.maximum.at(row, dst, cand)
        hit = np.isfinite(cand) & (cand == row[dst])
        pred[k, dst[hit][::-1]] = src[hit][::-1]
        D[k] = row
    best_v, best = -1, -np.inf
    for v in range(n):
        if not np.isfinite(D[n, v]):
            continue
        ks = np.nonzero(np.isfinite(D[:n, v]))[0]
        val = np.min((D[n, v] - D[ks, v]) / (n - ks))
        if val > best:
            best, best_v = val, v
    if best_v < 0:
        return 0.0, []
    walk = [best_v]
    v = best_v
    for k in range(n, 0, -1):
        v = int(pred[k, v])
        walk.append(v)
    walk.reverse()  # influence order
    weight = {(int(s), int(d)): float(x) for s, d, x in zip(src, dst, w)}
    # split the walk into simple cycles; one of them attains the maximum mean
    cycles, stack, where = [], [], {}
    for v in walk:
        if v in where:
            start = where[v]
            cyc = stack[start:]
            cycles.append(cyc)
            for u in cyc:
                del where[u]
            del stack[start:]
        where[v] = len(stack)
        stack.append(v)

    def mean(cyc):
        tot = sum(weight[(cyc[t], cyc[(t + 1) % len(cyc)])] for t in range(len(cyc)))
        return tot / len(cyc)

    cyc = max(cycles, key=mean) if cycles else []
    return math.exp(best), [members[v] for v in cyc]


def kleene_sigma(members: Sequence, entries: Mapping[tuple, float], lam: float) -> dict:
    """``sigma = (Gamma / lam)^* (1)``: the least vector >= 1 with ``Gamma sigma <= lam sigma``."""
    n = len(members)
    pos, src, dst, w = _edge_arrays(members, entries)
    s = np.zeros(n)
    w = w - math.log(lam)
    for _ in range(n + 1):
        row = np.full(n, -np.inf)
        if len(w):
            np.maximum.at(row, dst, s[src] + w)
        new = np.maximum(s, row)
        if np.array_equal(new, s):
            break
        s = new
    return {v: float(math.exp(s[pos[v]])) for v in members}


def gamma_apply(entries: Mapping[tuple, float], sigma: Mapping) -> dict:
    """``Gamma(sigma)_i = max_j gamma_ij sigma_j`` (0 for rows without entries)."""
    out = {i: 0.0 for i in sigma}
    for (i, j), g in entries.items():
        out[i] = max(out[i], g * sigma[j])
    return out


def contraction_holds(entries, sigma, lam) -> bool:
    g = gamma_apply(entries, sigma)
    return all(g[i] <= lam * sigma[i] for i in sigma)


def check_small_gain(
    gm: GainMatrix,
    bounds: AssumptionBounds | None = None,
    method: str = "auto",
) -> list[SmallGainCertificate]:
    """One certificate per SCC; raises ``SmallGainFailure`` on the first SCC
    whose cycle-mean estimate is >= 1.

    ``method="auto"`` takes the uniform-gain shortcut (sigma = 1,
    lambda = sup gamma) whenever every gain is below one and otherwise
    computes the cycle mean; ``method="cycle-mean"`` always does the latter.
    """
    if bounds is not None and not (
        math.isfinite(bounds.kappa_bar) and math.isfinite(bounds.rho_w_bar) and bounds.alpha_lo > 0.0
    ):
        raise ValueError(f"uniformity bounds do not hold: {bounds}")
    out = []
    for k, (members, entries) in enumerate(zip(gm.members, gm.entries)):
        sup = max(entries.values(), default=0.0)
        if method == "auto" and sup < 1.0:
            # any lambda in (0, 1) works for a gain-free component
            lam = sup if sup > 0.0 else 0.5
            sigma = {v: 1.0 for v in members}
            rho, cyc = max_cycle_mean(members, entries) if entries else (0.0, [])
            out.append(SmallGainCertificate(k, sigma, lam, rho, "uniform-gain-shortcut", cyc))
            continue
        rho, cyc = max_cycle_mean(members, entries)
        if rho >= 1.0:
            raise SmallGainFailure(k, rho, cyc)
        lam0 = 0.5 * (1.0 + rho)
        sigma = kleene_sigma(members, entries, lam0)
        g = gamma_apply(entries, sigma)
        lam = max((g[i] / sigma[i] for i in members), default=0.0)
        if lam <= 0.0:
            lam = 0.5
        while not contraction_holds(entries, sigma, lam):
            lam = float(np.nextafter(lam, 2.0))
        out.append(SmallGainCertificate(k, sigma, lam, rho, "cycle-mean", cyc))
    return out


def certificate_report(spec, sg: Sequence[SmallGainCertificate], gm: GainMatrix) -> dict:
    classes = {}
    for cid, c in spec.classes.items():
        s = c.certificate.linear_slopes()
        classes[cid] = {k: s[k] for k in ("kappa", "rho_w", "rho_u", "alpha_lo")}
    sccs = []
    for cert, members in zip(sg, gm.members):
        d = cert.to_dict()
        d["members"] = ["/".join(m) if isinstance(m, tuple) else m for m in members]
        d["sup_gain"] = gm.sup(cert.scc)
        sccs.append(d)
    return {"classes": classes, "sccs": sccs}
