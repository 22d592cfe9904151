"""Network descriptions: subsystem classes, topology patterns, truncations.

An infinite network is given by finitely many subsystem classes and, per
subnetwork, rules that assign a class and neighbor offsets to every index.
``instantiate`` materializes ``N`` nodes per subnetwork; ``decompose``
computes strongly connected components of the resulting influence graph.

Edges point in the direction of influence: ``j -> i`` when ``j`` is an
in-neighbor of ``i`` (``y_j`` feeds ``w_i``).  Bottom components are those
that influence nobody else.
"""

from __future__ import annotations

import ast
import json
import math
import operator
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kfun
from .gains import DeltaISSCertificate, certificate_from_dict
from .kfun import KFn, KFnError

BOUNDARY_RULES = ("cross-feed", "wrap", "constant-hold")


class SpecError(ValueError):
    """Malformed network description."""


class InstantiationError(ValueError):
    pass


class TopologyError(ValueError):
    pass


# --------------------------------------------------------------------------
# exact numbers


_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
}


def parse_number(value: Any, params: Mapping[str, Fraction] | None = None) -> Fraction:
    """Parse a config number exactly.

    Strings may be arithmetic expressions over named parameters, e.g.
    ``"1 - tau*v/l - e"`` or ``"10/3600"``; literals inside are read from
    their source text, so ``"0.1"`` is exactly one tenth.
    """
    params = params or {}
    if isinstance(value, bool):
        raise SpecError(f"expected a number, got {value!r}")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Decimal):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if not isinstance(value, str):
        raise SpecError(f"expected a number or expression, got {value!r}")
    text = value.strip()
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError:
        raise SpecError(f"cannot parse number expression {value!r}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return Fraction(ast.get_source_segment(text, node))
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Name):
            if node.id not in params:
                raise SpecError(f"unknown parameter {node.id!r} in {value!r}")
            return params[node.id]
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id == "abs"
            and len(node.args) == 1
        ):
            return abs(ev(node.args[0]))
        raise SpecError(f"unsupported syntax in number expression {value!r}")

    try:
        return ev(tree)
    except ZeroDivisionError:
        raise SpecError(f"division by zero in {value!r}") from None


# --------------------------------------------------------------------------
# sets


@dataclass(frozen=True)
class BoxSet:
    """Finite union of closed intervals on the real line."""

    boxes: tuple[tuple[float, float], ...]

    def __post_init__(self):
        boxes = tuple(sorted((float(lo), float(hi)) for lo, hi in self.boxes))
        object.__setattr__(self, "boxes", boxes)

    @classmethod
    def interval(cls, lo: float, hi: float) -> "BoxSet":
        return cls(((lo, hi),))

    @property
    def lo(self) -> float:
        return self.boxes[0][0]

    @property
    def hi(self) -> float:
        return max(hi for _, hi in self.boxes)

    def span(self) -> float:
        if not self.boxes:
            raise ValueError("span of an empty set")
        return min(hi - lo for lo, hi in self.boxes)

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.boxes:
            inside |= (x >= lo - tol) & (x <= hi + tol)
        return inside if inside.shape else bool(inside)

    def issubset(self, other: "BoxSet") -> bool:
        return all(
            any(olo <= lo and hi <= ohi for olo, ohi in other.boxes) for lo, hi in self.boxes
        )

    def is_valid(self) -> bool:
        return bool(self.boxes) and all(hi > lo for lo, hi in self.boxes)

    def to_list(self):
        return [[lo, hi] for lo, hi in self.boxes]


@dataclass(frozen=True)
class FiniteInputs:
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


# --------------------------------------------------------------------------
# dynamics and outputs


@dataclass(frozen=True)
class AffineDynamics:
    """``x+ = a x + b u + sum_s d[s] w[s]``, one coefficient per neighbor slot."""

    a: float
    b: float
    d: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))

    @property
    def n_slots(self) -> int:
        return len(self.d)

    def __call__(self, x, u, w: Sequence):
        out = self.a * x + self.b * u
        for dj, wj in zip(self.d, w):
            out = out + dj * wj
        return out

    def uniform_bound(self) -> float:
        return max(abs(self.a), sum(abs(v) for v in self.d), abs(self.b))


@dataclass(frozen=True)
class OpaqueDynamics:
    """Deterministic user map ``f(x, u, w)``; must accept numpy arrays."""

    fn: Callable
    n_slots: int

    def __call__(self, x, u, w):
        return self.fn(x, u, w)


@dataclass(frozen=True)
class OutputMap:
    """``h(x) = c x`` (``c = 1`` is the identity)."""

    c: float = 1.0

    def __post_init__(self):
        if not float(self.c) > 0.0:
            raise SpecError("output scale must be positive")
        object.__setattr__(self, "c", float(self.c))

    def __call__(self, x):
        return x if self.c == 1.0 else self.c * x

    @property
    def lipschitz(self) -> KFn:
        return kfun.Linear(self.c)


@dataclass(frozen=True)
class SubsystemClass:
    id: str
    state_set: BoxSet
    input_set: FiniteInputs | BoxSet
    dynamics: AffineDynamics | OpaqueDynamics
    safe_set: BoxSet
    certificate: DeltaISSCertificate | None = None
    output_map: OutputMap = OutputMap()

    @property
    def n_slots(self) -> int:
        return self.dynamics.n_slots


# --------------------------------------------------------------------------
# topology


@dataclass(frozen=True)
class Rule:
    cls: str
    offsets: tuple[int, ...]
    index: tuple[int, ...] | None = None
    parity: str | None = None  # "odd" | "even"
    min_index: int = 1

    def matches(self, i: int) -> bool:
        if self.index is not None:
            return i in self.index
        if i < self.min_index:
            return False
        if self.parity == "odd":
            return i % 2 == 1
        if self.parity == "even":
            return i % 2 == 0
        return True


@dataclass(frozen=True)
class Subnetwork:
    id: str
    rules: tuple[Rule, ...]
    hold_value: float | None = None
    strongly_connected: bool = True

    def rule_for(self, i: int) -> Rule:
        for rule in self.rules:
            if rule.matches(i):
                return rule
        raise InstantiationError(f"no rule of subnetwork {self.id!r} covers index {i}")


@dataclass(frozen=True)
class Link:
    """Hole ``dst_index`` (<= 0) of subnetwork ``dst`` reads node
    ``src_index`` of subnetwork ``src``."""

    src: str
    src_index: int
    dst: str
    dst_index: int = 0


@dataclass
class NetworkSpec:
    classes: dict[str, SubsystemClass]
    subnetworks: list[Subnetwork]
    links: list[Link] = field(default_factory=list)
    boundary_rule: str = "cross-feed"
    parameters: dict[str, Fraction] = field(default_factory=dict)
    issues: list["Diagnostic"] = field(default_factory=list)
    source: dict | None = None

    def subnetwork(self, sid: str) -> Subnetwork:
        for s in self.subnetworks:
            if s.id == sid:
                return s
        raise KeyError(sid)

    @property
    def arity(self) -> int:
        a = 1
        for sub in self.subnetworks:
            for rule in sub.rules:
                a = max(a, *(abs(o) for o in rule.offsets), *(rule.index or ()))
        for link in self.links:
            a = max(a, link.src_index)
        return a


# --------------------------------------------------------------------------
# loading


def _boxes(raw, number) -> BoxSet:
    if isinstance(raw, dict):
        raw = raw.get("boxes")
    if not isinstance(raw, list) or not raw:
        raise SpecError(f"expected a list of [lo, hi] boxes, got {raw!r}")
    if not isinstance(raw[0], list):
        raw = [raw]
    return BoxSet(tuple((float(number(lo)), float(number(hi))) for lo, hi in raw))


def load_spec(source: str | Path | Mapping) -> NetworkSpec:
    """Build a ``NetworkSpec`` from a JSON file path, JSON text or a mapping.

    Problems that validation should report (bad certificates, arity
    mismatches) are collected in ``spec.issues`` instead of raised.
    """
    if isinstance(source, Mapping):
        raw = dict(source)
    else:
        text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
        raw = json.loads(text, parse_float=Decimal)

    params: dict[str, Fraction] = {}
    for name, expr in (raw.get("parameters") or {}).items():
        params[name] = parse_number(expr, params)

    def number(v):
        return parse_number(v, params)

    issues: list[Diagnostic] = []
    classes: dict[str, SubsystemClass] = {}
    for cid, c in (raw.get("classes") or {}).items():
        where = f"classes.{cid}"
        try:
            state = _boxes(c["state_set"], number)
            safe = _boxes(c.get("safe_set", c["state_set"]), number)
            inp = c.get("input_set", {"values": [0]})
            if isinstance(inp, dict) and "values" in inp:
                inputs = FiniteInputs(tuple(float(number(v)) for v in inp["values"]))
            else:
                inputs = _boxes(inp, number)
            dyn = c["dynamics"]
            if dyn.get("kind", "affine") != "affine":
                raise SpecError("only affine dynamics can be declared in a config file")
            dynamics = AffineDynamics(
                float(number(dyn["a"])),
                float(number(dyn.get("b", 0))),
                tuple(float(number(v)) for v in dyn.get("d", [])),
            )
            out = c.get("output_map", {"kind": "identity"})
            output = OutputMap(float(number(out.get("c", 1))) if out.get("kind") == "scale" else 1.0)
        except (SpecError, KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"{where}: {exc}") from None
        cert = None
        cert_raw = c.get("certificate", "derive")
        try:
            if cert_raw == "derive":
                from .gains import derive_affine_certificate

                cert = derive_affine_certificate(dynamics, output)
            else:
                cert = certificate_from_dict(cert_raw, number)
        except (KFnError, ValueError) as exc:
            issues.append(Diagnostic("certificate", where, str(exc)))
        classes[cid] = SubsystemClass(cid, state, inputs, dynamics, safe, cert, output)

    subnetworks = []
    for s in raw.get("subnetworks") or []:
        rules = []
        for r in s["rules"]:
            m = r.get("match", {})
            rules.append(
                Rule(
                    cls=r["class"],
                    offsets=tuple(int(o) for o in r.get("neighbors", [])),
                    index=tuple(int(i) for i in m["index"]) if "index" in m else None,
                    parity=m.get("parity"),
                    min_index=int(m.get("min", 1)),
                )
            )
        hold = s.get("hold_value")
        subnetworks.append(
            Subnetwork(
                s["id"],
                tuple(rules),
                float(number(hold)) if hold is not None else None,
                bool(s.get("strongly_connected", True)),
            )
        )
    links = [
        Link(l["from"], int(l.get("from_index", 1)), l["to"], int(l.get("to_index", 0)))
        for l in raw.get("links") or []
    ]
    rule = raw.get("boundary_rule", "cross-feed")
    if rule not in BOUNDARY_RULES:
        raise SpecError(f"boundary_rule must be one of {BOUNDARY_RULES}, got {rule!r}")
    return NetworkSpec(classes, subnetworks, links, rule, params, issues, raw)


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Diagnostic:
    code: str
    where: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.where}: {self.message}"


@dataclass
class ValidationReport:
    diagnostics: list[Diagnostic]
    bounds: dict[str, float]

    @property
    def ok(self) -> bool:
        return not self.diagnostics

    def to_dict(self):
        return {
            "ok": self.ok,
            "uniform_bounds": self.bounds,
            "diagnostics": [vars(d) for d in self.diagnostics],
        }


def probe_points(scale: float) -> np.ndarray:
    return scale * np.geomspace(1e-3, 10.0, 25)


def validate(spec: NetworkSpec) -> ValidationReport:
    diags = list(spec.issues)
    bounds: dict[str, float] = {}

    for cid, c in spec.classes.items():
        where = f"classes.{cid}"
        if not c.state_set.is_valid():
            diags.append(Diagnostic("sets", where, "state_set must be nonempty with positive span"))
            continue
        if not c.safe_set.issubset(c.state_set):
            diags.append(Diagnostic("sets", where, "safe_set is not contained in state_set"))
        if isinstance(c.input_set, BoxSet) and not c.input_set.is_valid():
            diags.append(Diagnostic("sets", where, "input_set boxes need positive span"))
        if isinstance(c.dynamics, AffineDynamics):
            bounds[cid] = c.dynamics.uniform_bound()
        cert = c.certificate
        if cert is None:
            continue
        for d in cert.check(probe_points(c.state_set.span())):
            diags.append(Diagnostic("certificate", where, d))
        if isinstance(c.dynamics, AffineDynamics):
            for d in cert.check_against_affine(c.dynamics, c.output_map, probe_points(c.state_set.span())):
                diags.append(Diagnostic("certificate", where, d))

    sub_ids = [s.id for s in spec.subnetworks]
    if len(set(sub_ids)) != len(sub_ids):
        diags.append(Diagnostic("topology", "subnetworks", "duplicate subnetwork ids"))
    for s in spec.subnetworks:
        if not s.rules:
            diags.append(Diagnostic("topology", f"subnetworks.{s.id}", "no rules"))
        for k, rule in enumerate(s.rules):
            where = f"subnetworks.{s.id}.rules[{k}]"
            c = spec.classes.get(rule.cls)
            if c is None:
                diags.append(Diagnostic("topology", where, f"unknown class {rule.cls!r}"))
                continue
            if len(rule.offsets) != c.n_slots:
                diags.append(
                    Diagnostic(
                        "arity",
                        where,
                        f"{len(rule.offsets)} neighbor slots but class {rule.cls!r} "
                        f"has {c.n_slots} internal-input coefficients",
                    )
                )
            if 0 in rule.offsets:
                diags.append(Diagnostic("topology", where, "offset 0 (self-feed) is not allowed"))
        if spec.boundary_rule == "constant-hold" and s.hold_value is None:
            diags.append(Diagnostic("boundary", f"subnetworks.{s.id}", "constant-hold needs hold_value"))
    for k, link in enumerate(spec.links):
        where = f"links[{k}]"
        for sid in (link.src, link.dst):
            if sid not in sub_ids:
                diags.append(Diagnostic("topology", where, f"unknown subnetwork {sid!r}"))
        if link.dst_index > 0:
            diags.append(Diagnostic("topology", where, "to_index must address a head hole (<= 0)"))
        if link.src_index < 1:
            diags.append(Diagnostic("topology", where, "from_index must be >= 1"))

    if not any(d.code == "topology" for d in diags):
        try:
            for n in _canonical_sizes(spec):
                instantiate(spec, n, validate_first=False)
        except (InstantiationError, TopologyError) as exc:
            diags.append(Diagnostic("topology", "pattern", str(exc)))
        sub_edges = {(l.src, l.dst) for l in spec.links if l.src != l.dst}
        comps = tarjan(sub_ids, lambda v: [b for a, b in sub_edges if a == v])
        if any(len(c) > 1 for c in comps) or any(l.src == l.dst for l in spec.links):
            diags.append(
                Diagnostic("topology", "links", "links between subnetworks must form an acyclic graph")
            )
    if spec.classes:
        certs = [c.certificate for c in spec.classes.values() if c.certificate is not None]
        lows = [c.alpha_lo.slope for c in certs]
        if any(s is not None and s <= 0.0 for s in lows):
            diags.append(Diagnostic("assumption", "classes", "alpha_lo must be bounded away from zero"))
    return ValidationReport(diags, bounds)


# --------------------------------------------------------------------------
# instantiation


@dataclass(frozen=True)
class Constant:
    """A slot fed by a held constant instead of a node."""

    value: float


@dataclass(frozen=True)
class Node:
    gid: int
    subnet: str
    local: int
    cls: str
    slots: tuple[int | Constant, ...]

    @property
    def role(self) -> tuple[str, str]:
        return (self.subnet, self.cls)


@dataclass
class TruncatedNetwork:
    spec: NetworkSpec
    n_per_subnetwork: int
    nodes: list[Node]
    in_neighbors: dict[int, frozenset[int]]
    out_neighbors: dict[int, frozenset[int]]
    intra_in: dict[int, frozenset[int]]
    intra_out: dict[int, frozenset[int]]

    def node(self, gid: int) -> Node:
        return self.nodes[gid - 1]

    def __len__(self):
        return len(self.nodes)

    def gid(self, subnet: str, local: int) -> int:
        k = [s.id for s in self.spec.subnetworks].index(subnet)
        return k * self.n_per_subnetwork + local


def _resolve(spec: NetworkSpec, sub: Subnetwork, k: int, h: int, n: int):
    """Map a neighbor index ``h`` of subnetwork ``sub`` to a global id or a Constant."""
    if 1 <= h <= n:
        return k * n + h
    if h <= 0:
        for link in spec.links:
            if link.dst == sub.id and link.dst_index == h:
                src_k = [s.id for s in spec.subnetworks].index(link.src)
                if link.src_index > n:
                    raise InstantiationError(
                        f"link from {link.src}:{link.src_index} needs N >= {link.src_index}"
                    )
                return src_k * n + link.src_index
    rule = spec.boundary_rule
    if rule == "constant-hold":
        if sub.hold_value is None:
            raise InstantiationError(f"subnetwork {sub.id!r} needs hold_value for constant-hold")
        return Constant(sub.hold_value)
    if rule == "cross-feed" and h <= 0:
        raise InstantiationError(
            f"head index {h} of subnetwork {sub.id!r} is not fed by any link (cross-feed)"
        )
    return k * n + (h - 1) % n + 1


def instantiate(spec: NetworkSpec, n: int, validate_first: bool = True) -> TruncatedNetwork:
    """Materialize ``n`` nodes per subnetwork, subnetworks concatenated in
    declaration order (global ids start at 1)."""
    if validate_first:
        report = validate(spec)
        if not report.ok:
            raise InstantiationError("invalid spec:\n" + "\n".join(map(str, report.diagnostics)))
    if n < spec.arity:
        raise InstantiationError(f"N={n} is below the pattern arity {spec.arity}")
    nodes = []
    for k, sub in enumerate(spec.subnetworks):
        for i in range(1, n + 1):
            rule = sub.rule_for(i)
            slots = tuple(_resolve(spec, sub, k, i + off, n) for off in rule.offsets)
            nodes.append(Node(k * n + i, sub.id, i, rule.cls, slots))
    ins: dict[int, set[int]] = {v.gid: set() for v in nodes}
    outs: dict[int, set[int]] = {v.gid: set() for v in nodes}
    for v in nodes:
        for s in v.slots:
            if isinstance(s, int):
                ins[v.gid].add(s)
                outs[s].add(v.gid)
    sub_of = {v.gid: v.subnet for v in nodes}
    intra_in = {g: frozenset(j for j in js if sub_of[j] == sub_of[g]) for g, js in ins.items()}
    intra_out = {g: frozenset(j for j in js if sub_of[j] == sub_of[g]) for g, js in outs.items()}
    return TruncatedNetwork(
        spec,
        n,
        nodes,
        {g: frozenset(v) for g, v in ins.items()},
        {g: frozenset(v) for g, v in outs.items()},
        intra_in,
        intra_out,
    )


# --------------------------------------------------------------------------
# strongly connected components


def tarjan(vertices: Iterable, successors: Callable[[Any], Iterable]) -> list[list]:
    """Strongly connected components, iterative Tarjan.

    Components come out in reverse topological order of the condensation
    (a component is emitted after every component it can reach).
    """
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    comps: list[list] = []
    counter = 0
    for root in vertices:
        if root in index:
            continue
        work = [(root, iter(successors(root)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(successors(w))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(comp)
    return comps


@dataclass
class SccDecomposition:
    components: list[frozenset]
    edges: set[tuple[int, int]]  # (a, b): component a influences component b
    comp_of: dict
    labels: list[str | None] = field(default_factory=list)

    @property
    def bottom(self) -> list[int]:
        srcs = {a for a, _ in self.edges}
        return [k for k in range(len(self.components)) if k not in srcs]

    def bottom_labels(self) -> list:
        return [self.labels[k] if self.labels else k for k in self.bottom]


def condense(vertices: Sequence, influences: Callable[[Any], Iterable]) -> SccDecomposition:
    comps = tarjan(vertices, influences)
    comps = sorted((frozenset(c) for c in comps), key=lambda c: min(c))
    comp_of = {v: k for k, c in enumerate(comps) for v in c}
    edges = set()
    for v in vertices:
        for w in influences(v):
            if comp_of[v] != comp_of[w]:
                edges.add((comp_of[v], comp_of[w]))
    return SccDecomposition(comps, edges, comp_of)


def decompose(net: TruncatedNetwork, check_declared: bool = True) -> SccDecomposition:
    gids = [v.gid for v in net.nodes]
    dec = condense(gids, lambda g: sorted(net.out_neighbors[g]))
    labels = []
    for comp in dec.components:
        subs = {net.node(g).subnet for g in comp}
        labels.append(subs.pop() if len(subs) == 1 else None)
    dec.labels = labels
    if check_declared:
        for sub in net.spec.subnetworks:
            if not sub.strongly_connected:
                continue
            members = frozenset(v.gid for v in net.nodes if v.subnet == sub.id)
            if members not in dec.components:
                raise TopologyError(
                    f"subnetwork {sub.id!r} is declared strongly connected but splits into "
                    f"{len({dec.comp_of[g] for g in members})} components at N={net.n_per_subnetwork}"
                )
    return dec


# --------------------------------------------------------------------------
# class-level (role) graph


def _canonical_sizes(spec: NetworkSpec) -> tuple[int, int]:
    n = max(4, 2 * spec.arity + 2)
    n += n % 2
    return n, n + 1


@dataclass
class RoleGraph:
    """Roles are (subnetwork, class) pairs; edges carry influence ``src -> dst``.

    ``slots[role]`` lists, per neighbor slot, the set of roles (or held
    constants) that can feed it.
    """

    roles: list[tuple[str, str]]
    edges: set[tuple[tuple[str, str], tuple[str, str]]]
    slots: dict[tuple[str, str], list[set]]

    def intra(self, role):
        return sorted(src for src, dst in self.edges if dst == role and src[0] == role[0])

    def cross_in(self, role):
        return sorted(src for src, dst in self.edges if dst == role and src[0] != role[0])

    def cross_out(self, role):
        return sorted(dst for src, dst in self.edges if src == role and dst[0] != role[0])

    def intra_in_roles(self, role):
        return self.intra(role)


def role_graph(spec: NetworkSpec) -> RoleGraph:
    """Role-level graph collected from two canonical truncations (both parities)."""
    roles: list = []
    edges: set = set()
    slots: dict = {}
    for n in _canonical_sizes(spec):
        net = instantiate(spec, n, validate_first=False)
        for v in net.nodes:
            if v.role not in roles:
                roles.append(v.role)
            per = slots.setdefault(v.role, [set() for _ in v.slots])
            for s, src in enumerate(v.slots):
                if isinstance(src, Constant):
                    per[s].add(src)
                else:
                    per[s].add(net.node(src).role)
                    edges.add((net.node(src).role, v.role))
    order = {(s.id, r.cls): k for k, s in enumerate(spec.subnetworks) for r in s.rules}
    roles.sort(key=lambda r: (order.get(r, 0), r))
    return RoleGraph(roles, edges, slots)


def truncation_role_edges(net: TruncatedNetwork) -> set:
    return {
        (net.node(j).role, v.role) for v in net.nodes for j in v.slots if isinstance(j, int)
    }
