"""Uniform grids, symbolic models and alternating-simulation checks.

A symbolic model stores, for every (state, input, internal) index triple,
the contiguous index range ``lo..hi`` of grid states within ``eta_x`` of the
image of the grid point.  ``lo == -1`` marks the OUT sink: the image left
the state set or no grid point is close enough.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .designer import QuantDesign, RoleDesign
from .netspec import (
    AffineDynamics,
    BoxSet,
    Constant,
    FiniteInputs,
    NetworkSpec,
    SubsystemClass,
    TruncatedNetwork,
    instantiate,
    _canonical_sizes,
)

OUT = -1
DEFAULT_MAX_SIZE = 10**8
REL_TOL = 1e-9  # relative to eta, absorbs k*eta round-off


class DomainError(ValueError):
    pass


class ModelTooLarge(RuntimeError):
    def __init__(self, key, sizes: tuple[int, ...], cap: int):
        total = math.prod(sizes)
        super().__init__(
            f"symbolic model for {key} has {total} triples "
            f"(states x inputs x internal = {' x '.join(map(str, sizes))}) above cap {cap}"
        )
        self.sizes = sizes
        self.total = total
        self.cap = cap


class AsfViolation(AssertionError):
    pass


def span(s: BoxSet) -> float:
    return s.span()


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class Grid:
    """Sorted scalar grid.  Uniform grids hold the multiples of ``eta`` inside
    ``boxes``; explicit grids (``eta == 0``) hold a verbatim point list."""

    eta: float
    points: np.ndarray
    boxes: BoxSet | None = None

    @classmethod
    def uniform(cls, boxes: BoxSet, eta: float) -> "Grid":
        eta = float(eta)
        if not eta > 0.0:
            raise DomainError("uniform grid needs eta > 0")
        if eta > boxes.span() * (1 + REL_TOL):
            raise DomainError(f"eta={eta} exceeds span {boxes.span()}")
        pts = []
        for lo, hi in boxes.boxes:
            k0 = math.ceil(lo / eta - REL_TOL)
            k1 = math.floor(hi / eta + REL_TOL)
            pts.append(np.clip(np.arange(k0, k1 + 1) * eta, lo, hi))
        points = np.unique(np.concatenate(pts))
        if points.size == 0:
            raise DomainError(f"no multiple of {eta} inside {boxes.to_list()}")
        return cls(eta, points, boxes)

    @classmethod
    def explicit(cls, values) -> "Grid":
        return cls(0.0, np.unique(np.asarray(values, dtype=float)), None)

    def __len__(self):
        return int(self.points.size)

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and self.eta == other.eta
            and np.array_equal(self.points, other.points)
        )

    def __hash__(self):
        return hash((self.eta, self.points.tobytes()))

    @property
    def tol(self) -> float:
        return REL_TOL * (self.eta if self.eta > 0 else 1.0)

    def contains(self, x, tol: float | None = None):
        tol = self.tol if tol is None else tol
        if self.boxes is None:
            x = np.asarray(x, dtype=float)
            d = np.min(np.abs(x[..., None] - self.points), axis=-1)
            return d <= tol
        return self.boxes.contains(x, tol)

    def quantize_index(self, x):
        """Index of the nearest grid point, ties toward the smaller point."""
        x = np.asarray(x, dtype=float)
        if not np.all(self.contains(x)):
            raise DomainError(f"point(s) outside the grid's set: {x[~np.asarray(self.contains(x))]}")
        p = self.points
        right = np.clip(np.searchsorted(p, x, side="left"), 0, p.size - 1)
        left = np.clip(right - 1, 0, p.size - 1)
        dl = np.abs(x - p[left])
        dr = np.abs(p[right] - x)
        idx = np.where(dl <= dr + 1e-12 * max(self.eta, 1e-300), left, right)
        return idx if idx.shape else int(idx)

    def quantize(self, x):
        return self.points[self.quantize_index(x)]

    def descriptor(self):
        if self.boxes is None:
            return ("points", tuple(self.points.tolist()))
        return ("uniform", self.eta, tuple(self.boxes.boxes))

    def to_dict(self):
        d = {"eta": self.eta, "points": self.points.tolist()}
        if self.boxes is not None:
            d["boxes"] = self.boxes.to_list()
        return d

    @classmethod
    def from_dict(cls, d):
        boxes = BoxSet(tuple(map(tuple, d["boxes"]))) if "boxes" in d else None
        return cls(float(d["eta"]), np.asarray(d["points"], dtype=float), boxes)


def input_grid(cls: SubsystemClass, eta_u: float) -> Grid:
    if isinstance(cls.input_set, FiniteInputs):
        if eta_u != 0.0:
            raise DomainError("finite input sets are used verbatim (eta_u must be 0)")
        return Grid.explicit(cls.input_set.values)
    if not eta_u > 0.0:
        raise DomainError(f"class {cls.id!r}: a continuum input set needs eta_u > 0")
    return Grid.uniform(cls.input_set, eta_u)


# --------------------------------------------------------------------------
# slots and model keys


@dataclass(frozen=True)
class SlotSpec:
    """What one neighbor slot of a node sees: the internal grid and the
    assume-guarantee restriction (grid points reachable from the feeder's
    safe outputs within ``phi``)."""

    grid_desc: tuple
    safe_boxes: tuple | None  # feeder's h(S), None for held constants
    phi: float

    def grid(self) -> Grid:
        kind = self.grid_desc[0]
        if kind == "points":
            return Grid.explicit(self.grid_desc[1])
        return Grid.uniform(BoxSet(self.grid_desc[2]), self.grid_desc[1])

    def safe_indices(self, grid: Grid | None = None) -> np.ndarray:
        grid = grid or self.grid()
        if self.safe_boxes is None:
            return np.arange(len(grid))
        safe = BoxSet(self.safe_boxes)
        p = grid.points
        near = np.zeros(p.shape, dtype=bool)
        for lo, hi in safe.boxes:
            dist = np.maximum(np.maximum(lo - p, p - hi), 0.0)
            near |= dist <= self.phi + grid.tol
        return np.flatnonzero(near)


@dataclass(frozen=True)
class ModelKey:
    cls: str
    eta_x: float
    eta_u: float
    slots: tuple[SlotSpec, ...]

    def label(self) -> str:
        parts = []
        for s in self.slots:
            if s.grid_desc[0] == "points":
                parts.append("const")
            else:
                lo = s.grid_desc[2][0][0]
                hi = s.grid_desc[2][-1][1]
                parts.append(f"[{lo:g},{hi:g}]@{s.grid_desc[1]:g}")
        return f"{self.cls}<{', '.join(parts)}>"


def _scaled(boxes: BoxSet, c: float) -> BoxSet:
    return BoxSet(tuple((c * lo, c * hi) for lo, hi in boxes.boxes))


def slot_spec(spec: NetworkSpec, design: QuantDesign, reader_role, feeder) -> SlotSpec:
    if isinstance(feeder, Constant):
        return SlotSpec(("points", (float(feeder.value),)), None, 0.0)
    fcls = spec.classes[feeder[1]]
    c = fcls.output_map.c
    w_set = _scaled(fcls.state_set, c)
    phi = float(design.phi[(reader_role, feeder)])
    if phi == 0.0:
        # internal grid is the feeder's output grid
        pitch = c * design.roles[feeder].eta_x
    else:
        pitch = phi
    return SlotSpec(("uniform", pitch, w_set.boxes), _scaled(fcls.safe_set, c).boxes, phi)


def node_model_key(spec: NetworkSpec, design: QuantDesign, net: TruncatedNetwork, gid: int) -> ModelKey:
    v = net.node(gid)
    d = design.roles[v.role]
    slots = tuple(
        slot_spec(spec, design, v.role, s if isinstance(s, Constant) else net.node(s).role)
        for s in v.slots
    )
    return ModelKey(v.cls, d.eta_x, d.eta_u, slots)


@dataclass
class ModelPlan:
    """Assignment of nodes to shared model keys for one truncation."""

    keys: list[ModelKey]
    node_key: dict[int, int]  # gid -> index into keys

    def instances(self, k: int) -> list[int]:
        return sorted(g for g, kk in self.node_key.items() if kk == k)


def plan_models(
    spec: NetworkSpec,
    design: QuantDesign,
    net: TruncatedNetwork | None = None,
    base: ModelPlan | None = None,
) -> ModelPlan:
    """Distinct model keys.  Without ``net`` the keys are collected from the
    canonical instantiations, which cover every truncation size.  With
    ``base`` the truncation's nodes are mapped onto the base key list, so
    models built for the base are reused; a key outside the base is an error.
    """
    nets = [net] if net is not None else [instantiate(spec, n, validate_first=False) for n in _canonical_sizes(spec)]
    keys: list[ModelKey] = list(base.keys) if base is not None else []
    index: dict[ModelKey, int] = {k: i for i, k in enumerate(keys)}
    node_key: dict[int, int] = {}
    for nt in nets:
        for v in nt.nodes:
            key = node_model_key(spec, design, nt, v.gid)
            if key not in index:
                if base is not None:
                    raise ValueError(f"node {v.gid} needs model {key.label()} missing from the base plan")
                index[key] = len(keys)
                keys.append(key)
            if nt is net:
                node_key[v.gid] = index[key]
    return ModelPlan(keys, node_key)


# --------------------------------------------------------------------------
# symbolic models


@dataclass(eq=False)
class SymbolicModel:
    key: ModelKey
    state_grid: Grid
    input_grid: Grid
    slot_grids: list[Grid]
    lo: np.ndarray  # int32, shape (nx, nu, nw); OUT where lo == -1
    hi: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def cls(self) -> str:
        return self.key.cls

    @property
    def w_shape(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.slot_grids)

    @property
    def n_triples(self) -> int:
        return int(self.lo.size)

    def w_index(self, slot_indices) -> int:
        if not self.slot_grids:
            return 0
        return int(np.ravel_multi_index(tuple(slot_indices), self.w_shape))

    def w_values(self, flat=None) -> np.ndarray:
        """Internal-input values, shape (nw, n_slots)."""
        if not self.slot_grids:
            return np.zeros((1, 0))
        mesh = np.meshgrid(*[g.points for g in self.slot_grids], indexing="ij")
        vals = np.stack([m.ravel() for m in mesh], axis=1)
        return vals if flat is None else vals[flat]

    def successors(self, ix: int, iu: int, iw: int) -> np.ndarray | None:
        lo = int(self.lo[ix, iu, iw])
        if lo == OUT:
            return None
        return np.arange(lo, int(self.hi[ix, iu, iw]) + 1)

    def is_out(self, ix, iu, iw) -> bool:
        return int(self.lo[ix, iu, iw]) == OUT

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {
            "key": _key_to_json(self.key),
            "state_grid": self.state_grid.to_dict(),
            "input_grid": self.input_grid.to_dict(),
            "slot_grids": [g.to_dict() for g in self.slot_grids],
            "meta": self.meta,
            "out_marker": OUT,
        }
        np.savez_compressed(Path(path), lo=self.lo, hi=self.hi, meta=np.array(json.dumps(meta)))

    @classmethod
    def load(cls, path: str | Path) -> "SymbolicModel":
        with np.load(Path(path)) as z:
            meta = json.loads(str(z["meta"]))
            lo, hi = z["lo"], z["hi"]
        return cls(
            _key_from_json(meta["key"]),
            Grid.from_dict(meta["state_grid"]),
            Grid.from_dict(meta["input_grid"]),
            [Grid.from_dict(g) for g in meta["slot_grids"]],
            lo,
            hi,
            meta.get("meta", {}),
        )


def _key_to_json(key: ModelKey) -> dict:
    return {
        "cls": key.cls,
        "eta_x": key.eta_x,
        "eta_u": key.eta_u,
        "slots": [
            {"grid": [s.grid_desc[0], *([list(map(list, s.grid_desc[2])), s.grid_desc[1]] if s.grid_desc[0] == "uniform" else [list(s.grid_desc[1])])],
             "safe": None if s.safe_boxes is None else [list(b) for b in s.safe_boxes],
             "phi": s.phi}
            for s in key.slots
        ],
    }


def _key_from_json(d: dict) -> ModelKey:
    slots = []
    for s in d["slots"]:
        g = s["grid"]
        if g[0] == "uniform":
            desc = ("uniform", float(g[2]), tuple(tuple(b) for b in g[1]))
        else:
            desc = ("points", tuple(g[1]))
        safe = None if s["safe"] is None else tuple(tuple(b) for b in s["safe"])
        slots.append(SlotSpec(desc, safe, float(s["phi"])))
    return ModelKey(d["cls"], float(d["eta_x"]), float(d["eta_u"]), tuple(slots))


def successor_ranges(images: np.ndarray, grid: Grid, state_set: BoxSet, eta: float):
    """Closed-ball successor index ranges for an array of images."""
    tol = REL_TOL * eta
    p = grid.points
    lo = np.searchsorted(p, images - eta - tol, side="left")
    hi = np.searchsorted(p, images + eta + tol, side="right") - 1
    ok = state_set.contains(images, tol) & (lo <= hi)
    lo = np.where(ok, lo, OUT).astype(np.int32)
    hi = np.where(ok, hi, OUT - 1).astype(np.int32)
    return lo, hi


def _images(cls: SubsystemClass, x, u, w_vals) -> np.ndarray:
    dyn = cls.dynamics
    if isinstance(dyn, AffineDynamics):
        y = dyn.a * x[:, None, None] + dyn.b * u[None, :, None]
        if dyn.n_slots:
            y = y + (w_vals @ np.asarray(dyn.d))[None, None, :]
        return y
    ws = [w_vals[:, s][None, None, :] for s in range(w_vals.shape[1])]
    return np.asarray(dyn(x[:, None, None], u[None, :, None], ws), dtype=float) * np.ones(
        (x.size, u.size, w_vals.shape[0])
    )


def build_symbolic_model(
    cls: SubsystemClass,
    key: ModelKey,
    max_size: int = DEFAULT_MAX_SIZE,
    chunk: int = 2_000_000,
) -> SymbolicModel:
    """Enumerate every (state, input, internal) triple and store its successors."""
    if key.cls != cls.id:
        raise ValueError(f"model key is for {key.cls!r}, class is {cls.id!r}")
    xg = Grid.uniform(cls.state_set, key.eta_x)
    ug = input_grid(cls, key.eta_u)
    sgrids = [s.grid() for s in key.slots]
    sizes = (len(xg), len(ug), math.prod(len(g) for g in sgrids))
    if math.prod(sizes) > max_size:
        raise ModelTooLarge(key.label(), sizes, max_size)
    model = SymbolicModel(key, xg, ug, sgrids, np.empty(sizes, np.int32), np.empty(sizes, np.int32))
    w_vals = model.w_values()
    rows = max(1, chunk // max(1, sizes[1] * sizes[2]))
    for start in range(0, sizes[0], rows):
        stop = min(sizes[0], start + rows)
        y = _images(cls, xg.points[start:stop], ug.points, w_vals)
        model.lo[start:stop], model.hi[start:stop] = successor_ranges(y, xg, cls.state_set, key.eta_x)
    model.meta = {"n_out": int(np.count_nonzero(model.lo == OUT)), "sizes": list(sizes)}
    return model


def build_models(spec: NetworkSpec, plan: ModelPlan, max_size: int = DEFAULT_MAX_SIZE) -> list[SymbolicModel]:
    return [build_symbolic_model(spec.classes[k.cls], k, max_size) for k in plan.keys]


# --------------------------------------------------------------------------
# ASF checks


@dataclass
class CheckReport:
    cls: str
    trials: int
    checks: int
    skipped_out: int
    max_v: float
    varpi: float
    counterexamples: list[dict]

    @property
    def ok(self) -> bool:
        return not self.counterexamples

    def to_dict(self):
        return {
            "class": self.cls,
            "ok": self.ok,
            "trials": self.trials,
            "checks": self.checks,
            "skipped_out": self.skipped_out,
            "max_v": self.max_v,
            "varpi": self.varpi,
            "counterexamples": self.counterexamples[:10],
            "n_counterexamples": len(self.counterexamples),
        }


def check_local_asf(
    cls: SubsystemClass,
    model: SymbolicModel,
    role: RoleDesign,
    samples: int = 1000,
    seed: int = 0,
    varpi: float | None = None,
    raise_on_failure: bool = False,
) -> CheckReport:
    """Randomized one-step check of the local alternating simulation property.

    Each trial draws a grid state, a concrete state within ``varpi_i`` of it,
    a grid internal input and a concrete internal input within ``vartheta_i``
    of it; every abstract input is then applied to both sides and some
    abstract successor must stay within ``varpi_i`` of the concrete successor.
    """
    rng = np.random.default_rng(seed)
    varpi_i = role.varpi if varpi is None else float(varpi)
    vartheta = role.vartheta
    V = cls.certificate.V
    xg, ug = model.state_grid, model.input_grid
    n_slots = len(model.slot_grids)
    w_bounds = [(g.points[0], g.points[-1]) for g in model.slot_grids]
    tol = 1e-12 * max(1.0, varpi_i)

    ix = rng.integers(0, len(xg), samples)
    xhat = xg.points[ix]
    lo_x = np.maximum(xhat - varpi_i, cls.state_set.lo)
    hi_x = np.minimum(xhat + varpi_i, cls.state_set.hi)
    x = rng.uniform(lo_x, hi_x)
    x = np.where(cls.state_set.contains(x), x, xhat)
    sidx = np.stack([rng.integers(0, len(g), samples) for g in model.slot_grids], axis=1) if n_slots else np.zeros((samples, 0), int)
    what = np.stack([g.points[sidx[:, s]] for s, g in enumerate(model.slot_grids)], axis=1) if n_slots else np.zeros((samples, 0))
    w = np.empty_like(what)
    for s in range(n_slots):
        a, b = w_bounds[s]
        w[:, s] = rng.uniform(np.maximum(what[:, s] - vartheta, a), np.minimum(what[:, s] + vartheta, b))
    iw = np.ravel_multi_index(tuple(sidx.T), model.w_shape) if n_slots else np.zeros(samples, int)

    checks = skipped = 0
    max_v = 0.0
    bad: list[dict] = []
    p = xg.points
    for iu, u in enumerate(ug.points):
        xplus = np.asarray(cls.dynamics(x, u, [w[:, s] for s in range(n_slots)]), dtype=float)
        lo = model.lo[ix, iu, iw].astype(np.int64)
        hi = model.hi[ix, iu, iw].astype(np.int64)
        live = lo != OUT
        skipped += int(np.count_nonzero(~live))
        checks += int(np.count_nonzero(live))
        # nearest successor in the contiguous range lo..hi
        k = np.clip(np.searchsorted(p, xplus), np.where(live, lo, 0), np.where(live, hi, 0))
        k1 = np.clip(k - 1, np.where(live, lo, 0), np.where(live, hi, 0))
        v = np.minimum(V(xplus, p[k]), V(xplus, p[k1]))
        v = np.where(live, v, 0.0)
        if v.size:
            max_v = max(max_v, float(v.max()))
        for t in np.flatnonzero(live & (v > varpi_i + tol)):
            bad.append({
                "xhat": float(xhat[t]), "x": float(x[t]), "u": float(u),
                "what": what[t].tolist(), "w": w[t].tolist(),
                "x_plus": float(xplus[t]), "best_v": float(v[t]),
            })
    report = CheckReport(cls.id, samples, checks, skipped, max_v, varpi_i, bad)
    if raise_on_failure and bad:
        raise AsfViolation(f"{len(bad)} counterexample(s) for {cls.id}: {bad[0]}")
    return report


@dataclass
class GlobalAsf:
    vbar: float
    mismatch: float
    bound: float  # alpha_lo^{-1}(vbar)

    @property
    def ok(self) -> bool:
        return self.mismatch <= self.bound * (1 + 1e-12) + 1e-15


def eval_global_asf(net: TruncatedNetwork, x, xhat, design: QuantDesign, check: bool = True) -> GlobalAsf:
    """``sup_i (varpi / varpi_i) V_i(x_i, xhat_i)`` and the output mismatch."""
    x = np.asarray(x, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    if x.shape != (len(net),) or xhat.shape != (len(net),):
        raise ValueError("state vectors must have one entry per node")
    spec = net.spec
    vbar = 0.0
    mismatch = 0.0
    classes = set()
    for v in net.nodes:
        c = spec.classes[v.cls]
        i = v.gid - 1
        vi = float(c.certificate.V(x[i], xhat[i]))
        vbar = max(vbar, design.varpi / design.roles[v.role].varpi * vi)
        h = c.output_map
        mismatch = max(mismatch, abs(float(h(x[i]) - h(xhat[i]))))
        classes.add(v.cls)
    # global alpha_lo is the pointwise min of the local ones
    bound = max(spec.classes[c].certificate.alpha_lo.inverse(vbar) for c in classes)
    res = GlobalAsf(vbar, mismatch, bound)
    if check and not res.ok:
        raise AsfViolation(f"output mismatch {mismatch} exceeds alpha^-1(Vbar) = {bound}")
    return res
