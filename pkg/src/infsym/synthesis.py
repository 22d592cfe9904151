"""Safety controllers on symbolic models.

Synthesis computes the maximal controlled-invariant subset of the safe grid
while internal inputs range over the assume-guarantee set (grid points the
neighbors can produce from their own safe sets).  Local controllers are then
composed over a truncation, one controller per model key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .abstraction import OUT, DomainError, ModelKey, ModelPlan, SymbolicModel, _key_from_json, _key_to_json
from .netspec import BoxSet, NetworkSpec, TruncatedNetwork


class RefinementError(RuntimeError):
    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


class CompositionError(RuntimeError):
    pass


@dataclass(eq=False)
class SafetyController:
    key: ModelKey
    dom: np.ndarray  # bool, per abstract state
    policy: np.ndarray  # bool (nx, nu); rows outside dom are all False
    safe_w: np.ndarray  # flat internal indices used during synthesis
    iterations: int = 0

    @property
    def cls(self) -> str:
        return self.key.cls

    @property
    def empty(self) -> bool:
        return not self.dom.any()

    def dom_indices(self) -> np.ndarray:
        return np.flatnonzero(self.dom)

    def actions(self, ix: int) -> np.ndarray:
        return np.flatnonzero(self.policy[ix])

    def to_dict(self) -> dict:
        return {
            "key": _key_to_json(self.key),
            "dom": self.dom_indices().tolist(),
            "policy": {str(i): self.actions(i).tolist() for i in self.dom_indices()},
            "n_states": int(self.dom.size),
            "n_inputs": int(self.policy.shape[1]),
            "safe_w": self.safe_w.tolist(),
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SafetyController":
        nx, nu = d["n_states"], d["n_inputs"]
        dom = np.zeros(nx, dtype=bool)
        dom[d["dom"]] = True
        policy = np.zeros((nx, nu), dtype=bool)
        for i, us in d["policy"].items():
            policy[int(i), us] = True
        return cls(_key_from_json(d["key"]), dom, policy, np.asarray(d["safe_w"], dtype=np.int64),
                   int(d.get("iterations", 0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "SafetyController":
        return cls.from_dict(json.loads(Path(path).read_text()))


def restricted_internal(model: SymbolicModel) -> np.ndarray:
    """Flat internal indices whose every slot value is a feeder safe output."""
    per_slot = [s.safe_indices(g) for s, g in zip(model.key.slots, model.slot_grids)]
    if not per_slot:
        return np.zeros(1, dtype=np.int64)
    mesh = np.meshgrid(*per_slot, indexing="ij")
    return np.ravel_multi_index(tuple(m.ravel() for m in mesh), model.w_shape).astype(np.int64)


def _winning_inputs(lo: np.ndarray, hi: np.ndarray, dom: np.ndarray) -> np.ndarray:
    """(nx, nu) mask of inputs whose every successor (over the internal axis)
    lies in ``dom`` and never hits OUT.  Successor sets are index ranges, so
    containment is a prefix-sum lookup."""
    cum = np.concatenate(([0], np.cumsum(dom, dtype=np.int64)))
    live = lo != OUT
    lo_c = np.where(live, lo, 0)
    hi_c = np.where(live, hi, 0)
    inside = live & (cum[hi_c + 1] - cum[lo_c] == hi_c - lo_c + 1)
    return inside.all(axis=2)


def synthesize_safety(
    model: SymbolicModel,
    safe_set: BoxSet,
    safe_w: np.ndarray | None = None,
) -> SafetyController:
    """Greatest fixed point D = {x in S | exists u forall w: post(x,u,w) in D}."""
    if safe_w is None:
        safe_w = restricted_internal(model)
    lo = model.lo[:, :, safe_w]
    hi = model.hi[:, :, safe_w]
    dom = np.asarray(safe_set.contains(model.state_grid.points, model.state_grid.tol), dtype=bool)
    iterations = 0
    while True:
        iterations += 1
        win = _winning_inputs(lo, hi, dom)
        new = dom & win.any(axis=1)
        if np.array_equal(new, dom):
            break
        dom = new
    policy = win & dom[:, None]
    return SafetyController(model.key, dom, policy, np.asarray(safe_w, dtype=np.int64), iterations)


def closure_violations(controller: SafetyController, model: SymbolicModel) -> int:
    """Count (x, u, w) triples in dom x policy x safe_w that leave dom.

    Uses a next-excluded-state table rather than the prefix sums of the
    synthesis loop, so it is an independent re-check.
    """
    dom = controller.dom
    n = dom.size
    nxt = np.full(n + 1, n, dtype=np.int64)
    for i in range(n - 1, -1, -1):
        nxt[i] = i if not dom[i] else nxt[i + 1]
    ix, iu = np.nonzero(controller.policy)
    lo = model.lo[ix, iu][:, controller.safe_w].astype(np.int64)
    hi = model.hi[ix, iu][:, controller.safe_w].astype(np.int64)
    out = lo == OUT
    escapes = ~out & (nxt[np.where(out, 0, lo)] <= hi)
    bad_state = ~dom[ix]
    return int(np.count_nonzero(out) + np.count_nonzero(escapes) + np.count_nonzero(bad_state))


def refine(controller: SafetyController, model: SymbolicModel, x: float, node: int | None = None,
           xhat_index: int | None = None) -> tuple[float, float, int, int]:
    """Concrete input and abstract state for concrete state ``x``.

    The abstract state is ``quantize(x)`` unless a tracked companion index is
    given.  The input is the lowest admissible index.  Returns
    ``(u, xhat, u_index, xhat_index)``.
    """
    try:
        ix = model.state_grid.quantize_index(x) if xhat_index is None else int(xhat_index)
    except DomainError as exc:
        raise RefinementError(f"node {node}: state {x} is outside the state set ({exc})", node) from None
    if not controller.dom[ix]:
        raise RefinementError(
            f"node {node}: abstract state {model.state_grid.points[ix]} (from x={x}) "
            "is outside the controller domain", node
        )
    iu = int(controller.actions(ix)[0])
    return float(model.input_grid.points[iu]), float(model.state_grid.points[ix]), iu, ix


@dataclass
class ComposedController:
    """Product of local controllers over a truncation.  Each node's action
    set is exactly its local controller's action set, so the composition is a
    safety controller for the network whenever every local one is."""

    net: TruncatedNetwork
    plan: ModelPlan
    models: list[SymbolicModel]
    controllers: list[SafetyController]
    guarantee: str = field(default="product of local safety controllers is a network safety controller")

    def model_of(self, gid: int) -> SymbolicModel:
        return self.models[self.plan.node_key[gid]]

    def controller_of(self, gid: int) -> SafetyController:
        return self.controllers[self.plan.node_key[gid]]

    def in_dom(self, xhat_indices) -> bool:
        return all(self.controller_of(v.gid).dom[int(xhat_indices[v.gid - 1])] for v in self.net.nodes)

    def actions(self, gid: int, ix: int) -> np.ndarray:
        return self.controller_of(gid).actions(ix)

    @property
    def n_distinct(self) -> int:
        return len(set(self.plan.node_key.values()))


def compose(net: TruncatedNetwork, plan: ModelPlan, models: list[SymbolicModel],
            controllers: list[SafetyController]) -> ComposedController:
    for v in net.nodes:
        k = plan.node_key.get(v.gid)
        if k is None:
            raise CompositionError(f"node {v.gid} ({v.subnet}:{v.local}) has no model")
        if controllers[k].empty:
            raise CompositionError(
                f"node {v.gid} ({v.subnet}:{v.local}, class {v.cls}) has an empty controller domain"
            )
    return ComposedController(net, plan, models, controllers)


def synthesize_all(spec: NetworkSpec, models: list[SymbolicModel]) -> list[SafetyController]:
    return [synthesize_safety(m, spec.classes[m.cls].safe_set) for m in models]
