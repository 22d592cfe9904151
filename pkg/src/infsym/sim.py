"""Synchronous closed-loop simulation of a truncated network.

Every node first reads its neighbors' current outputs; then all nodes
advance together.  Each node carries an abstract companion state: it starts
at the quantized initial state and afterwards follows the abstract successor
closest to the concrete successor.  Inputs come from the companion's policy.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .abstraction import OUT
from .designer import QuantDesign
from .netspec import BoxSet, Constant, TruncatedNetwork
from .synthesis import ComposedController, RefinementError


@dataclass
class Violation:
    step: int
    node: int
    kind: str  # "safety" | "asf" | "global-asf" | "mismatch" | "refinement" | "out"
    detail: str

    def to_dict(self):
        return {"step": self.step, "node": self.node, "kind": self.kind, "detail": self.detail}


@dataclass
class TrajectoryLog:
    seed: int
    n: int
    steps: int
    subnets: list[str]
    x: list[np.ndarray] = field(default_factory=list)
    xhat: list[np.ndarray] = field(default_factory=list)
    u: list[np.ndarray] = field(default_factory=list)
    w: list[np.ndarray] = field(default_factory=list)  # (nodes, max_slots), NaN-padded
    v: list[np.ndarray] = field(default_factory=list)
    safe: list[np.ndarray] = field(default_factory=list)
    asf_ok: list[np.ndarray] = field(default_factory=list)
    vbar: list[float] = field(default_factory=list)
    mismatch: list[float] = field(default_factory=list)
    violation: Violation | None = None

    @property
    def ok(self) -> bool:
        return self.violation is None

    def states(self) -> np.ndarray:
        return np.array(self.x)

    def write_csv(self, path: str | Path) -> None:
        n_slots = self.w[0].shape[1] if self.w else 0
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["step", "node", "subnetwork", "x", "xhat", "u",
                          *[f"w{s + 1}" for s in range(n_slots)], "V", "safe", "asf_ok"])
            for k in range(len(self.x)):
                for i in range(len(self.subnets)):
                    u = self.u[k][i] if k < len(self.u) else math.nan
                    w = self.w[k][i] if k < len(self.w) else [math.nan] * n_slots
                    out.writerow([k, i + 1, self.subnets[i], repr(float(self.x[k][i])),
                                  repr(float(self.xhat[k][i])), repr(float(u)),
                                  *["" if math.isnan(x) else repr(float(x)) for x in w],
                                  repr(float(self.v[k][i])), int(self.safe[k][i]), int(self.asf_ok[k][i])])

    def summary(self) -> dict:
        x = self.states()
        by_sub = {}
        for s in dict.fromkeys(self.subnets):
            cols = [i for i, t in enumerate(self.subnets) if t == s]
            by_sub[s] = [float(x[:, cols].min()), float(x[:, cols].max())]
        return {
            "seed": self.seed,
            "N": self.n,
            "steps": self.steps,
            "rows": len(self.x),
            "ok": self.ok,
            "first_violation": None if self.ok else self.violation.to_dict(),
            "max_vbar": max(self.vbar),
            "max_mismatch": max(self.mismatch),
            "max_v": float(np.max(self.v)),
            "state_range": by_sub,
        }


Policy = Callable[[int, float], float]


class Simulator:
    """Precomputes per-node wiring for a composed controller."""

    def __init__(self, controller: ComposedController, design: QuantDesign):
        self.cc = controller
        self.design = design
        net = controller.net
        self.net = net
        spec = net.spec
        self.nodes = net.nodes
        self.cls = [spec.classes[v.cls] for v in net.nodes]
        self.models = [controller.model_of(v.gid) for v in net.nodes]
        self.ctrls = [controller.controller_of(v.gid) for v in net.nodes]
        self.varpi_i = np.array([design.roles[v.role].varpi for v in net.nodes])
        self.max_slots = max((len(v.slots) for v in net.nodes), default=0)
        self.alpha_inv = lambda r: max(c.certificate.alpha_lo.inverse(r) for c in {id(c): c for c in self.cls}.values())
        self.eps_hat = design.epsilon_hat

    def initial(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform over each safe set shrunk by eta_x / 2."""
        x = np.empty(len(self.nodes))
        for i, (c, m) in enumerate(zip(self.cls, self.models)):
            h = m.state_grid.eta / 2
            boxes = [(lo + h, hi - h) for lo, hi in c.safe_set.boxes if hi - lo > 2 * h]
            lens = np.array([hi - lo for lo, hi in boxes])
            b = rng.choice(len(boxes), p=lens / lens.sum())
            x[i] = rng.uniform(*boxes[b])
        return x

    def _outputs(self, x):
        return np.array([c.output_map(xi) for c, xi in zip(self.cls, x)])

    def step(self, x: np.ndarray, xhat_idx: np.ndarray, policy: Policy | None = None):
        """One synchronous step.  Returns ``(x_next, xhat_idx_next, u, w, errors)``."""
        y = self._outputs(x)
        xhat = np.array([m.state_grid.points[j] for m, j in zip(self.models, xhat_idx)])
        yhat = self._outputs(xhat)
        n = len(self.nodes)
        x_next = np.empty(n)
        xi_next = np.empty(n, dtype=np.int64)
        u_all = np.empty(n)
        w_all = np.full((n, self.max_slots), math.nan)
        errors: list[tuple[int, str, str]] = []
        for i, v in enumerate(self.nodes):
            m, c = self.models[i], self.cls[i]
            w, sidx = [], []
            for s, src in enumerate(v.slots):
                g = m.slot_grids[s]
                if isinstance(src, Constant):
                    w.append(src.value)
                    sidx.append(g.quantize_index(src.value))
                else:
                    w.append(y[src - 1])
                    sidx.append(g.quantize_index(yhat[src - 1]))
            w_all[i, : len(w)] = w
            if policy is None:
                ctrl = self.ctrls[i]
                if not ctrl.dom[xhat_idx[i]]:
                    raise RefinementError(f"node {v.gid}: companion left the controller domain", v.gid)
                iu = int(ctrl.actions(xhat_idx[i])[0])
                u = float(m.input_grid.points[iu])
            else:
                u = float(policy(v.gid, x[i]))
                iu = int(np.argmin(np.abs(m.input_grid.points - u)))
            u_all[i] = u
            x_next[i] = c.dynamics(x[i], u, w)
            iw = m.w_index(sidx)
            lo = int(m.lo[xhat_idx[i], iu, iw])
            p = m.state_grid.points
            if lo == OUT:
                errors.append((v.gid, "out", f"abstract image of node {v.gid} left the state set"))
                xi_next[i] = int(np.argmin(np.abs(p - x_next[i])))
            else:
                hi = int(m.hi[xhat_idx[i], iu, iw])
                cand = p[lo : hi + 1]
                xi_next[i] = lo + int(np.argmin(c.certificate.V(x_next[i], cand)))
        return x_next, xi_next, u_all, w_all, errors

    def _monitor(self, log: TrajectoryLog, k: int, x, xhat_idx):
        xhat = np.array([m.state_grid.points[j] for m, j in zip(self.models, xhat_idx)])
        v = np.array([c.certificate.V(a, b) for c, a, b in zip(self.cls, x, xhat)], dtype=float)
        safe = np.array([bool(c.safe_set.contains(a)) for c, a in zip(self.cls, x)])
        asf = v <= self.varpi_i * (1 + 1e-12)
        vbar = float(np.max(self.design.varpi / self.varpi_i * v))
        mism = float(max(abs(c.output_map(a) - c.output_map(b)) for c, a, b in zip(self.cls, x, xhat)))
        log.x.append(x.copy())
        log.xhat.append(xhat)
        log.v.append(v)
        log.safe.append(safe)
        log.asf_ok.append(asf)
        log.vbar.append(vbar)
        log.mismatch.append(mism)
        if log.violation is None:
            if not safe.all():
                i = int(np.flatnonzero(~safe)[0])
                log.violation = Violation(k, i + 1, "safety", f"x={float(x[i])!r} outside the safe set")
            elif not asf.all():
                i = int(np.flatnonzero(~asf)[0])
                log.violation = Violation(k, i + 1, "asf", f"V={float(v[i])!r} > varpi_i={float(self.varpi_i[i])!r}")
            elif vbar > self.design.varpi * (1 + 1e-12):
                log.violation = Violation(k, 0, "global-asf", f"Vbar={vbar!r} > varpi")
            elif mism > self.eps_hat * (1 + 1e-12) or mism > self.alpha_inv(vbar) * (1 + 1e-12) + 1e-15:
                log.violation = Violation(k, 0, "mismatch", f"output mismatch {mism!r}")

    def run(self, steps: int, seed: int, x0: np.ndarray | None = None, policy: Policy | None = None,
            halt: bool = True) -> TrajectoryLog:
        rng = np.random.default_rng(seed)
        x = self.initial(rng) if x0 is None else np.asarray(x0, dtype=float).copy()
        log = TrajectoryLog(seed, self.net.n_per_subnetwork, steps, [v.subnet for v in self.nodes])
        try:
            xi = np.array([m.state_grid.quantize_index(a) for m, a in zip(self.models, x)], dtype=np.int64)
        except ValueError as exc:
            raise RefinementError(f"initial state is not refinable: {exc}") from None
        if policy is None:
            for i, v in enumerate(self.nodes):
                if not self.ctrls[i].dom[xi[i]]:
                    raise RefinementError(f"node {v.gid}: initial state {x[i]} is outside the controller domain", v.gid)
        self._monitor(log, 0, x, xi)
        for k in range(1, steps + 1):
            if halt and log.violation is not None:
                break
            x, xi, u, w, errors = self.step(x, xi, policy)
            log.u.append(u)
            log.w.append(w)
            self._monitor(log, k, x, xi)
            if errors and log.violation is None:
                gid, kind, detail = errors[0]
                log.violation = Violation(k, gid, kind, detail)
        return log


def constant_policy(value: float) -> Policy:
    return lambda gid, x: value


def run(controller: ComposedController, design: QuantDesign, steps: int, seed: int, **kw) -> TrajectoryLog:
    return Simulator(controller, design).run(steps, seed, **kw)


def write_summary(logs: list[TrajectoryLog], path: str | Path) -> dict:
    summary = {
        "ok": all(lg.ok for lg in logs),
        "runs": [lg.summary() for lg in logs],
    }
    Path(path).write_text(json.dumps(summary, indent=2))
    return summary
