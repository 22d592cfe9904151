"""Command-line pipelines: validate, design, abstract, synthesize, simulate,
verify and the bundled traffic reproduction.

Exit codes: 0 success, 1 domain failure (infeasible design, empty
controller, monitor violation, failed check), 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import abstraction, designer, gains, netspec, sim, synthesis
from .kfun import CertificateViolation, KFnError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class DomainFailure(Exception):
    pass


def bundled_config() -> Path:
    return Path(str(resources.files("infsym") / "data" / "traffic.cfg"))


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _theta(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("theta must lie in (0, 1)")
    return v


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _emit(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


# --------------------------------------------------------------------------
# pipeline stages


@dataclass
class Pipeline:
    spec: netspec.NetworkSpec
    design: designer.QuantDesign | None = None
    base: abstraction.ModelPlan | None = None
    models: list | None = None
    controllers: list | None = None


def load(path) -> netspec.NetworkSpec:
    try:
        spec = netspec.load_spec(Path(path))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot load config {path}: {exc}") from None
    return spec


def require_valid(spec) -> netspec.ValidationReport:
    report = netspec.validate(spec)
    if not report.ok:
        raise UsageError("invalid config:\n" + "\n".join(map(str, report.diagnostics)))
    return report


def stage_design(spec, args) -> designer.QuantDesign:
    opts = designer.DesignOptions(theta=args.theta, phi_mode=args.phi_mode, eta_x=args.eta_x)
    try:
        return designer.run_algorithm1(spec, args.varpi, opts)
    except (designer.InfeasibleDesign, gains.SmallGainFailure, CertificateViolation) as exc:
        raise DomainFailure(str(exc)) from None


def stage_models(p: Pipeline, max_size: int):
    p.base = abstraction.plan_models(p.spec, p.design)
    try:
        p.models = abstraction.build_models(p.spec, p.base, max_size)
    except abstraction.ModelTooLarge as exc:
        raise DomainFailure(str(exc)) from None


def stage_synthesize(p: Pipeline):
    p.controllers = synthesis.synthesize_all(p.spec, p.models)


def composed(p: Pipeline, n: int) -> synthesis.ComposedController:
    try:
        net = netspec.instantiate(p.spec, n)
    except netspec.InstantiationError as exc:
        raise UsageError(str(exc)) from None
    plan = abstraction.plan_models(p.spec, p.design, net, p.base)
    try:
        return synthesis.compose(net, plan, p.models, p.controllers)
    except synthesis.CompositionError as exc:
        raise DomainFailure(str(exc)) from None


def controller_summary(p: Pipeline) -> list[dict]:
    return [
        {
            "model": m.key.label(),
            "class": m.cls,
            "states": len(m.state_grid),
            "triples": m.n_triples,
            "dom_size": int(c.dom.sum()),
            "dom_range": [float(m.state_grid.points[c.dom_indices()[0]]), float(m.state_grid.points[c.dom_indices()[-1]])] if not c.empty else None,
            "iterations": c.iterations,
        }
        for m, c in zip(p.models, p.controllers)
    ]


def save_artifacts(p: Pipeline, out: Path, what: set[str]) -> None:
    if "design" in what:
        _write_json(out / "design.json", p.design.to_dict())
    if "models" in what:
        (out / "models").mkdir(parents=True, exist_ok=True)
        for k, m in enumerate(p.models):
            m.save(out / "models" / f"model_{k}.npz")
        _write_json(out / "models" / "index.json", [m.key.label() for m in p.models])
    if "controllers" in what:
        (out / "controllers").mkdir(parents=True, exist_ok=True)
        for k, c in enumerate(p.controllers):
            c.save(out / "controllers" / f"controller_{k}.json")
        _write_json(out / "controllers" / "summary.json", controller_summary(p))


def run_sims(p: Pipeline, n: int, steps: int, seeds: list[int], out: Path | None = None) -> list[sim.TrajectoryLog]:
    cc = composed(p, n)
    s = sim.Simulator(cc, p.design)
    logs = []
    for seed in seeds:
        try:
            lg = s.run(steps, seed)
        except synthesis.RefinementError as exc:
            raise DomainFailure(str(exc)) from None
        logs.append(lg)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            lg.write_csv(out / f"trajectory_seed{seed}.csv")
    return logs


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    spec = load(args.config)
    report = netspec.validate(spec)
    _emit(report.to_dict())
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_design(args) -> int:
    spec = load(args.config)
    require_valid(spec)
    d = stage_design(spec, args)
    ver = designer.verify_design(d, spec)
    doc = {"design": d.to_dict(), "verification": ver.to_dict()}
    if args.out:
        _write_json(Path(args.out) / "design.json", d.to_dict())
    _emit(doc)
    return EXIT_OK if ver.ok else EXIT_FAIL


def _prepare(args, synth: bool) -> Pipeline:
    spec = load(args.config)
    require_valid(spec)
    p = Pipeline(spec, stage_design(spec, args))
    stage_models(p, args.max_size)
    if synth:
        stage_synthesize(p)
    return p


def cmd_abstract(args) -> int:
    p = _prepare(args, synth=False)
    out = Path(args.out)
    save_artifacts(p, out, {"design", "models"})
    _emit([{"model": m.key.label(), "sizes": m.meta["sizes"], "out_triples": m.meta["n_out"]} for m in p.models])
    return EXIT_OK


def cmd_synthesize(args) -> int:
    p = _prepare(args, synth=True)
    save_artifacts(p, Path(args.out), {"design", "models", "controllers"})
    summary = controller_summary(p)
    _emit(summary)
    return EXIT_FAIL if any(s["dom_size"] == 0 for s in summary) else EXIT_OK


def cmd_simulate(args) -> int:
    p = _prepare(args, synth=True)
    out = Path(args.out)
    seeds = list(range(args.seed, args.seed + args.runs))
    logs = run_sims(p, args.truncation, args.steps, seeds, out)
    summary = sim.write_summary(logs, out / "summary.json")
    _emit({"ok": summary["ok"], "runs": len(logs),
           "violations": [r["first_violation"] for r in summary["runs"] if not r["ok"]]})
    return EXIT_OK if summary["ok"] else EXIT_FAIL


def verify_artifacts(spec, out: Path, samples: int, seed: int) -> dict:
    """Re-check a design / model / controller dump without rebuilding it."""
    checks: dict = {}
    design_path = out / "design.json"
    if not design_path.exists():
        raise UsageError(f"no design.json in {out}")
    d = designer.QuantDesign.from_dict(json.loads(design_path.read_text()))
    checks["design"] = designer.verify_design(d, spec).to_dict()
    models = sorted((out / "models").glob("model_*.npz"), key=lambda q: int(q.stem.split("_")[1]))
    ctrls = sorted((out / "controllers").glob("controller_*.json"), key=lambda q: int(q.stem.split("_")[1]))
    checks["models"] = []
    for k, mp in enumerate(models):
        m = abstraction.SymbolicModel.load(mp)
        cls = spec.classes[m.cls]
        role = next(r for r in d.roles.values() if r.cls == m.cls and r.eta_x == m.key.eta_x)
        asf = abstraction.check_local_asf(cls, m, role, samples=samples, seed=seed + k)
        entry = {"model": m.key.label(), "asf": asf.to_dict()}
        if k < len(ctrls):
            c = synthesis.SafetyController.load(ctrls[k])
            entry["closure_violations"] = synthesis.closure_violations(c, m)
            entry["dom_in_safe_set"] = bool(np.all(cls.safe_set.contains(m.state_grid.points[c.dom_indices()])))
        checks["models"].append(entry)
    ok = checks["design"]["ok"] and all(
        e["asf"]["ok"] and e.get("closure_violations", 0) == 0 and e.get("dom_in_safe_set", True)
        for e in checks["models"]
    )
    checks["ok"] = ok
    return checks


def cmd_verify(args) -> int:
    spec = load(args.config)
    require_valid(spec)
    checks = verify_artifacts(spec, Path(args.out), args.samples, args.seed)
    _emit(checks)
    return EXIT_OK if checks["ok"] else EXIT_FAIL


# expected figures for the bundled traffic config
TRAFFIC_EXPECTED = {
    "varpi_i": 0.8,
    "vartheta_i": 0.8,
    "eta_x_bound": 0.10666666666666667,
    "eta_x": 0.1,
    "gamma": 9 / 13,
    "secquantinit_slack": 0.1 / 15,
}


def reproduce_traffic(config: Path, out: Path | None, n: int = 10, steps: int = 100, runs: int = 20,
                      seed: int = 0, samples: int = 10_000) -> list[dict]:
    rows: list[dict] = []

    def record(name, ok, detail, seconds=None):
        rows.append({"check": name, "ok": bool(ok), "detail": detail,
                     **({} if seconds is None else {"seconds": round(seconds, 3)})})

    spec = load(config)
    require_valid(spec)
    exp = TRAFFIC_EXPECTED

    t = time.perf_counter()
    d = designer.run_algorithm1(spec, 0.8)
    dt = time.perf_counter() - t
    roles = list(d.roles.values())
    ok = (
        all(abs(r.varpi - exp["varpi_i"]) <= 1e-12 and abs(r.vartheta - exp["vartheta_i"]) <= 1e-12 for r in roles)
        and all(p == 0.0 for p in d.phi.values())
        and all(r.eta_u == 0.0 for r in roles)
        and all(abs(r.eta_x_bound - exp["eta_x_bound"]) <= 1e-9 for r in roles)
        and all(r.eta_x == exp["eta_x"] for r in roles)
    )
    record("design (varpi_i, vartheta_i, phi, eta_u, eta_x bound, eta_x)", ok,
           f"eta_x_bound={roles[0].eta_x_bound:.12g} eta_x={roles[0].eta_x}", dt)

    rg = netspec.role_graph(spec)
    gm, _ = gains.role_gain_matrix(rg, spec)
    sg = gains.check_small_gain(gm, gains.assumption_bounds({c: k.certificate for c, k in spec.classes.items()}))
    gam = [g for e in gm.entries for g in e.values()]
    ok = all(abs(g - exp["gamma"]) <= 1e-6 for g in gam) and all(
        s.method == "uniform-gain-shortcut" and set(s.sigma.values()) <= {1.0} and s.lam < 1.0 for s in sg
    )
    record("small-gain (gamma, sigma = 1, lambda = gamma)", ok, f"gamma={max(gam):.9f}")

    ver = designer.verify_design(d, spec)
    slack = min(r["slack"] for r in ver.secquantinit)
    ok = ver.ok and all(r["slack"] >= 0 for r in ver.compoquaninit) and abs(slack - exp["secquantinit_slack"]) <= 1e-9
    record("simultaneous inequalities", ok, f"secquantinit slack={slack:.12g}")

    p = Pipeline(spec, d)
    t = time.perf_counter()
    stage_models(p, abstraction.DEFAULT_MAX_SIZE)
    used = set()
    for size in (n, 200):
        net = netspec.instantiate(spec, size)
        used |= set(abstraction.plan_models(spec, d, net, p.base).node_key.values())
    record("scale-free models", used <= set(range(len(p.models))),
           f"N={n} and N=200 reuse {len(used)} of {len(p.models)} shared models")
    stage_synthesize(p)
    dt = time.perf_counter() - t
    closure = sum(synthesis.closure_violations(c, m) for c, m in zip(p.controllers, p.models))
    record("synthesis closure", closure == 0 and not any(c.empty for c in p.controllers),
           f"{len(p.models)} models, closure violations={closure}", dt)

    asf_ok, neg_ok = True, True
    for k, m in enumerate(p.models):
        role = next(r for r in roles if r.cls == m.cls)
        rep = abstraction.check_local_asf(spec.classes[m.cls], m, role, samples=samples, seed=seed + k)
        neg = abstraction.check_local_asf(spec.classes[m.cls], m, role, samples=samples, seed=seed + k, varpi=0.05)
        asf_ok &= rep.ok
        neg_ok &= not neg.ok
    record("local ASF (10^4 trials per model)", asf_ok, "zero counterexamples" if asf_ok else "counterexample found")
    record("local ASF negative control (varpi_i = 0.05)", neg_ok, "counterexamples found" if neg_ok else "none found")

    t = time.perf_counter()
    logs = run_sims(p, n, steps, list(range(seed, seed + runs)), out / "trajectories" if out else None)
    dt = time.perf_counter() - t
    bad = [lg.violation.to_dict() for lg in logs if not lg.ok]
    record(f"closed loop ({runs} runs, N={n}, {steps} steps)", not bad,
           f"max Vbar={max(max(lg.vbar) for lg in logs):.6g}" if not bad else f"first violation {bad[0]}", dt)
    if out is not None:
        save_artifacts(p, out, {"design", "controllers"})
        sim.write_summary(logs, out / "summary.json")
        _write_json(out / "reproduce.json", rows)
    return rows


def cmd_reproduce(args) -> int:
    config = Path(args.config) if args.config else bundled_config()
    out = Path(args.out) if args.out else None
    rows = reproduce_traffic(config, out, n=args.truncation, steps=args.steps, runs=args.runs, seed=args.seed,
                             samples=args.samples)
    for r in rows:
        print(f"{'PASS' if r['ok'] else 'FAIL'}  {r['check']}: {r['detail']}")
    return EXIT_OK if all(r["ok"] for r in rows) else EXIT_FAIL


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="infsym", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="network config (JSON)")

    def design_flags(p):
        p.add_argument("--varpi", type=_positive(float), default=0.8)
        p.add_argument("--theta", type=_theta, default=0.5)
        p.add_argument("--phi-mode", choices=("share", "slack"), default="share")
        p.add_argument("--eta-x", type=_positive(float), default=None, help="state grid override")
        p.add_argument("--max-size", type=_positive(int), default=abstraction.DEFAULT_MAX_SIZE)

    p = sub.add_parser("validate", help="check a network config")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("design", help="compute quantization parameters")
    common(p)
    design_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("abstract", help="build and dump symbolic models")
    common(p)
    design_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_abstract)

    p = sub.add_parser("synthesize", help="synthesize and dump safety controllers")
    common(p)
    design_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="closed-loop simulation of a truncation")
    common(p)
    design_flags(p)
    p.add_argument("--truncation", type=_positive(int), default=10)
    p.add_argument("--steps", type=_nonneg_int, default=100)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--runs", type=_positive(int), default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="re-check dumped designs, models and controllers")
    common(p)
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--samples", type=_positive(int), default=1000)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("reproduce-traffic", help="run the bundled traffic pipeline and compare")
    common(p, config_required=False)
    p.add_argument("--truncation", type=_positive(int), default=10)
    p.add_argument("--steps", type=_nonneg_int, default=100)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--runs", type=_positive(int), default=20)
    p.add_argument("--samples", type=_positive(int), default=10_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainFailure, KFnError, CertificateViolation) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
