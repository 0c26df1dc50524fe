"""Command-line entry point: validate, certify, simulate, reproduce, list-scenarios.

Exit codes: 0 success (and certified, for ``certify``), 2 ran cleanly but
not certified, 3 a simulation diverged, 1 any error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .certificates import (
    InclusionOnlyFieldError, Verdict, certify_all, check_thm1, overall_verdict,
)
from .flows import check_assumption2
from .multicommodity import mc_certify, mc_simulate
from .network import spectral_radius, validate_network
from .scenario_io import (
    Scenario, ScenarioError, bundled_path, bundled_scenarios, load_bundled, load_scenario,
    render_report, write_mc_trajectory, write_trajectory,
)
from .simulator import IntegrationError, simulate

log = logging.getLogger("flowstab")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CERTIFIED, EXIT_DIVERGING = 0, 1, 2, 3
OUT_ENV = "FLOWSTAB_OUT"
DEFAULT_OUT = "flowstab-out"


# Outcomes each bundled scenario is expected to show. Keys of ``params``
# override the scenario defaults; ``check`` names what is compared.
@dataclass(frozen=True)
class Expectation:
    scenario: str
    params: tuple[tuple[str, float], ...]
    check: str  # "valid", "simulation", "overall", "naive-theorem-1" or a certificate condition
    expected: str
    description: str


def _e(scenario, params, check, expected, description):
    return Expectation(scenario, tuple(params.items()), check, expected, description)


_PI = math.pi
EXPECTATIONS: tuple[Expectation, ...] = (
    _e("example1", {}, "valid", "valid", "routing is outflow connected"),
    _e("example1", {}, "theorem-1", "certified-ISS", "19 lambda1 + 20 lambda2 < 1"),
    _e("example1", {}, "theorem-2", "certified-ISS", "capacity-normalized condition holds"),
    _e("junction", {"lambda1": 1.9}, "naive-theorem-1", "certified-ISS",
       "plain condition reads 1.9 < 2"),
    _e("junction", {"lambda1": 1.9}, "inclusion-theorem", "not-certified",
       "indicator-weighted condition fails (1.9 >= 1)"),
    _e("junction", {"lambda1": 1.9}, "simulation", "diverging", "trajectory diverges"),
    _e("junction", {"lambda1": 0.5}, "inclusion-theorem", "certified-ISS", "light load is certified"),
    _e("junction", {"lambda1": 0.5}, "simulation", "bounded", "trajectory stays bounded"),
    _e("local-node", {"lambda1": 0.5, "lambda2": 0.4, "lambda3": 0.3}, "local-necessity",
       "necessarily-unstable", "sum(lambda/c) = 1.2 exceeds the node capacity"),
    _e("local-node", {"lambda1": 0.5, "lambda2": 0.4, "lambda3": 0.3}, "simulation", "diverging",
       "trajectory diverges"),
    _e("local-node", {"lambda1": 0.3, "lambda2": 0.3, "lambda3": 0.3}, "theorem-2", "certified-ISS",
       "sum(lambda/c) = 0.9 is certified"),
    _e("local-node", {"lambda1": 0.3, "lambda2": 0.3, "lambda3": 0.3}, "simulation", "bounded",
       "trajectory stays bounded"),
    *(
        item
        for phi in (0.0, _PI)
        for A in (0.24, 0.45, 0.51)
        for item in (
            _e("timevarying", {"A": A, "phi": phi}, "simulation",
               "diverging" if A == 0.51 else "bounded",
               "trajectory diverges" if A == 0.51 else "trajectory stays bounded"),
            _e("timevarying", {"A": A, "phi": phi}, "theorem-1",
               "certified-ISS" if A < (0.25 if phi == 0.0 else 0.5) else "not-certified",
               f"sufficient condition is A < {0.25 if phi == 0.0 else 0.5}"),
        )
    ),
    _e("multicommodity", {}, "multicommodity", "certified-ISS", "combined load about 0.99 < 1"),
    _e("multicommodity", {}, "simulation", "bounded", "both commodities stay bounded"),
)


def _parse_value(text: str) -> float:
    t = text.strip().lower()
    if t.endswith("pi"):
        coef = t[:-2].rstrip("*")
        return (float(coef) if coef not in ("", "+", "-") else float(coef + "1")) * math.pi
    return float(t)


def _parse_params(items) -> dict[str, float]:
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ScenarioError(f"--param expects NAME=VALUE, got {item!r}")
        try:
            out[name] = _parse_value(value)
        except ValueError:
            raise ScenarioError(f"--param {name}: {value!r} is not a number") from None
    return out


def _resolve_scenario(ref: str) -> Scenario:
    path = Path(ref)
    if path.exists():
        return load_scenario(path)
    if ref in bundled_scenarios():
        return load_bundled(ref)
    raise ScenarioError(f"no scenario file or bundled scenario named {ref!r}")


def _prepare(args, scenario: Scenario | None = None) -> Scenario:
    s = scenario or _resolve_scenario(args.scenario)
    params = _parse_params(getattr(args, "param", None))
    if params:
        s = s.with_params(params)
    return s.with_config(dt=getattr(args, "dt", None), horizon=getattr(args, "horizon", None),
                         mode=getattr(args, "mode", None), record_every=getattr(args, "record_every", None))


def _timestamp(args) -> str | None:
    if args.no_timestamp:
        return None
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ext(args) -> str:
    return "json" if args.format == "structured" else "txt"


def _certify(s: Scenario):
    if s.is_multicommodity:
        return [mc_certify(s.graph, s.field, s.commodities)]
    return certify_all(s.network, s.field, s.inflow)


def _simulate(s: Scenario):
    if s.is_multicommodity:
        return mc_simulate(s.graph, s.field, s.commodities, s.x0, s.config)
    return simulate(s.network, s.field, s.inflow, s.x0, s.config)


def _sim_summary(s: Scenario, traj) -> dict:
    V = traj.V if s.is_multicommodity else traj.V_uniform
    summary = {
        "dt": s.config.step,
        "horizon": s.config.horizon,
        "mode": s.config.mode,
        "samples": int(len(traj.t)),
        "verdict": traj.verdict,
        "V_initial": float(V[0]),
        "V_final": float(V[-1]),
        "V_max": float(np.max(V)),
        "clamped_mass": float(traj.clamp_mass),
    }
    if not s.is_multicommodity:
        summary["monitors"] = [m.to_dict() for m in traj.monitors.values()]
    return summary


def _emit(text: str, path: Path | None = None) -> None:
    sys.stdout.write(text)
    if path is not None:
        path.write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------- commands


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        s = load_bundled(name)
        params = ", ".join(f"{k}={v:g}" for k, v in s.parameters.items())
        print(f"{name:16s} {s.graph.n_links:3d} links  {params}")
        if args.verbose:
            print(f"{'':16s} {s.document['description']}")
            print(f"{'':16s} {bundled_path(name)}")
    return EXIT_OK


def cmd_validate(args) -> int:
    s = _prepare(args)
    routings = [c.routing for c in s.commodities] if s.is_multicommodity else [s.routing]
    lines = [f"scenario: {s.name}", f"links: {s.graph.n_links}, nodes: {s.graph.n_nodes}"]
    ok = True
    for k, R in enumerate(routings):
        label = s.commodities[k].name if s.is_multicommodity else "routing"
        report = validate_network(s.graph, R)
        rho, converged = spectral_radius(R)
        status = "valid" if report.valid else "INVALID"
        lines.append(f"{label}: {status}, spectral radius {rho:.6g}"
                     + ("" if converged else " (power iteration did not converge)"))
        lines.extend(f"  {check}: {msg}" for check, msg in report.issues)
        ok &= report.valid
    n = s.graph.n_links
    samples = [np.zeros(n), np.ones(n), *np.eye(n)]
    a2 = check_assumption2(s.field, samples)
    if a2.ok:
        lines.append("flow field: mass present iff outflow positive on all samples")
    else:
        lines.append(f"flow field: {len(a2.violations)} sample links serve without mass")
    if s.field.inclusion_only:
        lines.append("flow field: serves empty links, inclusion dynamics required")
        if s.config.mode != "inclusion":
            lines.append("simulation mode: INVALID, use inclusion mode for this field")
            ok = False
    _emit("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_ERROR


def cmd_certify(args) -> int:
    s = _prepare(args)
    reports = _certify(s)
    out = _out_dir(args) / f"{s.name}.certificate.{_ext(args)}"
    _emit(render_report(reports, args.format, scenario=s.name, timestamp=_timestamp(args)), out)
    return EXIT_OK if overall_verdict(reports) is Verdict.CERTIFIED else EXIT_NOT_CERTIFIED


def cmd_simulate(args) -> int:
    s = _prepare(args)
    traj = _simulate(s)
    out = _out_dir(args)
    csv_path = out / f"{s.name}.trajectory.csv"
    (write_mc_trajectory if s.is_multicommodity else write_trajectory)(traj, csv_path)
    summary = _sim_summary(s, traj)
    _emit(render_report([], args.format, scenario=s.name, timestamp=_timestamp(args),
                        extra={"simulation": summary}),
          out / f"{s.name}.monitors.{_ext(args)}")
    failed = [m["name"] for m in summary.get("monitors", []) if not m["ok"]]
    if failed:
        log.error("bound monitors violated: %s", ", ".join(failed))
        return EXIT_ERROR
    return EXIT_DIVERGING if traj.verdict == "diverging" else EXIT_OK


def _variants(name: str, base: Scenario, overrides: dict[str, float]):
    """Parameter sets to run, each with the expectations that apply to it."""
    table = [e for e in EXPECTATIONS if e.scenario == name]
    groups: dict[tuple, list[Expectation]] = {}
    for e in table:
        groups.setdefault(e.params, []).append(e)
    defaults = base.parameters
    if not overrides:
        return [(dict(p), items) for p, items in groups.items()] or [({}, [])]
    wanted = {**defaults, **overrides}
    matching = [
        items for p, items in groups.items()
        if all(math.isclose(wanted[k], v, rel_tol=1e-12, abs_tol=1e-12) for k, v in {**defaults, **dict(p)}.items())
    ]
    return [(overrides, [e for items in matching for e in items])]


def _label(params: dict[str, float]) -> str:
    return ",".join(f"{k}={v:.6g}" for k, v in params.items()) or "defaults"


def _observe(check: str, s: Scenario, reports, traj) -> str:
    if check == "valid":
        nets = [c.network(s.graph) for c in s.commodities] if s.is_multicommodity else [s.network]
        return "valid" if all(validate_network(s.graph, n.routing).valid for n in nets) else "invalid"
    if check == "simulation":
        return traj.verdict
    if check == "overall":
        return overall_verdict(reports).value
    if check == "naive-theorem-1":
        return check_thm1(s.network, s.field, s.inflow, allow_inclusion_only=True).verdict.value
    for r in reports:
        if r.condition == check:
            return r.verdict.value
    return "not-run"


def cmd_reproduce(args) -> int:
    base = load_bundled(args.name)
    overrides = _parse_params(args.param)
    out = _out_dir(args) / args.name
    out.mkdir(parents=True, exist_ok=True)
    rows, codes, lines = [], [], [f"reproduce: {args.name}"]
    for params, expectations in _variants(args.name, base, overrides):
        s = _prepare(args, base.with_params(params) if params else base)
        label = _label(params)
        reports = _certify(s)
        traj = _simulate(s)
        vdir = out / label.replace(",", "_")
        vdir.mkdir(parents=True, exist_ok=True)
        (write_mc_trajectory if s.is_multicommodity else write_trajectory)(traj, vdir / "trajectory.csv")
        (vdir / f"certificate.{_ext(args)}").write_text(
            render_report(reports, args.format, scenario=s.name, timestamp=_timestamp(args),
                          extra={"parameters": s.parameters, "simulation": _sim_summary(s, traj)}),
            encoding="utf-8")
        lines.append(f"[{label}] simulation {traj.verdict}; certificate {overall_verdict(reports).value}")
        if not expectations:
            lines.append("  no recorded expectation for these parameters")
        for e in expectations:
            got = _observe(e.check, s, reports, traj)
            match = got == e.expected
            lines.append(f"  {'matches' if match else 'MISMATCH'}: {e.check}: expected {e.expected}, "
                         f"got {got} ({e.description})")
            rows.append({"parameters": dict(params), "check": e.check, "expected": e.expected,
                         "observed": got, "match": match, "description": e.description})
        certified = overall_verdict(reports) is Verdict.CERTIFIED
        codes.append(EXIT_DIVERGING if traj.verdict == "diverging"
                     else EXIT_OK if certified else EXIT_NOT_CERTIFIED)
    n_match = sum(r["match"] for r in rows)
    lines.append(f"{n_match} of {len(rows)} expectations matched")
    extra = {"reproduce": args.name, "expectations": rows, "matched": n_match, "total": len(rows)}
    if args.format == "structured":
        text = render_report([], "structured", scenario=args.name, timestamp=_timestamp(args), extra=extra)
    else:
        text = "\n".join(lines) + "\n"
    _emit(text, out / f"summary.{_ext(args)}")
    if EXIT_DIVERGING in codes:
        return EXIT_DIVERGING
    return EXIT_NOT_CERTIFIED if EXIT_NOT_CERTIFIED in codes else EXIT_OK


# --------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    # argparse uses 2 for usage errors, which here means "not certified"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    output = _Parser(add_help=False)
    output.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    output.add_argument("--format", choices=("text", "structured"), default="text")
    output.add_argument("--no-timestamp", action="store_true", help="omit the generation time from outputs")

    params = _Parser(add_help=False)
    params.add_argument("--param", action="append", metavar="NAME=VALUE",
                        help="override a declared scenario parameter (A, phi, kappa, lambda*); "
                             "VALUE may be a number or a multiple of pi such as 0.5pi")

    sim = _Parser(add_help=False)
    sim.add_argument("--dt", type=float)
    sim.add_argument("--horizon", type=float)
    sim.add_argument("--mode", choices=("smooth", "inclusion"))
    sim.add_argument("--record-every", type=int, dest="record_every")

    scenario = _Parser(add_help=False)
    scenario.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")

    p = _Parser(prog="flowstab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[scenario, params, sim],
                   help="check routing and flow field").set_defaults(func=cmd_validate)
    sub.add_parser("certify", parents=[scenario, params, output],
                   help="evaluate every applicable stability certificate").set_defaults(func=cmd_certify)
    sub.add_parser("simulate", parents=[scenario, params, sim, output],
                   help="integrate and write trajectory plus monitor ledger").set_defaults(func=cmd_simulate)
    rep = sub.add_parser("reproduce", parents=[params, sim, output],
                         help="run a bundled scenario and compare with its recorded outcomes")
    rep.add_argument("name", help="bundled scenario name")
    rep.set_defaults(func=cmd_reproduce)
    sub.add_parser("list-scenarios", help="list bundled scenarios").set_defaults(func=cmd_list)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ValueError, IntegrationError, InclusionOnlyFieldError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
