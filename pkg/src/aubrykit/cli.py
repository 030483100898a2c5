"""aubrykit command-line interface.

Exit codes: 0 success, 2 scenario error (nothing written), 3 numerical failure
(diagnostic.json written to the output directory).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .lattice import PeriodLattice, convergent_lattices, linear_configuration

EXIT_OK, EXIT_SCENARIO, EXIT_NUMERIC = 0, 2, 3

COMMANDS = ("minimize", "critical-points", "flow", "ghost-circle", "aubry-mather", "gap-solution",
            "standard-map", "verify", "ghost-limit")

SCENARIO_KEYS = {"command", "potential", "lattice", "omega", "convergents", "seed", "out", "tol", "quick",
                 "options"}
LATTICE_KEYS = {"p", "q"}
OPTION_KEYS = {"t", "xi", "steps", "grid", "multistart", "method", "component"}


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------- output

def _fmt(obj):
    """JSON text with floats fixed at 17 significant digits and sorted keys."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in sorted(obj.items())) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _fmt(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return "null"
        return format(x, ".17g")
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def scenario_hash(scenario: dict) -> str:
    """sha256 of the canonical 17-digit rendering, recomputable from any artifact."""
    return hashlib.sha256(_fmt(scenario).encode()).hexdigest()


class Writer:
    def __init__(self, out: Path, scenario: dict):
        self.out = out
        self.scenario = scenario
        self.hash = scenario_hash(scenario)
        self.files = []

    def json(self, name, payload):
        self.out.mkdir(parents=True, exist_ok=True)
        body = {"version": __version__, "scenario_hash": self.hash, "scenario": self.scenario, "result": payload}
        path = self.out / name
        path.write_text(_fmt(body) + "\n")
        self.files.append(str(path))
        return path

    def csv_path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        self.files.append(str(path))
        return path


# ---------------------------------------------------------------- scenario

def _parse_matrix(text):
    rows = [r for r in str(text).replace(" ", "").split(";") if r]
    try:
        return [[int(v) for v in r.split(",")] for r in rows]
    except ValueError as exc:
        raise ScenarioError(f"bad integer matrix {text!r}") from exc


def _parse_vector(text, conv=int):
    try:
        return [conv(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise ScenarioError(f"bad vector {text!r}") from exc


def load_scenario(path) -> dict:
    from .potentials import _load_toml

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from exc
    try:
        data = _load_toml(text)
    except Exception as exc:
        raise ScenarioError(f"malformed scenario file: {exc}") from exc
    unknown = set(data) - SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    if "lattice" in data and set(data["lattice"]) - LATTICE_KEYS:
        raise ScenarioError(f"unknown lattice keys: {sorted(set(data['lattice']) - LATTICE_KEYS)}")
    if "options" in data and set(data["options"]) - OPTION_KEYS:
        raise ScenarioError(f"unknown option keys: {sorted(set(data['options']) - OPTION_KEYS)}")
    return data


def resolve(args) -> dict:
    """Merge scenario file and flags (flags win) into one plain dict, fully validated."""
    sc = load_scenario(args.scenario) if args.scenario else {}
    if sc.get("command") not in (None, args.command):
        raise ScenarioError(f"scenario is for command {sc['command']!r}, not {args.command!r}")
    pot = sc.get("potential", {})
    if args.potential is not None:
        if args.potential in ("fk", "zero"):
            pot = {"kind": "frenkel_kontorova", "d": 1, "V": []}
            if args.potential == "fk":
                k = 1.0 if args.k is None else args.k
                pot["V"] = [[1, k / (8 * math.pi**2), 0.0]]
        else:
            from .potentials import _load_toml

            try:
                pot = _load_toml(Path(args.potential).read_text())
            except Exception as exc:
                raise ScenarioError(f"cannot read potential file: {exc}") from exc
    elif args.k is not None:
        pot = {"kind": "frenkel_kontorova", "d": 1, "V": [[1, args.k / (8 * math.pi**2), 0.0]]}
    if not pot:
        pot = {"kind": "frenkel_kontorova", "d": 1, "V": [[1, 1.0 / (8 * math.pi**2), 0.0]]}
    lat = dict(sc.get("lattice", {}))
    if args.p is not None:
        lat["p"] = _parse_matrix(args.p)
    if args.q is not None:
        lat["q"] = _parse_vector(args.q)
    if "p" in lat and not isinstance(lat["p"], list):
        lat["p"] = [[int(lat["p"])]]
    elif "p" in lat and lat["p"] and not isinstance(lat["p"][0], list):
        lat["p"] = [lat["p"]]
    if "q" in lat and not isinstance(lat["q"], list):
        lat["q"] = [int(lat["q"])]
    omega = args.omega if args.omega is not None else sc.get("omega")
    conv = args.convergents if args.convergents is not None else sc.get("convergents")
    options = dict(sc.get("options", {}))
    for key in ("t", "xi", "steps"):
        val = getattr(args, key, None)
        if val is not None:
            options[key] = val
    scenario = {
        "command": args.command,
        "potential": pot,
        "lattice": lat,
        "omega": None if omega is None else _parse_vector(omega, float) if isinstance(omega, str) else omega,
        "convergents": conv,
        "seed": args.seed if args.seed is not None else int(sc.get("seed", 0)),
        "tol": args.tol if args.tol is not None else sc.get("tol"),
        "quick": bool(args.quick or sc.get("quick", False)),
        "options": options,
    }
    # parse everything now so that no computation starts on a bad scenario
    from .potentials import parse_potential_spec

    try:
        spec = parse_potential_spec(pot)
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(str(exc)) from exc
    scenario["_spec"] = spec
    if lat:
        try:
            scenario["_lattice"] = PeriodLattice(lat["p"], lat.get("q", [0] * len(lat["p"])))
        except Exception as exc:
            raise ScenarioError(f"bad lattice: {exc}") from exc
        if scenario["_lattice"].d != spec.d:
            raise ScenarioError("lattice dimension does not match potential dimension")
    elif scenario["omega"] is not None and args.command != "ghost-limit":
        om = scenario["omega"]
        om = om[0] if isinstance(om, list) else om
        scenario["_lattice"] = PeriodLattice.from_rotation(om)
    if args.command == "ghost-limit" and (scenario["omega"] is None or not conv):
        raise ScenarioError("ghost-limit needs --omega and --convergents")
    if args.command not in ("verify", "ghost-limit") and "_lattice" not in scenario:
        raise ScenarioError("a lattice (--p/--q) or --omega is required")
    return scenario


def _public(scenario):
    out = {k: v for k, v in scenario.items() if not k.startswith("_")}
    out["out"] = None
    return out


# ---------------------------------------------------------------- commands

def _potential(sc):
    from .potentials import build_potential

    return build_potential(sc["_spec"], sc.get("_lattice"))


def cmd_minimize(sc, w):
    from .minimizers import minimize_action, verify_global_minimizer

    pot, lat = _potential(sc), sc["_lattice"]
    gm = minimize_action(pot, lat, seed=sc["seed"])
    chk = verify_global_minimizer(pot, gm, seed=sc["seed"], trials=8 if sc["quick"] else 20)
    w.json("minimizer.json", {"critical_point": gm.to_dict(), "global_check": {
        "verdict": chk.verdict, "worst_margin": chk.worst_margin}})


def cmd_critical_points(sc, w):
    from .minimizers import find_critical_points
    from .potentials import is_morse

    pot, lat = _potential(sc), sc["_lattice"]
    crit = find_critical_points(pot, lat, seed=sc["seed"])
    w.json("critical_points.json", {"points": [c.to_dict() for c in crit],
                                    "is_morse": bool(crit) and is_morse(pot, lat, crit)})


def cmd_flow(sc, w):
    from .flow import flow, write_trace_csv

    pot, lat = _potential(sc), sc["_lattice"]
    opt = sc["options"]
    x = linear_configuration(lat, float(opt.get("xi", 0.25)))
    res = flow(pot, x, float(opt.get("t", 10.0)))
    write_trace_csv(res, w.csv_path("flow_trace.csv"))
    w.json("flow.json", {"start": x.to_dict(), "endpoint": res.endpoint.to_dict(), "t": res.t,
                         "W_start": res.trace[0, 1], "W_end": res.trace[-1, 1]})


def _morse_ready(pot, lat, seed):
    from .minimizers import find_critical_points
    from .potentials import is_morse, morse_approximation

    crit = find_critical_points(pot, lat, seed=seed, max_seeds=1024)
    if crit and is_morse(pot, lat, crit):
        return pot, crit, None
    pert = morse_approximation(pot, lat, 1e3, seed=seed, eps=1e-6)
    return pert, None, pert.params.get("morse")


def cmd_ghost_circle(sc, w):
    from .ghost import GhostParams, assemble_ghost_circle, export_t_map_csv

    pot, lat = _potential(sc), sc["_lattice"]
    use, crit, morse = _morse_ready(pot, lat, sc["seed"])
    circle = assemble_ghost_circle(use, lat, GhostParams(seed=sc["seed"]), criticals=crit)
    n = int(sc["options"].get("grid", 64))
    grid = circle.base + np.arange(n) / n
    export_t_map_csv(circle, grid, w.csv_path("t_map.csv"), k=int(sc["options"].get("component", 0)))
    payload = circle.to_dict(grid)
    payload["morse_perturbation"] = morse
    w.json("ghost_circle.json", payload)


def _am(sc):
    from .aubry_mather import detect_gaps, orbit_closure
    from .minimizers import minimize_action

    pot, lat = _potential(sc), sc["_lattice"]
    gm = minimize_action(pot, lat, seed=sc["seed"])
    M = orbit_closure(gm, lat, pot)
    gaps = detect_gaps(M, sc["tol"] or 1e-6)
    return pot, lat, M, gaps


def cmd_aubry_mather(sc, w):
    from .aubry_mather import gap_report

    pot, lat, M, gaps = _am(sc)
    w.json("aubry_mather.json", {"generator": M.generator.to_dict(),
                                 "elements": [e.to_dict() for e in M.elements],
                                 "levels": [str(v) for v in M.levels],
                                 "gaps": [gap_report(g) for g in gaps]})


def cmd_gap_solution(sc, w):
    from .aubry_mather import consecutive_pairs, gap_report, gap_solution
    from .ghost import FamilyCircle, GhostParams, assemble_ghost_circle

    pot, lat, M, gaps = _am(sc)
    reports = []
    if gaps:
        use, crit, morse = _morse_ready(pot, lat, sc["seed"])
        if morse is not None:
            raise ArithmeticError("gap solutions need a Morse action; this one is degenerate with gaps")
        circle = assemble_ghost_circle(pot, lat, GhostParams(seed=sc["seed"]), criticals=crit)
        for g in gaps:
            reports.append(gap_report(g, pot, gap_solution(pot, circle, g)))
    else:
        g = consecutive_pairs(M)[0]
        reports.append(gap_report(g, pot, gap_solution(pot, FamilyCircle(pot, lat), g)))
    w.json("gap_solutions.json", {"gaps": reports})


def cmd_standard_map(sc, w):
    from .minimizers import find_critical_points
    from .potentials import TrigSeries
    from .twist import invariant_curve_verdict, iterate, orbit_from_configuration, write_orbit_csv

    spec, lat = sc["_spec"], sc["_lattice"]
    if spec.kind != "frenkel_kontorova" or spec.d != 1:
        raise ScenarioError("standard-map needs a one-dimensional FK potential")
    V = TrigSeries(spec.V)
    pot = _potential(sc)
    crit = find_critical_points(pot, lat, seed=sc["seed"])
    steps = int(sc["options"].get("steps", 300))
    orbits = []
    for c in crit:
        orb = orbit_from_configuration(c.config, V)
        xs, ys = iterate(V, orb.points[0, 0], orb.points[0, 1], steps)
        per = np.array([c.config.value_at(i) for i in range(steps + 1)])
        drift = np.abs(((xs - per + 0.5) % 1.0) - 0.5)
        bad = np.flatnonzero(drift > 1e-7)
        name = f"orbit_{len(orbits)}.csv"
        write_orbit_csv(xs, ys, w.csv_path(name))
        orbits.append({"config": c.config.to_dict(), "index": c.index, "step_residual": orb.max_residual,
                       "max_drift_mod1": float(drift.max()),
                       "first_step_above_1e-7": int(bad[0]) if bad.size else None, "csv": name})
    w.json("standard_map.json", {"orbits": orbits, "invariant_curves": invariant_curve_verdict(V)})


def cmd_verify(sc, w):
    from .suites import run_all

    results = run_all(quick=sc["quick"])
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.name}: {r.passed}/{r.total} ({r.seconds:.1f} s)")
        for note in r.notes[:3]:
            print(f"    {note}")
    w.json("verify.json", {"suites": [r.to_dict() for r in results]})
    if not all(r.ok for r in results):
        raise ArithmeticError("verification suites failed")


def cmd_ghost_limit(sc, w):
    from .ghost import GhostParams, ghost_circle_limit

    pot = _potential(sc)
    om = sc["omega"]
    om = om[0] if isinstance(om, list) else om
    lats = convergent_lattices(om, int(sc["convergents"]))
    n = int(sc["options"].get("grid", 32))
    grid = np.arange(n) / n
    rep, samples = ghost_circle_limit(pot, om, lats, grid, tol=sc["tol"] or 1e-2,
                                      k=int(sc["options"].get("component", 0)),
                                      params=GhostParams(seed=sc["seed"]))
    if samples is not None and samples["T"] is not None:
        with open(w.csv_path("limit_t_map.csv"), "w") as fh:
            fh.write("xi,T\n")
            for x, t in zip(samples["xi"], samples["T"]):
                fh.write(f"{x:.17g},{t:.17g}\n")
    w.json("ghost_limit.json", {"report": rep, "samples": samples})


HANDLERS = {
    "minimize": cmd_minimize, "critical-points": cmd_critical_points, "flow": cmd_flow,
    "ghost-circle": cmd_ghost_circle, "aubry-mather": cmd_aubry_mather, "gap-solution": cmd_gap_solution,
    "standard-map": cmd_standard_map, "verify": cmd_verify, "ghost-limit": cmd_ghost_limit,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="aubrykit", description="Periodic ghost circles and Aubry-Mather sets.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--scenario", help="TOML scenario file")
        sp.add_argument("--potential", help="fk | zero | path to a TOML potential spec")
        sp.add_argument("--k", type=float, help="FK coupling in V = k/(8 pi^2) cos 2 pi x")
        sp.add_argument("--p", help="period matrix, rows separated by ';' (e.g. '2' or '1,0;0,1')")
        sp.add_argument("--q", help="vertical shifts, comma separated")
        sp.add_argument("--omega", help="rotation number (lattice for most commands, target for ghost-limit)")
        sp.add_argument("--convergents", type=int, help="number of continued-fraction convergents")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--tol", type=float)
        sp.add_argument("--quick", action="store_true")
        if name == "flow":
            sp.add_argument("--t", type=float, help="flow time")
            sp.add_argument("--xi", type=float, help="start on the linear configuration with x_0 = xi")
        if name == "standard-map":
            sp.add_argument("--steps", type=int)
    return ap


def run_command(argv) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_SCENARIO
    out = Path(args.out)
    try:
        sc = resolve(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    w = Writer(out, _public(sc))
    try:
        HANDLERS[args.command](sc, w)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        out.mkdir(parents=True, exist_ok=True)
        diag = {"version": __version__, "scenario_hash": w.hash, "error": type(exc).__name__,
                "message": str(exc), "command": args.command}
        (out / "diagnostic.json").write_text(_fmt(diag) + "\n")
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for f in w.files:
        print(f)
    return EXIT_OK


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
