"""Batch front-end: layout plus scenario in, JSON reports and CSV plot data out.

Exit status: 0 success, 2 parse, schema or precondition errors, 3 physics errors
(infeasible voltages, ion loss, search failure, integration failure).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .cascade import characterize_merge, characterize_swap, characterize_transport, characterize_wait
from .compiler import (PRESETS, CompileError, CostPolicy, IonConfiguration, PrimitiveLibrary, all_to_all,
                       compare_policies, config_goal, edge_order, initial_node, pair_goal, path_report, search)
from .merge_split import MergeSpec, min_adiabatic_time, simulate_idealized
from .noise_model import NoiseSpectrum
from .oscillator_core import IntegrationError, OscillatorSpec, excite
from .profiles import TanhProfile, profile_from_dict
from .trap_model import TWO_PI, DomainError, LayoutError, TrapLayout, default_layout, layout_diagnostics
from .swap import InstabilityError
from .voltage_solver import InfeasibleError, IonLossError, merge_waveform

log = logging.getLogger("qccdsim")

EXIT_OK, EXIT_PARSE, EXIT_PHYSICS = 0, 2, 3
PHYSICS_ERRORS = (InfeasibleError, IonLossError, InstabilityError, IntegrationError, CompileError, DomainError,
                  ArithmeticError)


class ScenarioError(ValueError):
    pass


_POLICY = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "objective": {"enum": ["moves", "time", "max_n_targets", "max_n_all"]},
        "beam": {"type": "integer", "minimum": 1},
        "threshold": {"type": "number", "exclusiveMinimum": 0},
        "hard_bound": {"type": "number", "exclusiveMinimum": 0},
        "soft_bound": {"type": "number", "exclusiveMinimum": 0},
        "waits_us": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "patience": {"type": "integer", "minimum": 0},
        "phonon_weight": {"type": "number", "minimum": 0},
        "blocker_weight": {"type": "number", "minimum": 0},
    },
}
_SLOTMAP = {"type": "object", "patternProperties": {"^([0-9]|1[0-9])$": {"type": "integer", "minimum": 1}},
            "additionalProperties": False}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["command"],
    "additionalProperties": False,
    "properties": {
        "command": {"enum": ["characterize", "voltages", "compile", "all2all", "sweep"]},
        "layout": {"type": "string"},
        "preset": {"enum": list(PRESETS)},
        "seed": {"type": "integer"},
        "start": {"oneOf": [{"const": "reference"}, _SLOTMAP]},
        "start_crystal": {"type": "boolean"},
        "goal": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"pair": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                           "config": _SLOTMAP, "crystal": {"type": "boolean"}},
        },
        "policy": _POLICY,
        "compare": {"type": "boolean"},
        "approach": {"enum": ["A", "B"]},
        "primitive": {"enum": ["transport", "merge", "split", "swap", "wait"]},
        "operation": {"enum": ["merge", "split", "swap"]},
        "kind": {"enum": ["single_ion", "merge", "min_time"]},
        "T_us": {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                           {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}}]},
        "n_points": {"type": "integer", "minimum": 10},
        "profile": {"type": "object", "required": ["type", "L_um", "T_us"],
                    "properties": {"type": {"const": "tanh"}, "L_um": {"type": "number"},
                                   "T_us": {"type": "number", "exclusiveMinimum": 0},
                                   "n_val": {"type": "number", "exclusiveMinimum": 0},
                                   "x_start_um": {"type": "number"}}},
        "n_val": {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                            {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}}]},
        "distances_um": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "distance_um": {"type": "number", "exclusiveMinimum": 0},
        "nu_MHz": {"type": "number", "exclusiveMinimum": 0},
        "nu_crit_kHz": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "threshold": {"type": "number", "exclusiveMinimum": 0},
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"amplitude": {"type": "number", "minimum": 0}, "exponent": {"type": "number", "minimum": 0},
                           "omega_ref": {"type": "number", "exclusiveMinimum": 0},
                           "table": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                                "minItems": 2, "maxItems": 2}},
                           "csv": {"type": "string"}},
        },
    },
}


def scenario_diagnostics(doc) -> list[str]:
    v = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    out = [f"/{'/'.join(str(p) for p in e.absolute_path)}: {e.message}"
           for e in sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))]
    if out or not isinstance(doc, dict):
        return out
    for name in ("start", "goal"):
        block = doc.get(name)
        m = block.get("config") if name == "goal" and isinstance(block, dict) else block
        if isinstance(m, dict):
            where = {}
            for slot, lab in m.items():
                if lab in where:
                    ptr = f"/{name}" + ("/config" if name == "goal" else "")
                    out.append(f"{ptr}: ion {lab} duplicated in slots {where[lab]} and {slot}")
                where.setdefault(lab, slot)
    if "goal" in doc and "pair" in doc["goal"]:
        a, b = doc["goal"]["pair"]
        if a == b:
            out.append("/goal/pair: the two ions must differ")
    return out


# --- helpers -----------------------------------------------------------------

def _load_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ScenarioError(f"{path}: file not found")
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}")


def _load_layout(path) -> TrapLayout:
    if path is None:
        return default_layout()
    doc = _load_json(Path(path))
    diags = layout_diagnostics(doc)
    if diags:
        raise ScenarioError("; ".join(f"{path}#{d}" for d in diags))
    return TrapLayout.from_dict(doc)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o).__name__)


def _as_list(v):
    return v if isinstance(v, list) else [v]


def _threads(flag: int | None) -> int:
    env = os.environ.get("QCCDSIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ScenarioError(f"QCCDSIM_THREADS={env!r} is not an integer")
    return max(1, flag or 1)


def _noise(sc) -> NoiseSpectrum | None:
    if "noise" not in sc:
        return None
    spec = NoiseSpectrum.from_dict(sc["noise"])
    return None if spec.is_zero else spec


def _start_config(sc) -> IonConfiguration:
    s = sc.get("start", "reference")
    if s == "reference":
        return IonConfiguration.reference()
    return IonConfiguration.from_map(s, sc.get("start_crystal", False))


def _policy(sc, targets) -> CostPolicy:
    p = dict(sc.get("policy", {}))
    waits = tuple(w * 1e-6 for w in p.pop("waits_us", []))
    return CostPolicy(targets=tuple(targets), waits=waits, noise=_noise(sc), **p)


# --- commands ----------------------------------------------------------------

def cmd_characterize(sc, layout, preset, out: Path, threads):
    prim = sc.get("primitive", "transport")
    Ts = [t * 1e-6 for t in _as_list(sc.get("T_us", PRESETS[preset]["transport"] * 1e6))]
    n_val = float(_as_list(sc.get("n_val", 5.0 if prim == "transport" else 3.0))[0])
    nu = sc.get("nu_MHz", 1.0) * 1e6
    L = sc.get("distance_um", 200.0) * 1e-6
    if "profile" in sc:
        prof = profile_from_dict(sc["profile"])
        if not isinstance(prof, TanhProfile) or prim != "transport":
            raise ScenarioError("/profile: only tanh profiles drive the transport primitive")
        L, Ts, n_val = prof.L, [prof.T], prof.n_val
    rows, records = [], []
    for T in Ts:
        if prim == "transport":
            pc = characterize_transport(L, T, n_val, TWO_PI * nu, layout.constants)
        elif prim == "wait":
            pc = characterize_wait(T, {"x": TWO_PI * nu})
        elif prim in ("merge", "split"):
            pc = characterize_merge(MergeSpec(T=T, n_val=n_val, direction=prim))
        else:
            from .swap import SwapSpec
            pc = characterize_swap(SwapSpec(T=T), layout, sc.get("n_points"))
        records.append(pc.to_dict())
        for name, m in pc.modes.items():
            rows.append([T * 1e6, name, abs(m.inhom) ** 2, float(np.angle(m.inhom)), m.det,
                         m.omega_in / TWO_PI, m.omega_out / TWO_PI])
    _write_csv(out / "characterization.csv",
               ["T_us", "mode", "n_inhom", "phase_rad", "det_theta", "f_in_Hz", "f_out_Hz"], rows)
    _write_json(out / "characterization.json", {"primitive": prim, "records": records})
    return {"records": len(records)}


def cmd_voltages(sc, layout, preset, out: Path, threads):
    op = sc.get("operation", "merge")
    p = PRESETS[preset]
    if op == "swap":
        from .swap import SwapSpec, calculation_points, swap_waveform
        T = sc.get("T_us", p["swap"] * 1e6) * 1e-6
        n = sc.get("n_points", calculation_points(T))
        w = swap_waveform(SwapSpec(T=T), n, layout)
    else:
        T = sc.get("T_us", p["merge"] * 1e6) * 1e-6
        n = sc.get("n_points", p["merge_points"])
        w = merge_waveform(MergeSpec(T=T, direction=op), n, layout)
    if w.max_abs > layout.voltage_limit:
        raise InfeasibleError(f"max |V| = {w.max_abs:.2f} V exceeds {layout.voltage_limit:g} V")
    csv_path, side = w.save(out / f"{op}_waveform.csv")
    summary = {"operation": op, "T_us": T * 1e6, "n_points": w.n_points, "max_abs_V": w.max_abs,
               "budget": int(np.floor(T * layout.sample_rate + 1e-9)), "waveform": csv_path.name}
    _write_json(out / "voltages.json", summary)
    return summary


def cmd_compile(sc, layout, preset, out: Path, threads):
    lib = PrimitiveLibrary(preset, layout)
    start_cfg = _start_config(sc)
    goal_doc = sc.get("goal", {})
    if "pair" in goal_doc:
        a, b = goal_doc["pair"]
        goal, targets = pair_goal(a, b), (a, b)
    elif "config" in goal_doc:
        goal, targets = config_goal(IonConfiguration.from_map(goal_doc["config"], goal_doc.get("crystal", False))), ()
    else:
        goal, targets = (lambda cfg: cfg == start_cfg), ()
    if sc.get("compare") and len(targets) == 2:
        pol = sc.get("policy", {})
        res = compare_policies(start_cfg, targets[0], targets[1], lib, beam=pol.get("beam", 1000))
        _write_json(out / "compare.json", res)
        _write_csv(out / "compare.csv", ["policy", "moves", "duration_us", "max_target_n"],
                   [[k, res[k]["moves"], res[k]["duration_us"], res[k]["max_target_n"]] for k in ("time", "phonon")])
        return {"reduction": res["reduction"]}
    policy = _policy(sc, targets)
    start = initial_node(start_cfg, omega_ion=lib.omega_ion)
    node = search(start, goal, policy, lib)
    rep = path_report(start, node, lib, policy)
    rep.update({"preset": preset, "objective": policy.objective, "seed": sc.get("seed", 0),
                "start": start_cfg.to_map(), "targets": list(targets)})
    _write_json(out / "compile.json", rep)
    labels = start_cfg.labels
    rows = [[i + 1, s["instruction"], s["t_us"]] + [s["ions"][str(k)]["n_bar"] for k in labels]
            + [s["ions"][str(k)]["n_anomalous"] for k in labels] for i, s in enumerate(rep["steps"])]
    _write_csv(out / "compile_steps.csv", ["step", "instruction", "t_us"] + [f"n_ion{k}" for k in labels]
               + [f"n_anom_ion{k}" for k in labels], rows)
    return {"moves": rep["moves"], "duration_us": rep["duration_us"], "max_n": rep["max_n"]}


def cmd_all2all(sc, layout, preset, out: Path, threads):
    lib = PrimitiveLibrary(preset, layout)
    start_cfg = _start_config(sc)
    pol = sc.get("policy", {})
    beam = pol.get("beam", 100)
    waits = tuple(w * 1e-6 for w in pol.get("waits_us", [0.25, 0.5, 0.75]))
    order = edge_order(start_cfg, lib, beam=max(beam, 200))
    extra = {k: pol[k] for k in ("phonon_weight", "blocker_weight", "threshold", "hard_bound", "soft_bound")
             if k in pol}
    rows = all_to_all(start_cfg, lib, sc.get("approach", "B"), beam=beam, order=order, waits=waits,
                      noise=_noise(sc), **extra)
    _write_json(out / "all2all.json", {"preset": preset, "approach": sc.get("approach", "B"), "edges": rows})
    csv_rows = []
    moves = 0
    for r in rows:
        if r.get("failed"):
            break
        moves += r["moves"]
        csv_rows.append([r["edge"], f"{r['pair'][0]}-{r['pair'][1]}", r["moves"], moves, r["leg_time_us"],
                         r["time_us"], r["max_n"]])
    _write_csv(out / "all2all.csv", ["edge", "pair", "moves", "cumulative_moves", "leg_time_us",
                                     "cumulative_time_us", "max_n_bar"], csv_rows)
    if any(r.get("failed") for r in rows):
        raise CompileError(f"all-to-all truncated after {len(csv_rows)} edges")
    return {"edges": len(rows), "max_n": max(r["max_n"] for r in rows)}


def _single_ion_point(args):
    T, nv, L, nu, m = args
    ex = excite(OscillatorSpec(m, TWO_PI * nu, TanhProfile(L, T, nv)))
    return [round(T * 1e6, 9), nv, round(L * 1e6, 9), ex.n_bar]


def cmd_sweep(sc, layout, preset, out: Path, threads):
    kind = sc.get("kind", "single_ion")
    Ts = [t * 1e-6 for t in _as_list(sc.get("T_us", list(np.arange(2.0, 20.5, 0.5))))]
    nvs = [float(v) for v in _as_list(sc.get("n_val", [5.0] if kind == "single_ion" else [2.7, 3.0, 3.3]))]
    if kind == "single_ion":
        pos = np.asarray(layout.resting_positions)
        dists = sorted({round(float(d), 12) for d in np.diff(pos)})
        dists = [d * 1e-6 for d in sc.get("distances_um", [d * 1e6 for d in dists])]
        nu = sc.get("nu_MHz", 1.0) * 1e6
        jobs = [(T, nv, L, nu, layout.constants.m) for L in dists for nv in nvs for T in Ts]
        if threads > 1:
            with ProcessPoolExecutor(threads) as ex:
                rows = list(ex.map(_single_ion_point, jobs))
        else:
            rows = [_single_ion_point(j) for j in jobs]
        _write_csv(out / "sweep_single_ion.csv", ["T_us", "n_val", "distance_um", "n_bar"], rows)
        return {"points": len(rows)}
    if kind == "merge":
        rows = []
        for nv in nvs:
            for T in Ts:
                r = simulate_idealized(MergeSpec(T=T, n_val=nv))
                rows.append([T * 1e6, nv, r.com.n_bar, r.str.n_bar])
        _write_csv(out / "sweep_merge.csv", ["T_us", "n_val", "n_com", "n_str"], rows)
        return {"points": len(rows)}
    nus = [v * 1e3 for v in sc.get("nu_crit_kHz", [190, 230, 270, 310, 345])]
    thr = sc.get("threshold", 1.0)
    rows = []
    for nv in nvs:
        for nc in nus:
            T = min_adiabatic_time(nc, nv, thr)
            rows.append([nc / 1e3, nv, thr, "" if T is None else T * 1e6])
    _write_csv(out / "sweep_min_time.csv", ["nu_crit_kHz", "n_val", "threshold", "T_us"], rows)
    return {"points": len(rows)}


COMMANDS = {"characterize": cmd_characterize, "voltages": cmd_voltages, "compile": cmd_compile,
            "all2all": cmd_all2all, "sweep": cmd_sweep}


def _plots(out: Path):
    """Render figures for the CSV files in out (needs matplotlib)."""
    from .plots import render_directory
    return render_directory(out)


def run(scenario: dict, layout: TrapLayout, preset: str, out: Path, threads: int = 1, plots: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    res = COMMANDS[scenario["command"]](scenario, layout, preset, out, threads)
    if plots:
        res["figures"] = [p.name for p in _plots(out)]
    return res


def _validate(path: Path) -> list[str]:
    doc = _load_json(path)
    if isinstance(doc, dict) and "electrodes" in doc:
        return layout_diagnostics(doc)
    return scenario_diagnostics(doc)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qccdsim", description="Shuttling heating characterization and compilation.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["validate"]:
        p = sub.add_parser(name)
        p.add_argument("--layout", type=Path)
        p.add_argument("--scenario", type=Path)
        if name == "validate":
            p.add_argument("file", type=Path, nargs="?")
            continue
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--preset", choices=list(PRESETS))
        p.add_argument("--threads", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--plots", action="store_true", help="also render PNG figures (matplotlib)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_PARSE if e.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            targets = [p for p in (args.file, args.layout, args.scenario) if p is not None]
            if not targets:
                targets = []
                diags = layout_diagnostics(default_layout().to_dict())
            else:
                diags = []
            for t in targets:
                diags += [f"{t}#{d}" for d in _validate(t)]
            for d in diags:
                print(d)
            return EXIT_PARSE if diags else EXIT_OK
        sc = {"command": args.command}
        if args.scenario:
            sc = _load_json(args.scenario)
            diags = scenario_diagnostics(sc)
            if diags:
                raise ScenarioError("; ".join(f"{args.scenario}#{d}" for d in diags))
            if sc["command"] != args.command:
                raise ScenarioError(f"{args.scenario}#/command: {sc['command']!r} does not match {args.command!r}")
        layout_path = args.layout or (Path(sc["layout"]) if "layout" in sc else None)
        if layout_path is not None and not layout_path.is_absolute() and args.scenario and "layout" in sc:
            layout_path = args.scenario.parent / layout_path
        layout = _load_layout(layout_path)
        preset = args.preset or sc.get("preset", "near-adiabatic")
        if args.seed is not None:
            sc["seed"] = args.seed
        res = run(sc, layout, preset, args.out, _threads(args.threads), args.plots)
        print(json.dumps(res, sort_keys=True, default=_json_default))
        return EXIT_OK
    except (ScenarioError, LayoutError, jsonschema.ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except PHYSICS_ERRORS as e:
        print(f"physics error ({type(e).__module__.split('.')[-1]}): {e}", file=sys.stderr)
        return EXIT_PHYSICS
    except ValueError as e:  # input that passes the schema but violates a precondition
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
