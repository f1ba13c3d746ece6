"""Command-line front end.

Subcommands: stability | ae | mesh | flow | continue | compare.  Each
reads an optional JSON config plus flag overrides, writes CSV/JSON
outputs into --out, and echoes the effective config next to them so a
run can be reproduced from its own output directory.  All numerics are
deterministic: identical config gives byte-identical files.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import amplitude as am
from . import linstab as ls
from .continuation import (BranchState, constrained_stability,
                           continue_branch, detect_bifurcations,
                           solve_trivial_state, switch_branch,
                           write_bifurcations_json, write_branch_csv)
from .linstab import Mode
from .solver import FlowState, perturb_bump, perturb_eigen, run_flow
from .surface import Geometry, build_cylinder_mesh
from .surface.geometry import geometry_report, project_amplitude

log = logging.getLogger(__name__)


class CLIError(Exception):
    """Invalid configuration or unusable input."""


DEFAULTS = {
    "stability": {
        "c0_grid": [0.0],
        "L": 10.0,
        "k_max": 2.0,
        "k_num": 200,
    },
    "ae": {
        "c0": 0.0,
        "L": 10.0,
    },
    "mesh": {
        "L": 10.0,
        "r": 1.0,
        "nodes": 1000,
    },
    "flow": {
        "c0": 0.0,
        "L": 10.0,
        "nodes": 600,
        "state": {"kind": "trivial", "lambda2": -0.5},
        "perturb": "bump",
        "delta": 0.0,
        "xi": 1.0,
        "h0": 0.005,
        "h_max": 0.05,
        "tol": 1e-7,
        "stop": 1e-3,
        "t_max": 40.0,
        "max_steps": 2000,
        "track_mode": [1, 0],
    },
    "continue": {
        "c0": 0.0,
        "L": 10.0,
        "nodes": 1000,
        "lambda2_start": -0.9,
        "direction": -1,
        "steps": 4,
        "ds": 0.04,
        "ds_max": 0.1,
        "tol": 1e-8,
        "detect": True,
        "switch": None,
        "tracked_modes": [],
    },
    "compare": {
        "instability": "pearling",
        "c0": 0.0,
        "L": 10.0,
        "nodes": 1000,
        "epsilon": 0.04,
        "steps": 5,
        "ds": 0.03,
        "amplitude_max": 0.1,
    },
}


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return "%d" % x
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_set(pair):
    if "=" not in pair:
        raise CLIError("--set expects KEY=VALUE, got %r" % pair)
    key, raw = pair.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip(), val


def _apply_set(config, key, val):
    node = config
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = val


def load_config(command, args):
    """Defaults, then the JSON file, then --set overrides, in order."""
    config = json.loads(json.dumps(DEFAULTS[command]))
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CLIError("config file not found: %s" % path)
        loaded = json.loads(path.read_text())
        file_cmd = loaded.pop("command", command)
        if file_cmd != command:
            raise CLIError("config is for %r, invoked as %r"
                           % (file_cmd, command))
        config.update(loaded)
    for pair in args.set or []:
        _apply_set(config, *_parse_set(pair))
    config["command"] = command
    if args.seed is not None:
        config["seed"] = args.seed
    return config


def emit_config(config, out):
    text = json.dumps(config, indent=2, sort_keys=True) + "\n"
    (out / "config.json").write_text(text)


def _positive(config, *keys):
    for k in keys:
        if not config[k] > 0:
            raise CLIError("%s must be positive, got %r" % (k, config[k]))


def _out_dir(args, command):
    out = Path(args.out) if args.out else Path("out_%s" % command)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- stability ---------------------------------------------------------

def cmd_stability(config, out):
    _positive(config, "L", "k_max", "k_num")
    grid = config["c0_grid"]
    if isinstance(grid, dict):
        grid = np.linspace(grid["start"], grid["stop"],
                           int(grid["num"])).tolist()
    if not grid:
        raise CLIError("c0_grid is empty")
    L = float(config["L"])

    curve_rows, window_rows = [], []
    ks = [(i + 1) * config["k_max"] / config["k_num"]
          for i in range(int(config["k_num"]))]
    for c0 in grid:
        for k in ks:
            kappa = k * k
            pole = abs(kappa - 1.0) < 1e-12
            pearl = math.nan if pole else ls.pearl_neutral_lambda2(kappa, c0)
            curve_rows.append((c0, k, kappa, pearl,
                               ls.coil_neutral_lambda2(k, c0),
                               ls.wrinkle_neutral_lambda2(2), int(pole)))
        win = ls.stability_window(c0, L)
        ext = ls.pearl_extrema(c0)
        # from c0 = 1/2 on, both extrema sit in the kappa = 1 pole
        pole_row = ext is None or not ext[0] < 1.0 < ext[1]
        km, kp = (math.nan, math.nan) if pole_row else ext[:2]
        window_rows.append((c0, int(win.exists), win.lambda2_lo,
                            win.lambda2_hi, win.lo_mode.m, win.lo_mode.n,
                            win.hi_mode.m, win.hi_mode.n, km, kp,
                            int(pole_row)))
        if win.exists:
            print("c0=%g: stable window lambda2 in (%.6f, %.6f)"
                  % (c0, win.lambda2_lo, win.lambda2_hi))
        else:
            print("c0=%g: no stable window" % c0)

    write_csv(out / "curves.csv",
              ["c0", "k", "kappa", "pearling", "coil_buckle",
               "wrinkling_n2", "pearl_pole"], curve_rows)
    write_csv(out / "window.csv",
              ["c0", "window_exists", "lambda2_lo", "lambda2_hi",
               "lo_m", "lo_n", "hi_m", "hi_n", "kappa_minus",
               "kappa_plus", "pearl_pole"], window_rows)


# -- ae ----------------------------------------------------------------

def _scalar_label(ae):
    return "stable" if ae.b < 0 else "unstable"


def _coupled_label(cls):
    if cls.coiling_stable and not cls.buckling_stable:
        return "coiling_stable"
    if cls.buckling_stable and not cls.coiling_stable:
        return "buckling_stable"
    if cls.coiling_stable and cls.buckling_stable:
        return "both_stable"
    return "none_stable"


def cmd_ae(config, out):
    _positive(config, "L")
    c0, L = float(config["c0"]), float(config["L"])
    pe = am.pearling_ae(c0, L)
    wr = am.wrinkling_ae(c0)
    cb = am.coil_buckle_coeffs(c0, L)
    cls = am.classify_coil_buckle(cb)
    rows = [
        ("pearling", pe.mode.m, pe.mode.n, pe.lambda2_crit,
         pe.lambda1_crit, pe.a, pe.b, pe.beta2, _scalar_label(pe)),
        ("wrinkling", wr.mode.m, wr.mode.n, wr.lambda2_crit,
         wr.lambda1_crit, wr.a, wr.b, wr.beta2, _scalar_label(wr)),
        ("coil_buckle", cb.mode.m, cb.mode.n, cb.lambda2_crit,
         cb.lambda1_crit, cb.a, cb.b1, cb.b2, _coupled_label(cls)),
    ]
    write_csv(out / "ae.csv",
              ["instability", "m", "n", "lambda2_crit", "lambda1_crit",
               "c1", "c2", "c3", "classification"], rows)
    for r in rows:
        print("%s: (%.4f, %.4f, %.4f) %s" % (r[0], r[5], r[6], r[7], r[8]))


# -- mesh --------------------------------------------------------------

def cmd_mesh(config, out):
    _positive(config, "L", "r", "nodes")
    mesh = build_cylinder_mesh(float(config["L"]), float(config["r"]),
                               int(config["nodes"]))
    write_csv(out / "vertices.csv", ["id", "x", "y", "z"],
              [(i, *mesh.vertices[i]) for i in range(len(mesh.vertices))])
    write_csv(out / "triangles.csv", ["v0", "v1", "v2"],
              [tuple(t) for t in mesh.triangles])
    rep = geometry_report(mesh)
    write_csv(out / "geometry.csv",
              ["n_vertices", "n_triangles", "ndof", "area", "volume",
               "energy", "normalized_energy", "reduced_volume",
               "mesh_quality"],
              [(len(mesh.vertices), len(mesh.triangles), mesh.ndof,
                rep.area, rep.volume, rep.energy, rep.normalized_energy,
                rep.reduced_volume, rep.mesh_quality)])
    print("mesh: %d vertices, %d triangles, quality %.3f"
          % (len(mesh.vertices), len(mesh.triangles), rep.mesh_quality))


# -- branch pipeline shared by flow/continue/compare --------------------

def _pick_bp(bps, switch):
    if not bps:
        raise CLIError("no branch point detected on the scanned segment")
    want = switch.get("bp_mode")
    if want is not None:
        m, n = int(want[0]), int(want[1])
        for bp in bps:
            if (bp["mode_m"], abs(bp["mode_n"])) == (m, abs(n)):
                return bp
        raise CLIError("no branch point with mode (%d,%d); found %s"
                       % (m, n, [(b["mode_m"], b["mode_n"]) for b in bps]))
    return bps[int(switch.get("bp_index", 0))]


def _switched_branch(mesh, c0, lambda2_start, direction, scan_steps,
                     scan_ds, switch, tol=1e-8, tracked_modes=()):
    st = solve_trivial_state(mesh, lambda2_start, c0=c0, tol=tol)
    scan = continue_branch(st, direction=direction, steps=scan_steps,
                           ds=scan_ds, c0=c0, tol=tol)
    bps = detect_bifurcations(scan, c0=c0)
    bp = _pick_bp(bps, switch)
    seed = switch_branch(bp, switch["ansatz"], float(switch["epsilon"]),
                         c0=c0, tol=tol,
                         tracked_modes=list(tracked_modes) or None)
    parent = BranchState(mesh=bp["mesh"], lam=bp["lam"])
    branch = continue_branch(seed, steps=int(switch["steps"]),
                             ds=float(switch["ds"]), c0=c0, prev=parent,
                             ds_max=float(switch.get("ds_max", 0.1)),
                             tol=tol, tracked_modes=list(tracked_modes))
    return scan, bps, branch


def cmd_continue(config, out):
    _positive(config, "L", "nodes", "steps", "ds")
    c0 = float(config["c0"])
    tol = float(config["tol"])
    modes = [tuple(m) for m in config["tracked_modes"]]
    mesh = build_cylinder_mesh(float(config["L"]), 1.0,
                               int(config["nodes"]))
    st = solve_trivial_state(mesh, float(config["lambda2_start"]), c0=c0,
                             tol=tol, tracked_modes=modes)
    branch = continue_branch(st, direction=int(config["direction"]),
                             steps=int(config["steps"]),
                             ds=float(config["ds"]),
                             ds_max=float(config["ds_max"]), c0=c0,
                             tol=tol, tracked_modes=modes)
    write_branch_csv(branch, out / "branch.csv")
    bps = []
    if config["detect"]:
        bps = detect_bifurcations(branch, c0=c0)
        write_bifurcations_json(bps, out / "bifurcations.json")
        for bp in bps:
            print("branch point: lambda2=%.7f mode=(%d,%d) multiplicity %d"
                  % (bp["lambda2"], bp["mode_m"], bp["mode_n"],
                     bp["multiplicity"]))
    switch = config["switch"]
    if switch:
        bp = _pick_bp(bps, switch)
        seed = switch_branch(bp, switch["ansatz"],
                             float(switch["epsilon"]), c0=c0, tol=tol,
                             tracked_modes=modes or None)
        parent = BranchState(mesh=bp["mesh"], lam=bp["lam"])
        sw = continue_branch(seed, steps=int(switch["steps"]),
                             ds=float(switch["ds"]), c0=c0, prev=parent,
                             ds_max=float(switch.get("ds_max", 0.1)),
                             tol=tol, tracked_modes=modes)
        write_branch_csv(sw, out / "switched_branch.csv")
        print("switched branch: %d states, lambda2 %.6f .. %.6f"
              % (len(sw.states), sw.states[0].lam[1],
                 sw.states[-1].lam[1]))


# -- flow --------------------------------------------------------------

def _flow_start_state(config, mesh):
    recipe = config["state"]
    kind = recipe.get("kind", "trivial")
    c0 = float(config["c0"])
    if kind == "trivial":
        st = solve_trivial_state(mesh, float(recipe["lambda2"]), c0=c0)
        return st
    if kind != "branch":
        raise CLIError("unknown state kind %r" % kind)
    switch = {"ansatz": recipe["ansatz"], "epsilon": recipe["epsilon"],
              "steps": recipe["steps"], "ds": recipe["ds"],
              "ds_max": recipe.get("ds_max", 0.1),
              "bp_index": recipe.get("bp_index", 0),
              "bp_mode": recipe.get("bp_mode")}
    mode = tuple(config["track_mode"])
    _, _, branch = _switched_branch(
        mesh, c0, float(recipe["lambda2_start"]),
        int(recipe["direction"]), int(recipe["scan_steps"]),
        float(recipe["scan_ds"]), switch, tracked_modes=[mode])
    target = recipe.get("target_lambda2")
    states = branch.states
    if target is None:
        return states[-1]
    l2 = np.array([s.lam[1] for s in states])
    return states[int(np.argmin(np.abs(l2 - float(target))))]


FLOW_HEADER = ["t", "h", "E", "normalized_E", "lambda1", "lambda2",
               "area_rel_err", "vol_rel_err", "newton_iters"]


def cmd_flow(config, out):
    _positive(config, "L", "nodes", "h0", "h_max", "tol", "stop")
    c0 = float(config["c0"])
    delta = float(config["delta"])
    mesh0 = build_cylinder_mesh(float(config["L"]), 1.0,
                                int(config["nodes"]))
    start = _flow_start_state(config, mesh0)

    if delta == 0.0:
        # nothing to relax: emit the single steady row
        g = Geometry(start.mesh)
        e, en = g.energy(c0)
        write_csv(out / "trajectory.csv", FLOW_HEADER,
                  [(0.0, 0.0, e, en, start.lam[0], start.lam[1],
                    0.0, 0.0, 0)])
        summary = {"stopped": "steady", "steps": 0,
                   "energy_violations": 0,
                   "final_lambda1": start.lam[0],
                   "final_lambda2": start.lam[1]}
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n")
        print("perturbation is zero: state already steady")
        return

    if config["perturb"] == "bump":
        pert = perturb_bump(start.mesh, delta, float(config["xi"]))
    elif config["perturb"] == "eigen":
        _, vecs, _ = constrained_stability(start, c0=c0)
        pert = perturb_eigen(start.mesh, vecs[0], delta)
    else:
        raise CLIError("unknown perturbation %r" % config["perturb"])

    state = FlowState(mesh=pert, lam=start.lam,
                      step_size=float(config["h0"]))
    res = run_flow(state, c0=c0, h_max=float(config["h_max"]),
                   tol=float(config["tol"]), stop=float(config["stop"]),
                   t_max=float(config["t_max"]),
                   max_steps=int(config["max_steps"]))
    write_csv(out / "trajectory.csv", FLOW_HEADER,
              [tuple(r[k] for k in FLOW_HEADER) for r in res.rows])
    mode = Mode(*config["track_mode"])
    summary = {
        "stopped": res.stopped,
        "steps": len(res.rows) - 1,
        "energy_violations": res.energy_violations,
        "final_lambda1": res.final.lam[0],
        "final_lambda2": res.final.lam[1],
        "final_amplitude": abs(project_amplitude(res.final.mesh, mode)),
        "start_lambda1": start.lam[0],
        "start_lambda2": start.lam[1],
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print("flow %s after %d steps: lambda=(%.4f, %.4f), "
          "%d energy violations"
          % (res.stopped, len(res.rows) - 1, res.final.lam[0],
             res.final.lam[1], res.energy_violations))


# -- compare -----------------------------------------------------------

COMPARE_CASES = {
    "pearling": {"mode": (1, 0), "side": -1},
    "wrinkling": {"mode": (0, 2), "side": 1},
    "coiling": {"mode": (1, 1), "side": 1},
}


def _ae_prediction(instability, c0, L):
    if instability == "pearling":
        ae = am.pearling_ae(c0, L)
        return ae.lambda2_crit, ae.beta2 / ae.steady_amplitude ** 2
    if instability == "wrinkling":
        ae = am.wrinkling_ae(c0)
        return ae.lambda2_crit, ae.beta2 / ae.steady_amplitude ** 2
    if instability == "coiling":
        cb = am.coil_buckle_coeffs(c0, L)
        return cb.lambda2_crit, cb.beta2_coil / cb.coil_amplitude ** 2
    raise CLIError("unknown instability %r" % instability)


def cmd_compare(config, out):
    _positive(config, "L", "nodes", "epsilon", "steps", "ds",
              "amplitude_max")
    name = config["instability"]
    if name not in COMPARE_CASES:
        raise CLIError("unknown instability %r" % name)
    case = COMPARE_CASES[name]
    c0, L = float(config["c0"]), float(config["L"])
    crit, slope_pred = _ae_prediction(name, c0, L)
    side = case["side"]
    mode = case["mode"]

    mesh = build_cylinder_mesh(L, 1.0, int(config["nodes"]))
    switch = {"ansatz": name, "epsilon": config["epsilon"],
              "steps": config["steps"], "ds": config["ds"],
              "bp_mode": mode}
    _, bps, branch = _switched_branch(mesh, c0, crit - 0.05 * side,
                                      side, 3, 0.05, switch,
                                      tracked_modes=[mode])
    bp = _pick_bp(bps, switch)

    amax = float(config["amplitude_max"])
    amps = np.array([abs(s.amplitude[mode]) for s in branch.states])
    l2 = np.array([s.lam[1] for s in branch.states])
    keep = amps <= amax
    rows = [(a, a * a, x, bp["lambda2"] + slope_pred * a * a)
            for a, x in zip(amps[keep], l2[keep])]
    write_csv(out / "compare.csv",
              ["amplitude", "amplitude_sq", "lambda2_numeric",
               "lambda2_predicted"], rows)

    a2, xx = amps[keep] ** 2, l2[keep]
    slopes = np.diff(xx) / np.diff(a2)
    dev = float(np.abs(slopes / slope_pred - 1.0).max())
    fit = float(np.polyfit(a2, xx, 1)[0])
    report = {
        "instability": name,
        "lambda2_crit_analytic": crit,
        "lambda2_crit_numeric": bp["lambda2"],
        "slope_predicted": slope_pred,
        "slope_numeric_fit": fit,
        "max_relative_slope_deviation": dev,
        "amplitude_max": amax,
        "n_states": int(keep.sum()),
    }
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    print("%s slope: numeric %.4f vs predicted %.4f, "
          "max relative deviation %.2f%%"
          % (name, fit, slope_pred, 100.0 * dev))


# -- driver ------------------------------------------------------------

COMMANDS = {
    "stability": cmd_stability,
    "ae": cmd_ae,
    "mesh": cmd_mesh,
    "flow": cmd_flow,
    "continue": cmd_continue,
    "compare": cmd_compare,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="helftube",
        description="Cylindrical membrane stability, amplitude "
                    "equations, flows and continuation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--verbose", action="store_true")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry; VALUE is parsed "
                            "as JSON, dotted KEY descends into nested "
                            "blocks")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.command, args)
        out = _out_dir(args, args.command)
        emit_config(config, out)
        COMMANDS[args.command](config, out)
    except (CLIError, ValueError, RuntimeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
