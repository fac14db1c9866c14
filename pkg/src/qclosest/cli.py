"""Command-line driver.

Usage::

    qclosest simulate   --scenario FILE [--out DIR] [--seed N] [--stride K]
    qclosest stability  --scenario FILE [--deltas 1e-1,1e-2] [--T 2]
    qclosest meanfield  --scenario FILE [--n-values 32,64] [--seeds 0,1] [--T 2] [--rate K]
    qclosest illposed   [--scenario FILE] [--epsilons ...] [--sigma 0.05] [--t-eval 1]
    qclosest conjecture --scenario FILE [--horizon 50] [--tol-accel 1e-6]
    qclosest constants  (--scenario FILE | --Dx A --Dv B --eta E) [--family F --sigma S --dim D] [--T 1]

Artifacts go to ``--out`` (default: the scenario's ``[output] path``):
``trajectory.csv``, ``diagnostics.csv``, per-command tables and
``report.json``.  Floats are written in shortest round-trip form and JSON
keys are sorted, so identical inputs give identical bytes.

Exit codes: 0 success, 2 parse or validation error, 3 runtime error; on
failure a JSON error record is printed to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .classical import simulate_classical
from .dynamics import TrajectoryRecord, simulate
from .experiments import (
    HORIZON,
    TOL_ACCEL,
    EDGE_THRESHOLD,
    _plain,
    run_conjecture,
    run_illposed,
    run_meanfield,
    run_stability,
    theoretical_constants,
)
from .kernel import MollifierSpec
from .scenario import (
    ParseError,
    Scenario,
    ValidationError,
    initial_state,
    load_scenario,
    parse_scenario,
)
from .transport import EmpiricalMeasure

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3

DIAGNOSTIC_COLUMNS = ("D_x", "D_v", "max_speed", "max_accel", "hull_violation")


class UsageError(ValueError):
    """Bad command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _num(x) -> str:
    x = float(x)
    return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, str)) else _num(v) for v in row])


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_plain(payload), fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")


def write_trajectory(path, rec: TrajectoryRecord):
    """Rows ``t, i, x_1..x_d, v_1..v_d, R_i, |a_i|`` (``R_i`` is nan for the classical system)."""
    n, d = rec.positions.shape[1:]
    header = ["t", "i"] + [f"x{k + 1}" for k in range(d)] + [f"v{k + 1}" for k in range(d)] + ["R_i", "abs_a_i"]
    acc = np.linalg.norm(rec.accelerations, axis=2)
    rows = []
    for k, t in enumerate(rec.times):
        for i in range(n):
            r = rec.radii[k, i] if rec.radii is not None else math.nan
            rows.append([float(t), i, *rec.positions[k, i], *rec.velocities[k, i], r, acc[k, i]])
    _write_csv(path, header, rows)


def write_diagnostics(path, rec: TrajectoryRecord):
    cols = [rec.diagnostics[c] for c in DIAGNOSTIC_COLUMNS]
    _write_csv(path, ["t", *DIAGNOSTIC_COLUMNS], [[t, *(c[k] for c in cols)] for k, t in enumerate(rec.times)])


def diagnostics_summary(rec: TrajectoryRecord) -> dict:
    """Final diameters and worst-case violation metrics over the recorded run."""
    dg = rec.diagnostics
    speed0 = dg["max_speed"][0]
    excess = dg["radius_excess"]
    return {
        "final_D_x": dg["D_x"][-1],
        "final_D_v": dg["D_v"][-1],
        "max_speed_ratio": float(np.max(dg["max_speed"]) / speed0) if speed0 > 0 else (0.0 if np.max(dg["max_speed"]) == 0 else math.inf),
        "hull_violation_max": float(np.max(dg["hull_violation"])),
        "step_hull_violation_max": rec.step_hull_violation,
        "radius_bound_violation_max": None if np.all(np.isnan(excess)) else float(np.nanmax(excess)),
        "capped_radius_solves": rec.capped_radii,
        "records": rec.n_records,
    }


def _report(command, scenario: Scenario | None, payload, diagnostics=None):
    return {
        "tool": "qclosest",
        "version": __version__,
        "command": command,
        "seed": None if scenario is None else scenario.init.seed,
        "scenario": None if scenario is None else scenario.to_dict(),
        "diagnostics": diagnostics,
        "payload": payload,
    }


def _events(rec):
    return [{"time": e.time, "particle": e.particle, "old": list(e.old), "new": list(e.new), "kind": e.kind} for e in rec.events]


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, s, out):
    rec = simulate(s) if s.model.variant == "fuzzy" else simulate_classical(s)
    if "csv" in s.output.formats:
        write_trajectory(os.path.join(out, "trajectory.csv"), rec)
        write_diagnostics(os.path.join(out, "diagnostics.csv"), rec)
    payload = {"final_time": rec.times[-1], "events": _events(rec), "meta": rec.meta}
    return _report("simulate", s, payload, diagnostics_summary(rec))


def cmd_stability(args, s, out):
    rep = run_stability(s, args.deltas, args.T)
    rows = [[t, d0, rep.series[k, j]] for k, d0 in enumerate(rep.delta0) for j, t in enumerate(rep.times)]
    _write_csv(os.path.join(out, "stability.csv"), ["t", "delta0", "w2"], rows)
    return _report("stability", s, rep.to_dict())


def cmd_meanfield(args, s, out):
    rep = run_meanfield(s, args.n_values, args.seeds, args.T, args.rate)
    payload = {}
    rows = []
    for a, seed in enumerate(rep.seeds):
        for b, n in enumerate(rep.n_values):
            for j, t in enumerate(rep.eval_times):
                rows.append([int(seed), int(n), 2 * int(n), t, rep.pairwise_w2[a, b, j]])
    _write_csv(os.path.join(out, "meanfield.csv"), ["seed", "n", "n2", "t", "w2"], rows)
    payload.update(rep.to_dict())
    return _report("meanfield", s, payload)


def _illposed_scenarios(args, s):
    base = (
        "[model]\nvariant = classical\nn = 5\nq = 2\nrank_self = true\n"
        "[integrator]\nscheme = classical_euler\ndt = 1e-3\nt_final = 1\n"
        "[init]\nkind = example1\n[output]\nstride = 100\n"
    )
    classical = s if s is not None else parse_scenario(base)
    if classical.model.variant != "classical" or classical.init.kind != "example1":
        raise ValidationError("illposed needs a classical example1 scenario", "model.variant")
    fuzzy = None
    if args.sigma > 0:
        m = replace(classical.model, variant="fuzzy", q=2.0, eta=None, sigma=args.sigma, rank_self=False, tie_rule="lowest_index", comm_weight="constant_one")
        fuzzy = replace(classical, model=m, integrator=replace(classical.integrator, scheme="rk4"))
    return classical, fuzzy


def cmd_illposed(args, s, out):
    classical, fuzzy = _illposed_scenarios(args, s)
    rep = run_illposed(classical, fuzzy, args.epsilons, args.t_eval)
    rows = [["classical", e, g] for e, g in zip(rep.classical.epsilons, rep.classical.gaps)]
    if rep.fuzzy is not None:
        rows += [["fuzzy", e, g] for e, g in zip(rep.fuzzy.epsilons, rep.fuzzy.gaps)]
    _write_csv(os.path.join(out, "gaps.csv"), ["system", "epsilon", "gap"], rows)
    return _report("illposed", classical, rep.to_dict())


def cmd_conjecture(args, s, out):
    rep = run_conjecture(s, args.horizon, args.tol_accel, args.threshold)
    rows = [[t, a, w, int(c)] for t, a, w, c in zip(rep.times, rep.max_accel, rep.weight_change, rep.n_components)]
    _write_csv(os.path.join(out, "conjecture.csv"), ["t", "max_accel", "weight_change", "components"], rows)
    return _report("conjecture", s, rep.to_dict())


def cmd_constants(args, s, out):
    if s is not None:
        mu = EmpiricalMeasure.from_state(initial_state(s))
        D_x, D_v = mu.position_diameter, mu.velocity_diameter
        eta = s.model.q_value / s.model.n
        spec = MollifierSpec(s.model.family, s.model.sigma, s.domain.dim)
        T = s.integrator.t_final if args.T is None else args.T
    else:
        if args.Dx is None or args.Dv is None or args.eta is None:
            raise UsageError("constants needs --scenario or all of --Dx, --Dv, --eta")
        D_x, D_v, eta = args.Dx, args.Dv, args.eta
        spec = MollifierSpec(args.family, args.sigma, args.dim)
        T = 1.0 if args.T is None else args.T
    c = theoretical_constants(D_x, D_v, eta, spec, T=T)
    payload = {"inputs": {"D_x": D_x, "D_v": D_v, "eta": eta, "family": spec.family, "sigma": spec.sigma, "dim": spec.dim, "T": T}, **c.to_dict()}
    return _report("constants", s, payload)


COMMANDS = {
    "simulate": cmd_simulate,
    "stability": cmd_stability,
    "meanfield": cmd_meanfield,
    "illposed": cmd_illposed,
    "conjecture": cmd_conjecture,
    "constants": cmd_constants,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qclosest", description="q-closest alignment dynamics: simulations and checks")
    p.add_argument("--version", action="version", version=f"qclosest {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, need_scenario=True):
        sp.add_argument("--scenario", required=need_scenario, help="scenario file")
        sp.add_argument("--out", help="output directory (default: scenario [output] path)")
        sp.add_argument("--seed", type=int, help="override [init] seed")
        sp.add_argument("--stride", type=int, help="override [output] stride")
        sp.add_argument("--dt", type=float, help="override [integrator] dt")
        sp.add_argument("--t-final", type=float, help="override [integrator] t_final")
        return sp

    common(sub.add_parser("simulate", help="integrate a scenario"))
    sp = common(sub.add_parser("stability", help="W2 perturbation sweep"))
    sp.add_argument("--deltas", type=_floats, default=[1e-1, 1e-2, 1e-3, 1e-4])
    sp.add_argument("--T", type=float)
    sp = common(sub.add_parser("meanfield", help="nested-sample mean-field study"))
    sp.add_argument("--n-values", type=_ints, default=[32, 64, 128, 256])
    sp.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4])
    sp.add_argument("--T", type=float)
    sp.add_argument("--rate", type=float, help="exponential rate for the amplification check (default: largest stability rate over the seeds' smallest samples)")
    sp.add_argument("--deltas", type=_floats, default=[1e-1, 1e-2, 1e-3, 1e-4])
    sp = common(sub.add_parser("illposed", help="classical and fuzzy gap tables"), need_scenario=False)
    sp.add_argument("--epsilons", type=_floats, default=[1e-1, 1e-2, 1e-3, 1e-4])
    sp.add_argument("--sigma", type=float, default=0.05, help="fuzzy counterpart kernel scale (0 to skip)")
    sp.add_argument("--t-eval", type=float)
    sp = common(sub.add_parser("conjecture", help="long-horizon clustering diagnostics"))
    sp.add_argument("--horizon", type=float, default=HORIZON)
    sp.add_argument("--tol-accel", type=float, default=TOL_ACCEL)
    sp.add_argument("--threshold", type=float, default=EDGE_THRESHOLD)
    sp = common(sub.add_parser("constants", help="force Lipschitz constants and bound exponent"), need_scenario=False)
    sp.add_argument("--Dx", type=float)
    sp.add_argument("--Dv", type=float)
    sp.add_argument("--eta", type=float)
    sp.add_argument("--family", default="quartic")
    sp.add_argument("--sigma", type=float, default=0.5)
    sp.add_argument("--dim", type=int, default=1)
    sp.add_argument("--T", type=float)
    return p


def _error(kind, message, code, **extra):
    record = {"error": kind, "message": message, "exit_code": code, **extra}
    sys.stderr.write(json.dumps(_plain(record), sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        s = load_scenario(args.scenario) if args.scenario else None
        if s is not None:
            integ = {}
            if args.dt is not None:
                integ["dt"] = args.dt
            if args.t_final is not None:
                integ["t_final"] = args.t_final
            s = s.with_overrides(args.seed, args.stride, **integ)
        out = args.out or (s.output.path if s is not None else "out")
        os.makedirs(out, exist_ok=True)
        report = COMMANDS[args.command](args, s, out)
        _write_json(os.path.join(out, "report.json"), report)
    except UsageError as err:
        return _error("UsageError", str(err), EXIT_INPUT)
    except ParseError as err:
        return _error("ParseError", str(err), EXIT_INPUT, line=err.line, field=err.field)
    except ValidationError as err:
        return _error("ValidationError", str(err), EXIT_INPUT, field=err.field)
    except OSError as err:
        return _error(type(err).__name__, str(err), EXIT_INPUT if getattr(err, "filename", None) == getattr(args, "scenario", 0) else EXIT_RUNTIME)
    except Exception as err:  # noqa: BLE001 - every failure becomes an error record
        return _error(type(err).__name__, str(err), EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
