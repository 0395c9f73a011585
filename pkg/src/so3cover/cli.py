"""Command-line entry point: ``coverage run | validate | gradient-check``.

Set ``COVERAGE_LOG`` to a logging level name (``INFO``, ``DEBUG``) for
progress output on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .controller import run, run_tracking
from .manifold import expm_skew, hat
from .objective import directional_errors
from .scenario import ScenarioError, load_scenario

FMT = "%.12g"
FD_TOL = 1e-5


def _num(x):
    return FMT % x


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_outputs(trace, scenario, mode, out, seed):
    """Write trace.csv, rotations.csv, fov.csv and summary.json into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n = len(scenario.data["sensors"])
    key = "frame" if mode == "tracking" else "iter"

    def index(r):
        return str(r.frame if mode == "tracking" else r.iter)

    _write_csv(out / "trace.csv",
               [key, "H"] + ["grad_norm_%d" % i for i in range(n)] + ["step_%d" % i for i in range(n)],
               [[index(r), _num(r.H)] + [_num(g) for g in r.grad_norms] + [_num(a) for a in r.steps]
                for r in trace.records])
    _write_csv(out / "rotations.csv",
               [key] + ["R%d_%d%d" % (i, a + 1, b + 1) for i in range(n) for a in range(3) for b in range(3)],
               [[index(r)] + [_num(v) for R in r.rotations for v in np.asarray(R).ravel()]
                for r in trace.records])
    _write_csv(out / "fov.csv",
               [key] + ["fov%d_%s%d" % (i, c, v + 1) for i in range(n) for v in range(4) for c in "xy"],
               [[index(r)] + [_num(v) for f in r.fovs for v in f] for r in trace.records])
    summary = {
        "scenario": scenario.data.get("name", ""),
        "mode": mode,
        "seed": seed,
        "status": trace.status,
        "stationary": trace.status == "stationary",
        "final_H": float(_num(trace.records[-1].H)) if trace.records else None,
        "iterations": trace.iterations,
        "records": len(trace.records),
        "stalled_sensors": list(trace.stalled),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8", newline="\n")
    return summary


def simulate(scenario, mode, seed=None, max_iters=None):
    seed = scenario.seed if seed is None else seed
    network = scenario.network(seed)
    config = scenario.config(max_iters)
    movie = scenario.movie()
    if mode == "static":
        return run(network, movie[0], config), seed
    return run_tracking(network, movie, config), seed


def gradient_check(scenario, seed=None, n_rotations=5, n_dirs=10, tilt=0.3):
    """Max relative finite-difference error per sensor on the first frame.

    Rotations are the initial one plus random tilts of up to ``tilt``
    radians; densities are fitted at each rotation.
    """
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    env, params, model = scenario.environment(), scenario.params(), scenario.model()
    frame = scenario.movie()[0]
    worst = []
    for s in scenario.sensors():
        errs = []
        for k in range(n_rotations):
            R = s.rotation
            if k:
                w = rng.uniform(-1.0, 1.0, 3)
                R = R @ expm_skew(hat(tilt * rng.uniform() * w / np.linalg.norm(w)))
            d = model.estimate(frame, s, env, R, rng=rng)
            dirs = rng.standard_normal((n_dirs, 3, 3))
            errs.extend(directional_errors(s, params, env, d, R, dirs))
        worst.append(float(np.max(errs)))
    return worst


def _cmd_run(args):
    scenario = load_scenario(args.scenario)
    trace, seed = simulate(scenario, args.mode, args.seed, args.max_iters)
    summary = write_outputs(trace, scenario, args.mode, args.out, seed)
    print("%s: %s after %d iterations, final H %s" % (
        args.mode, summary["status"], summary["iterations"], _num(summary["final_H"])))
    return 0


def _cmd_validate(args):
    scenario = load_scenario(args.scenario)
    d = scenario.data
    print("ok: %d sensors, %d frames" % (len(d["sensors"]), len(d["movie"]["frames"])))
    return 0


def _cmd_gradient_check(args):
    scenario = load_scenario(args.scenario)
    worst = gradient_check(scenario, args.seed)
    for i, e in enumerate(worst):
        print("sensor %d: max relative error %.3e" % (i, e))
    m = max(worst)
    print("max relative error %.3e (%s)" % (m, "pass" if m < FD_TOL else "FAIL"))
    return 0 if m < FD_TOL else 1


def build_parser():
    p = argparse.ArgumentParser(prog="coverage", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write trace files")
    r.add_argument("--scenario", required=True, help="scenario JSON file or preset name")
    r.add_argument("--mode", choices=("static", "tracking"), default="static")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--max-iters", type=int, default=None)
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=_cmd_validate)
    g = sub.add_parser("gradient-check", help="finite-difference check of the gradient")
    g.add_argument("--scenario", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(func=_cmd_gradient_check)
    return p


def main(argv=None):
    level = os.environ.get("COVERAGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    args = build_parser().parse_args(argv)
    if getattr(args, "max_iters", None) is not None and args.max_iters < 0:
        print("error: --max-iters must be >= 0", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ScenarioError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
