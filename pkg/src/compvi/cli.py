"""Command-line front end.

Exit status: 0 when the run converged, 2 when a budget ran out first,
1 on any input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction

from .benchgen import PRESETS, BenchSpec, BenchSpecError, gen_diagram
from .engine import CviConfig, cvi_run, exact_values, mono_run
from .mdp import MdpError
from .model_io import ModelFormatError, dump_model, load_model

REPORT_VERSION = 1
THREADS_ENV = "COMPVI_THREADS"

ALGORITHMS = {
    "mono": None,
    "cvi": dict(cache="none", gsc="optimistic"),
    "ocvi-exact": dict(cache="exact", gsc="optimistic"),
    "ocvi-pareto": dict(cache="pareto", gsc="optimistic"),
    "symb": dict(cache="pareto", gsc="bottom-up"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compvi", description="Compositional value iteration on open MDP string diagrams.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="model JSON file")
    src.add_argument("--bench", help="benchmark spec such as chains:10:dice2, or a preset name "
                                     f"({', '.join(PRESETS)})")
    p.add_argument("--algorithm", choices=list(ALGORITHMS), default="cvi")
    p.add_argument("--epsilon", type=float, default=None, help="target precision (default 1e-4 or the model's)")
    p.add_argument("--eta", type=float, default=None, help="local precision (default epsilon/10)")
    p.add_argument("--check-period", type=int, default=10)
    p.add_argument("--cache-cutoff", type=int, default=200)
    p.add_argument("--iteration-cap", type=int, default=100_000)
    p.add_argument("--time-cap", type=float, default=None, help="seconds")
    p.add_argument("--entrance", default=None, help="entrance to report first (default: the query's)")
    p.add_argument("--seed", type=int, default=0, help="seed for --bench")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker cap for the global check (default ${THREADS_ENV} or 1)")
    p.add_argument("--oracle", choices=["off", "exact-compare"], default="off")
    p.add_argument("--json", action="store_true", help="print a JSON report")
    p.add_argument("--emit-model", metavar="PATH", help="write the loaded or generated model as JSON")
    return p


def _load(args):
    if args.model:
        return load_model(args.model)
    text = PRESETS.get(args.bench, args.bench)
    return gen_diagram(BenchSpec.parse(text, seed=args.seed))


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    return int(env) if env else 1


def run(args) -> tuple[int, dict]:
    model = _load(args)
    d = model.diagram
    ix = d.index
    exit_names = ix.global_exit_names()
    w = model.query.resolve_weights(exit_names)
    eps = args.epsilon if args.epsilon is not None else (model.query.epsilon or 1e-4)
    eta = args.eta if args.eta is not None else eps / 10
    if args.emit_model:
        dump_model(model, args.emit_model)
    cfg = CviConfig(epsilon=eps, eta=eta, check_period=args.check_period,
                    cache_cutoff=args.cache_cutoff, iteration_cap=args.iteration_cap,
                    time_cap=args.time_cap, threads=_threads(args),
                    **(ALGORITHMS[args.algorithm] or {}))
    if args.algorithm == "mono":
        res = mono_run(d, w, cfg)
    else:
        res = cvi_run(d, w, cfg)
    report = {
        "version": REPORT_VERSION,
        "algorithm": args.algorithm,
        "input": args.model or args.bench,
        "epsilon": eps,
        "eta": eta,
        "query_entrance": model.query.entrance,
        "weights": {n: str(x) for n, x in zip(exit_names, w)},
    }
    report.update(res.as_dict())
    stats = report.pop("stats")
    report["stats"] = {"t": res.wall_time, "t_i": stats.get("t_i", 0.0), "t_r": stats.get("t_r", 0.0),
                       "H": stats.get("H", 0), "Q": stats.get("Q", 0),
                       **{k: v for k, v in stats.items() if k not in ("t_i", "t_r", "H", "Q")}}
    status = 0 if res.converged else 2
    if args.oracle == "exact-compare":
        ex = exact_values(d, w)
        rows = {}
        ok = True
        for n, lo, e in zip(res.entrances, res.lower, ex):
            good = Fraction(lo) <= e and (not res.converged or e <= Fraction(lo) + Fraction(eps))
            ok &= good
            rows[n] = {"exact": str(e), "exact_float": float(e), "ok": good}
        report["oracle"] = {"entrances": rows, "ok": ok}
        if not ok:
            status = 3
    return status, report


def render(report: dict) -> str:
    lines = [f"algorithm {report['algorithm']}  input {report['input']}  epsilon {report['epsilon']:g}"]
    oracle = report.get("oracle", {}).get("entrances", {})
    head = f"{'entrance':<28} {'lower':>14} {'upper':>14}"
    if oracle:
        head += f" {'exact':>14}  ok"
    lines.append(head)
    names = list(report["entrances"])
    q = report.get("query_entrance")
    if q in names:
        names.remove(q)
        names.insert(0, q)
    for n in names:
        e = report["entrances"][n]
        up = "-" if e["upper"] is None else f"{e['upper']:.10f}"
        line = f"{n:<28} {e['lower']:>14.10f} {up:>14}"
        if oracle:
            o = oracle[n]
            line += f" {o['exact_float']:>14.10f}  {'yes' if o['ok'] else 'NO'}"
        lines.append(line)
    s = report["stats"]
    lines.append(f"converged {report['converged']} ({report['accepted_by']})  iterations {report['iterations']}")
    lines.append(f"t {s['t']:.3f}s  t_i {s['t_i']:.3f}s  t_r {s['t_r']:.3f}s  H {s['H']}  Q {s['Q']}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        status, report = run(args)
    except (ModelFormatError, BenchSpecError, MdpError, ValueError, OSError) as e:
        print(f"compvi: error: {e}", file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(render(report))
    if status == 3:
        print("compvi: oracle check failed", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
