"""Command line: analyze / melnikov / index / fixed-points / verify / examples.

Exit codes: 0 success, 2 analysis ran but the existence theorems do not
apply, 1 error (bad config or a failed computation).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .cycle import CycleError
from .expr import ExprError
from .index import IndexError_
from .linearized import FrameError
from .melnikov import QuadratureError
from .ode import IntegrationError
from .pipeline import build_cycle, parse_config, run_analysis
from .poincare import (PoincareError, fallback_seeds, find_fixed_points, theorem_seeds,
                       write_fixed_points)
from .system import BUILTINS, ConfigError

EXIT_OK, EXIT_ERROR, EXIT_HYPOTHESES = 0, 1, 2

_PROVENANCE = (
    (ConfigError, "config"), (ExprError, "expr"), (IntegrationError, "ode"),
    (CycleError, "cycle"), (FrameError, "linearized"), (QuadratureError, "melnikov"),
    (IndexError_, "index"), (PoincareError, "poincare"),
)

EXAMPLE_CONFIGS = {
    "mak": {"system": {"builtin": "mak", "params": {"w": 0.8}}, "epsilons": [1e-2, 1e-3]},
    "mak-outside": {"system": {"builtin": "mak", "params": {"w": 0.4}}},
    "ex2": {"system": {"builtin": "ex2"}, "epsilons": [1e-3]},
    "yag": {"system": {"builtin": "yag", "params": {"p": 3}}},
    "duffing": {"system": {"builtin": "duffing_jump",
                           "params": {"mu": 0, "nu": 0, "delta": 0.05}},
                "cycle": {"shoot": {"section": "x2=0", "period": 2 * math.pi / 1.05,
                                    "bracket": [0.5, 1.5]}},
                "epsilons": [1e-3]},
    "inline": {"system": {"f": ["x2*(1 - x1^2 - x2^2)", "-x1*(1 - x1^2 - x2^2)"],
                          "g": ["0", "sin(w*t)"], "params": {"w": 0.8}, "T": 2 * math.pi / 0.8},
               "cycle": {"initial": [0, 0.4472135954999579], "T": 2 * math.pi / 0.8}},
}


def _module_of(err: BaseException) -> str:
    for cls, name in _PROVENANCE:
        if isinstance(err, cls):
            return name
    return "internal"


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json_atomic(path: Path, payload: dict) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_clean(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_config(path: str):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from err
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from err
    return parse_config(raw)


def _out_dir(cfg, override):
    out = Path(override or cfg.out or "cycleindex_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _prepare(args):
    cfg = _load_config(args.config)
    cycle = build_cycle(cfg.system, cfg.cycle, cfg.rtol, cfg.atol)
    return cfg, cycle


def _fixed_point_block(cfg, analysis, eps_list):
    cyc = analysis.cycle
    rows, records = [], []
    for eps in eps_list:
        seeds = theorem_seeds(cyc, analysis.zeros.thetas, eps=eps)
        fps = find_fixed_points(cfg.system, eps, seeds, cyc, fallback=fallback_seeds(cyc),
                                rtol=cfg.rtol, atol=cfg.atol)
        records.extend(fps.records)
        rows.append({"eps": eps, "n_points": len(fps), "n_seeds": fps.n_seeds,
                     "n_failed": fps.n_failed, "notes": fps.notes,
                     "points": [r.to_dict() for r in fps.records]})
    return rows, records


def run_analyze(config, out=None, eps=None, echo=print):
    """Run the full pipeline on a config (path or parsed object) and write the bundle.

    Returns ``(exit_code, report)``; errors propagate to the caller.
    """
    cfg = _load_config(config) if isinstance(config, (str, os.PathLike)) else parse_config(config)
    cycle = build_cycle(cfg.system, cfg.cycle, cfg.rtol, cfg.atol)
    an = run_analysis(cfg.system, cycle, cfg.n_theta, cfg.n_s, cfg.quad_tol)
    out = _out_dir(cfg, out)
    an.grid.to_csv(out / "melnikov.csv")
    if an.phi is not None:
        an.phi.to_csv(out / "phi.csv")
    eps_list = list(eps or cfg.epsilons)
    fp_rows, records = _fixed_point_block(cfg, an, eps_list) if eps_list else ([], [])
    write_fixed_points(records, out / "fixed_points.csv", out / "fixed_points.json")
    report = an.summary()
    report["fixed_points"] = fp_rows
    report["config"] = cfg.raw
    report["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    write_json_atomic(out / "report.json", report)
    v = an.verdict
    if echo:
        echo(f"verdict: {v.status}")
        if an.index is not None:
            echo(f"index: {an.index.index} (orientation reversed: {cycle.orientation < 0})")
        echo(f"condition_A: {'holds' if an.condition_a.verdict else 'failed'} "
             f"(margin {an.condition_a.margin:.6g})")
        echo(f"wrote {out / 'report.json'}")
    return (EXIT_OK if v.applies else EXIT_HYPOTHESES), report


def cmd_analyze(args) -> int:
    return run_analyze(args.config, args.out, args.eps)[0]


def cmd_melnikov(args) -> int:
    from .linearized import adjoint_frame
    from .melnikov import condition_a_margin, melnikov_grid, zeros_of_me

    cfg, cycle = _prepare(args)
    grid = melnikov_grid(adjoint_frame(cycle), cfg.n_theta, cfg.n_s, cfg.quad_tol)
    out = _out_dir(cfg, args.out)
    grid.to_csv(out / "melnikov.csv")
    zs = zeros_of_me(grid)
    ca = condition_a_margin(grid)
    print(json.dumps(_clean({"zeros_of_M_E": zs.thetas, "identically_zero": zs.identically_zero,
                             "condition_A": ca.to_dict()}), indent=2))
    return EXIT_OK


def cmd_index(args) -> int:
    cfg, cycle = _prepare(args)
    an = run_analysis(cfg.system, cycle, cfg.n_theta, cfg.n_s, cfg.quad_tol,
                      check_isolation=False)
    out = _out_dir(cfg, args.out)
    if an.phi is None:
        print("index undefined: Phi vanishes on the cycle", file=sys.stderr)
        return EXIT_HYPOTHESES
    an.phi.to_csv(out / "phi.csv")
    print(json.dumps(_clean({"index": an.index.to_dict(),
                             "orientation_reversed": cycle.orientation < 0,
                             "analt": an.verdict.analt.to_dict() if an.verdict.analt else None}),
                     indent=2))
    return EXIT_OK


def cmd_fixed_points(args) -> int:
    cfg, cycle = _prepare(args)
    eps_list = args.eps or list(cfg.epsilons)
    if not eps_list:
        raise ConfigError("no eps values: pass --eps or set 'epsilons' in the config")
    an = run_analysis(cfg.system, cycle, cfg.n_theta, 8, cfg.quad_tol, check_isolation=False)
    rows, records = _fixed_point_block(cfg, an, eps_list)
    out = _out_dir(cfg, args.out)
    write_fixed_points(records, out / "fixed_points.csv", out / "fixed_points.json")
    for r in rows:
        print(f"eps={r['eps']:g}: {r['n_points']} fixed point(s), {r['n_failed']} seed(s) failed")
        for p in r["points"]:
            print(f"  ({p['x1']:.10f}, {p['x2']:.10f}) {p['type']}, {p['stability']}, "
                  f"{p['side']}, phase {p['phase']:.6f}, residual {p['residual']:.2e}")
    return EXIT_OK


def run_verify(only=None, corrupt_adjoint=False, echo=print):
    """Run the acceptance criteria; ``(exit_code, results)``, 0 iff every one passes."""
    from .verify import run_criteria

    try:
        results = run_criteria(only, corrupt_adjoint=corrupt_adjoint, echo=echo)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    n_ok = sum(r.passed for r in results)
    if echo:
        echo(f"{n_ok}/{len(results)} criteria passed")
    return (EXIT_OK if n_ok == len(results) else EXIT_ERROR), results


def cmd_verify(args) -> int:
    return run_verify(args.only, args.corrupt_adjoint)[0]


def cmd_examples(args) -> int:
    if args.what == "list":
        for name, (params, _, desc) in BUILTINS.items():
            ps = ", ".join(params) if params else "-"
            print(f"{name:<14} params: {ps:<16} {desc}")
        print("\nexample configs:")
        for key, cfg in EXAMPLE_CONFIGS.items():
            print(f"  {key}: {json.dumps(cfg)}")
        return EXIT_OK
    cfg = EXAMPLE_CONFIGS.get(args.what)
    if cfg is None:
        raise ConfigError(f"unknown example {args.what!r}; try 'list'")
    print(json.dumps(cfg, indent=2))
    return EXIT_OK


def _eps_list(text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from err
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("eps values must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cycleindex", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="JSON config file")
        sp.add_argument("--out", help="output directory (overrides the config)")
        return sp

    a = with_config("analyze", "full pipeline with report.json")
    a.add_argument("--eps", type=_eps_list, help="comma separated eps values")
    a.set_defaults(func=cmd_analyze)
    with_config("melnikov", "tabulate M_E and M_A").set_defaults(func=cmd_melnikov)
    with_config("index", "index of Phi on the cycle").set_defaults(func=cmd_index)
    f = with_config("fixed-points", "fixed points of the period map")
    f.add_argument("--eps", type=_eps_list, help="comma separated eps values")
    f.set_defaults(func=cmd_fixed_points)
    v = sub.add_parser("verify", help="run the acceptance criteria")
    v.add_argument("--only", help="module name (melnikov, index, poincare, ...) or number")
    v.add_argument("--corrupt-adjoint", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)
    e = sub.add_parser("examples", help="built-in systems and sample configs")
    e.add_argument("what", nargs="?", default="list", help="'list' or an example name")
    e.set_defaults(func=cmd_examples)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:
        print(f"error [{_module_of(err)}]: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
