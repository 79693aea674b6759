"""Command-line entry point: ``quasihom <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .bvp import BvpSpec, closed_form_effective, solve_homogenized, solve_multiscale
from .cell import corrector_energy, save_tables, solve_corrector, build_effective_table
from .coefficients import get_model
from .errors import InvalidArgumentError, NonConvergenceError, RangeError
from .mesh import build_mesh, write_field_csv

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with code 1 and print usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> np.ndarray:
    try:
        parts = [float(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {text!r}") from None
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return np.array(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quasihom", description="Periodic homogenization experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(p, config=False):
        if config:
            p.add_argument("--config", required=True, help="study config (JSON)")
        p.add_argument("--output", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--seed", type=int, default=None)
        return p

    p = common(sub.add_parser("cell", help="solve one cell problem"))
    p.add_argument("--model", required=True)
    p.add_argument("--xi", type=_pair, required=True, help="slope, e.g. 1,0")
    p.add_argument("--n", type=int, default=128)

    p = common(sub.add_parser("table", help="build effective and corrector tables"))
    p.add_argument("--model", required=True)
    p.add_argument("--g-max", type=float, default=4.0)
    p.add_argument("--m", type=int, default=9)
    p.add_argument("--n", type=int, default=32)

    p = common(sub.add_parser("solve", help="solve one boundary value problem"))
    p.add_argument("--model", required=True)
    p.add_argument("--eps", type=harness._parse_eps, default=0.0,
                   help="period (1/k); 0 solves the homogenized problem")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--F", default="zero")
    p.add_argument("--g", default="zero")

    for name in ("rates", "excess", "lipschitz", "integrability"):
        common(sub.add_parser(name, help=f"{name} study from a config file"), config=True)

    p = common(sub.add_parser("verify", help="run the acceptance suite"))
    p.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    return parser


def _out(args, default: str) -> Path:
    d = Path(args.output or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _cmd_cell(args) -> int:
    model = get_model(args.model)
    sol = solve_corrector(model, args.xi, args.n)
    mean_n2, mean_g2 = corrector_energy(sol)
    print(f"A_eff = ({sol.A_eff[0]:.4f}, {sol.A_eff[1]:.4f})")
    print(f"mean |N|^2 = {mean_n2:.6e}  mean |grad N|^2 = {mean_g2:.6f}  "
          f"||N||_L2 = {np.sqrt(mean_n2):.6e}")
    print(f"iterations = {sol.report.iterations}")
    if args.output:
        out = _out(args, ".")
        write_field_csv(out / "N.csv", sol.mesh, sol.N)
        (out / "report.json").write_text(json.dumps(
            {"xi": list(map(float, args.xi)), "A_eff": list(map(float, sol.A_eff)),
             "mean_N2": mean_n2, "mean_gradN2": mean_g2, "solver": sol.report.to_dict()},
            indent=2))
    return EXIT_OK


def _cmd_table(args) -> int:
    model = get_model(args.model)
    eff, ctab = build_effective_table(model, args.g_max, args.m, args.n, jobs=args.jobs)
    out = _out(args, f"tables_{args.model}")
    save_tables(out, eff, ctab)
    print(f"mu0 >= {eff.mu0:.6f}  lipschitz <= {eff.lipschitz:.6f}  -> {out}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    spec = BvpSpec(args.model, args.eps, args.n, F=args.F, g=args.g)
    if args.eps > 0:
        u, rep = solve_multiscale(spec)
    else:
        try:
            eff = closed_form_effective(args.model)
        except InvalidArgumentError:
            eff = harness.get_tables(args.model, 2.0, 17, 32, jobs=args.jobs)[0]
        u, rep = solve_homogenized(spec, eff)
    out = _out(args, "solve_out")
    write_field_csv(out / "u.csv", build_mesh(args.n), u)
    (out / "report.json").write_text(rep.to_json())
    print(f"{rep.iterations} iterations, final residual {rep.residual_history[-1]:.3e} -> {out}")
    return EXIT_OK


def _cmd_study(args) -> int:
    cfg = harness.StudyConfig.from_json(args.config)
    cfg.study = args.command
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.jobs = args.jobs
    cfg.validate()
    result = harness.run_study(cfg, args.output)
    crit = result.criteria() if isinstance(result, harness.RateStudy) else result["criteria"]
    for name, ok in crit.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .acceptance import run_all
    results = run_all(args.only, workdir=args.output)
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


COMMANDS = {"cell": _cmd_cell, "table": _cmd_table, "solve": _cmd_solve,
            "rates": _cmd_study, "excess": _cmd_study, "lipschitz": _cmd_study,
            "integrability": _cmd_study, "verify": _cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidArgumentError, RangeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
