# main.py

import argparse
import hashlib
import json
import sys

from Core.errors import CapMinkError, InvalidConfig, NoConvergence
from Core.measures import lp_capacitary_measure, measure_from_dict, measure_to_dict, total_mass
from Managers.capacity_engine import equilibrium_potential, measure_with_capacity
from Managers.check_harness import CHECKS, HarnessOptions
from Managers.minkowski_solver import problem5_residual, solve_discrete_lp, solve_discrete_p1
from Utils.config_utils import (
    apply_overrides,
    get_default_config,
    grid_config_from,
    load_config_file,
    solver_config_from,
)
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2, LOG_LEVEL_DEBUG, LOG_LEVEL_WARNING
from Utils.save_utils import (
    body_from_dict,
    body_to_dict,
    read_json,
    save_field_npz,
    write_json,
    write_jsonl,
    write_obj,
)

logger = get_logger()

EXIT_OK = 0
EXIT_IO = 4


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--p", type=float, help="L_p exponent (default from config)")
    common.add_argument("--pexp", type=float, help="capacity exponent in (1, n)")
    common.add_argument("--grid-h", dest="grid_h", type=float, help="grid spacing")
    common.add_argument("--grid-R", dest="grid_R", type=float, help="half-width of the computational box")
    common.add_argument("--kkt-tol", dest="kkt_tol", type=float, help="solver KKT tolerance")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="worker thread cap")
    common.add_argument("--boundary", dest="boundary_mode", choices=["zero", "asymptotic"],
                        help="outer boundary treatment")
    common.add_argument("--format", choices=["json", "obj"], default="json", help="output format")
    common.add_argument("--config", help="JSON file overlaying Config/settings.json")
    common.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")
    common.add_argument("--debug", type=int, choices=[1, 2, 3], default=1,
                        help="Debug level (1=Basic, 2=Medium, 3=Verbose)")
    common.add_argument("--log", action="store_true", help="Enable file logging")
    common.add_argument("--no-color", action="store_true", help="Disable colored output")

    parser = argparse.ArgumentParser(prog="capmink", description="Discrete L_p Minkowski problems for p-capacity")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", parents=[common], help="solve for a polytope from a measure")
    solve.add_argument("input", help="measure JSON")
    solve.add_argument("output", nargs="?", help="result path (stdout if omitted)")
    solve.add_argument("--mesh", help="also write an OBJ mesh of the solution")

    capacity = sub.add_parser("capacity", parents=[common], help="capacity of a body")
    capacity.add_argument("input", help="body JSON")
    capacity.add_argument("output", nargs="?")
    capacity.add_argument("--field", help="save the equilibrium potential as .npz")

    measure = sub.add_parser("measure", parents=[common], help="L_p capacitary measure of a body")
    measure.add_argument("input", help="body JSON")
    measure.add_argument("output", nargs="?")

    check = sub.add_parser("check", parents=[common], help="run harness checks, JSON-lines output")
    check.add_argument("input", nargs="?", help="body or measure JSON (omit for the corpus)")
    check.add_argument("output", nargs="?")
    check.add_argument("--checks", help="comma-separated check names (default: all that fit the input)")
    return parser


def configure_logging(args):
    level = logger.configure_from_env(default_level=LOG_LEVEL_WARNING)
    if args.verbose:
        level = LOG_LEVEL_DEBUG
    logger.configure(verbose=level <= LOG_LEVEL_DEBUG, console_level=level, debug_level=args.debug,
                     colored_output=not args.no_color and sys.stderr.isatty())
    if args.log:
        logger.configure_file_logging(enabled=True, level=LOG_LEVEL_DEBUG)


def resolve_config(args):
    config = get_default_config()
    if args.config:
        config = apply_overrides(config, load_config_file(args.config))
    flags = {key: getattr(args, key) for key in ("p", "pexp", "grid_h", "grid_R", "kkt_tol", "seed",
                                                  "threads", "boundary_mode")}
    return apply_overrides(config, flags)


def input_digest(path, config):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    h.update(json.dumps(config, sort_keys=True, default=str).encode())
    return h.hexdigest()


def emit(path, payload):
    if path:
        write_json(path, payload)
    else:
        print(json.dumps(payload, sort_keys=True, indent=2, default=str))


# ─── Subcommands ───

def cmd_solve(args, config):
    mu = measure_from_dict(read_json(args.input))
    cfg = solver_config_from({**config, "n": mu.n})
    p, pexp = config["p"], config["pexp"]
    result = solve_discrete_p1(mu, pexp, cfg) if p == 1 else solve_discrete_lp(mu, p, pexp, cfg)
    payload = result.to_dict()
    payload["digest"] = input_digest(args.input, config)
    payload["problem5_residual"] = problem5_residual(result.polytope, mu, p, result.masses, result.capacity)
    logger.info("Main", f"solved: capacity={result.capacity:.6g}, kkt={result.kkt_residual:.3g}, "
                        f"iterations={result.iterations}")
    if args.format == "obj":
        if not args.output:
            raise InvalidConfig("OBJ output needs an output path")
        write_obj(args.output, result.polytope)
    else:
        emit(args.output, payload)
    if args.mesh:
        write_obj(args.mesh, result.polytope)
    return EXIT_OK


def _load_body(args, config):
    if args.format == "obj":
        raise InvalidConfig(f"--format obj is only available for solve, not {args.command}")
    K = body_from_dict(read_json(args.input))
    return K, grid_config_from({**config, "n": K.n})


def cmd_capacity(args, config):
    K, grid = _load_body(args, config)
    if args.field:
        field = equilibrium_potential(K, grid, config["pexp"])
        if not save_field_npz(args.field, field):
            return EXIT_IO
    result, _ = measure_with_capacity(K, grid, config["pexp"])
    payload = {**result.to_dict(), "digest": input_digest(args.input, config), "body": body_to_dict(K)}
    logger.info("Main", f"capacity {result.value:.6g} (error estimate {result.error_estimate:.3g})")
    emit(args.output, payload)
    return EXIT_OK


def cmd_measure(args, config):
    K, grid = _load_body(args, config)
    mu = lp_capacitary_measure(K, config["p"], grid, config["pexp"])
    payload = {**measure_to_dict(mu), "p": config["p"], "pexp": config["pexp"],
               "total_mass": total_mass(mu), "digest": input_digest(args.input, config)}
    emit(args.output, payload)
    return EXIT_OK


def cmd_check(args, config):
    if args.input:
        data = read_json(args.input)
        kind = "measure" if isinstance(data, dict) and "atoms" in data else "body"
        subject = measure_from_dict(data) if kind == "measure" else body_from_dict(data)
        n = subject.n
    else:
        kind, subject, n = "none", None, config["n"]
    options = HarnessOptions(solver=solver_config_from({**config, "n": n}), p=config["p"], pexp=config["pexp"],
                             seed=config["seed"])
    names = args.checks.split(",") if args.checks else [k for k, (needs, _) in CHECKS.items() if needs == kind]
    reports = []
    for name in names:
        if name not in CHECKS:
            raise InvalidConfig(f"unknown check '{name}' (known: {', '.join(sorted(CHECKS))})")
        needs, run = CHECKS[name]
        if needs != kind:
            raise InvalidConfig(f"check '{name}' needs a {needs} input")
        logger.debug_at_level(DEBUG_L1, "Main", f"running check {name}")
        reports.extend(run(subject, options))
    records = [r.to_dict() for r in reports]
    if args.output:
        write_jsonl(args.output, records)
    else:
        for record in records:
            print(json.dumps(record, sort_keys=True, default=str))
    failed = [r.name for r in reports if not r.passed]
    logger.info("Main", f"{len(reports) - len(failed)}/{len(reports)} checks passed"
                        + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "capacity": cmd_capacity, "measure": cmd_measure, "check": cmd_check}


def run_cli(argv=None):
    """Parse argv, run one subcommand and map failures to exit codes (2 validation, 3 no convergence, 4 I/O)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else EXIT_OK
    configure_logging(args)
    try:
        config = resolve_config(args)
        logger.debug_at_level(DEBUG_L2, "Main", f"Configuration resolved: {len(config)} settings")
        return COMMANDS[args.command](args, config)
    except NoConvergence as e:
        logger.error("Main", f"no convergence: {e}")
        print(f"capmink: no convergence: {e}", file=sys.stderr)
        return e.exit_code
    except CapMinkError as e:
        logger.error("Main", f"{type(e).__name__}: {e}")
        print(f"capmink: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error("Main", f"I/O error: {e}")
        print(f"capmink: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    finally:
        logger.shutdown()


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
