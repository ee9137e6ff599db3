"""
Command-line front end: dls check | plan | simulate | sweep.

Exit codes: 0 success, 2 parse or consistency error, 3 planner
non-convergence, 4 simulator failure.
"""
import argparse
import logging
import math
import sys
from logging.handlers import QueueHandler, QueueListener
from pathlib import Path
from queue import SimpleQueue
from typing import Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from .config import RuntimeConfig
from .contact_sim import check_mode, normal_forces, rollout
from .errors import DLSError, InfeasibleGoalError, InvalidParameterError, ScenarioParseError, SlipResolutionError
from .frames import Twist
from .limit_surface import (
    MiddleFactor,
    decomposed_margins,
    decomposed_quadratic_margin,
    hat,
    leading_coeff_margin,
    nonconvex_fallback_margin,
    slip_free_twist_margin,
    slip_free_wrench_margin,
    soc_constant,
    soc_equal_radius_margin,
    twist_to_wrench,
)
from .planner import baseline_plan, certify_plan, plan
from .plotting import write_trajectory_svg
from .scenario_io import (
    format_plan_summary,
    format_rollout_summary,
    load_scenario,
    load_suite,
    read_plan_csv,
    write_plan_csv,
    write_rollout_csv,
)
from .sweep import run_sweep

logger = logging.getLogger("dls")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NOT_CONVERGED = 3
EXIT_ORACLE = 4


def setup_logging(verbose: bool = False) -> QueueListener:
    """Route the dls logger through a queue to stderr; the caller stops the listener"""
    log_queue: SimpleQueue = SimpleQueue()
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(message)s"))
    listener = QueueListener(log_queue, console_handler)

    root = logging.getLogger("dls")
    for handler in list(root.handlers):
        if isinstance(handler, QueueHandler):
            root.removeHandler(handler)
    root.addHandler(QueueHandler(log_queue))
    root.setLevel(logging.DEBUG if verbose else RuntimeConfig.get_log_level())
    listener.start()
    return listener


def _solver_overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {
        "seed": getattr(args, "seed", None),
        "slip_margin_eps": getattr(args, "margin_eps", None),
        "horizon_n": getattr(args, "horizon", None),
    }


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_check(args: argparse.Namespace) -> int:
    sf = load_scenario(args.scenario)
    grasp = sf.to_scenario().grasp
    theta = math.radians(args.theta_deg)
    v = Twist(*args.twist)
    verdict = check_mode(v, grasp, theta)

    lines = [f"twist=({v.v_x:.6g}, {v.v_y:.6g}, {v.omega_z:.6g}) theta_deg={args.theta_deg:g}"]
    if v.is_zero():
        lines.append(f"mode={verdict.mode.value}")
        print("\n".join(lines))
        return EXIT_OK

    a, b = grasp.matrices()
    gl = grasp.gravity_load(theta)
    n_static, n_moving = normal_forces(grasp)
    margins = [
        ("WrenchSpace", slip_free_wrench_margin(twist_to_wrench(a, v), a, b, gl).value),
        ("TwistFull", slip_free_twist_margin(v, a, b, gl).value),
        ("LeadingCoeff", leading_coeff_margin(v, hat(a, n_static), hat(b, n_moving)).value),
        ("LeadingCoeff[inverse]",
         leading_coeff_margin(v, hat(a, n_static), hat(b, n_moving), MiddleFactor.INVERSE).value),
    ]
    if grasp.equal_contacts():
        margins.append(("SocEqualRadius", soc_equal_radius_margin(v, a, grasp.c_ratio(), gl).value))
        if soc_constant(a, grasp.c_ratio(), gl) <= 0.0 and not gl.is_tangentially_free():
            margins.append(("NonconvexFallback", nonconvex_fallback_margin(v, gl).value))
    elif gl.is_tangentially_free():
        margins.append(("DecomposedQuadratic", decomposed_quadratic_margin(v, a, b).value))
    else:
        first, second = decomposed_margins(v, a, b, gl)
        margins += [("DecomposedQuadratic", first.value), ("DecomposedSoc", second.value)]

    for name, value in margins:
        lines.append(f"{name:<22} {value:+.6e} {'ok' if value < 0.0 else 'VIOLATED'}")
    lines.append(f"mode={verdict.mode.value} sticking_margin={verdict.margin:+.6e}")
    print("\n".join(lines))
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    sf = load_scenario(args.scenario)
    scenario = sf.to_scenario()
    cfg = sf.solver_config(**_solver_overrides(args))
    out = _out_dir(args)

    ours = plan(scenario, cfg)
    base = baseline_plan(scenario, cfg)
    write_plan_csv(ours, out / "plan.csv")
    if args.baseline:
        write_plan_csv(base, out / "baseline.csv")
    summary = format_plan_summary(ours, certify_plan(ours, scenario, cfg))
    (out / "plan_summary.txt").write_text(summary, encoding="utf-8")
    title = " ".join(f"{k}={sf.labels[k]}" for k in sorted(sf.labels))
    write_trajectory_svg(out / "trajectory.svg", [base, ours], ours.targets, scenario.grasp.palm_radius, title)
    print(summary, end="")
    return EXIT_OK if ours.converged else EXIT_NOT_CONVERGED


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario).to_scenario()
    p = read_plan_csv(args.plan, scenario)
    out = _out_dir(args)
    try:
        result = rollout(p, scenario.initial_state(), scenario.grasp, p.targets)
    except DLSError:
        raise
    except (ArithmeticError, ValueError, TypeError, np.linalg.LinAlgError) as e:
        raise SlipResolutionError(f"rollout failed with {type(e).__name__}: {e}", math.nan) from e
    write_rollout_csv(result, p.phases, out / "rollout.csv")
    summary = format_rollout_summary(result)
    (out / "rollout_summary.txt").write_text(summary, encoding="utf-8")
    print(summary, end="")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    suite = load_suite(args.suite)
    table, _ = run_sweep(suite, Path(args.out), args.workers, _solver_overrides(args))
    print(table.to_text(), end="")
    return EXIT_OK


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="multi-start seed (default from DLS_SEED or 0)")
    p.add_argument("--margin-eps", type=float, help="required slip margin")
    p.add_argument("--horizon", type=int, help="steps per waypoint segment (even)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dls", description="Dual limit surface grasp planning toolkit")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="print every slip margin and the simulator verdict for one twist")
    p.add_argument("--scenario", required=True)
    p.add_argument("--twist", type=float, nargs=3, metavar=("VX", "VY", "WZ"), default=[0.0, 0.0, 0.0])
    p.add_argument("--theta-deg", type=float, default=0.0, help="object orientation on the static palm")
    p.set_defaults(handler=cmd_check)

    p = sub.add_parser("plan", help="plan a slippage-free trajectory")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", action="store_true", help="also write the straight-line baseline plan")
    _add_solver_flags(p)
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("simulate", help="roll a plan file out in the stick/slip simulator")
    p.add_argument("--scenario", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("sweep", help="run a suite with both planners and tabulate the errors")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, help="process count (default DLS_WORKERS or CPU count)")
    _add_solver_flags(p)
    p.set_defaults(handler=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    listener = setup_logging(args.verbose)
    try:
        return args.handler(args)
    except (ScenarioParseError, InvalidParameterError, InfeasibleGoalError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_PARSE
    except SlipResolutionError as e:
        logger.error(f"Simulator failure: {e}")
        return EXIT_ORACLE
    except DLSError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_PARSE
    finally:
        listener.stop()


if __name__ == "__main__":
    sys.exit(main())
