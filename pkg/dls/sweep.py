"""
Experiment sweep: plan and roll out every suite cell, then aggregate.

Each cell is independent. Cells run in a process pool (or in-process for a
single worker), each result is written atomically to cells/<key>.json, and
the pooled errors go into a results table keyed by object, planner and side.
Pool workers send their log records back to the parent through a process
queue.
"""
import asyncio
import json
import logging
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from logging.handlers import QueueHandler, QueueListener
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import aiofiles
import numpy as np
import pandas as pd

from .config import RuntimeConfig
from .contact_sim import rollout
from .planner import Plan, baseline_plan, certify_plan, evaluate_plan, plan
from .scenario_io import FLOAT_FORMAT, SuiteFile, SweepCell

logger = logging.getLogger("dls")

PLANNERS = ("baseline", "ours")
SIDES = ("top", "bottom")
SIDE_NOTE = "side: top = left (upper) palm chain, bottom = right (lower) palm chain"
RESULT_COLUMNS = ["object", "planner", "side", "rmse_mm", "stdev_mm", "rmse_deg", "stdev_deg", "samples"]


@dataclass
class PlannerOutcome:
    """Rollout of one planner in one cell; errors are (m, rad) per waypoint"""
    slip_events: int
    converged: bool
    worst_margin: Optional[float]
    errors_top: List[List[float]]
    errors_bottom: List[List[float]]


@dataclass
class CellResult:
    key: str
    object_label: str
    path_label: str
    incline_deg: float
    status: str = "ok"
    error: str = ""
    outcomes: Dict[str, PlannerOutcome] = field(default_factory=dict)

    @classmethod
    def failed(cls, cell: SweepCell, error: str) -> "CellResult":
        return cls(cell.key, cell.object_label, cell.path_label, cell.incline_deg, status="failed", error=error)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def _outcome(p: Plan, scenario, cfg) -> PlannerOutcome:
    result = rollout(p, scenario.initial_state(), scenario.grasp, p.targets)
    metrics = evaluate_plan(p, scenario, result)
    worst = certify_plan(p, scenario, cfg) if p.label == "ours" else None
    return PlannerOutcome(
        slip_events=metrics.slip_events,
        converged=p.converged,
        worst_margin=None if worst is None or math.isinf(worst) else worst,
        errors_top=[list(e) for e in metrics.waypoint_errors.left],
        errors_bottom=[list(e) for e in metrics.waypoint_errors.right],
    )


def run_cell(cell: SweepCell, overrides: Optional[Dict[str, Any]] = None) -> CellResult:
    """Plan with both planners and roll each out in the simulator"""
    scenario = cell.scenario_file.to_scenario()
    cfg = cell.scenario_file.solver_config(**(overrides or {}))
    ours = plan(scenario, cfg)
    base = baseline_plan(scenario, cfg)
    result = CellResult(cell.key, cell.object_label, cell.path_label, cell.incline_deg)
    result.outcomes = {"baseline": _outcome(base, scenario, cfg), "ours": _outcome(ours, scenario, cfg)}
    if not ours.converged:
        result.status = "unconverged"
    return result


def _init_worker_logging(log_queue, level: int) -> None:
    """Pool initializer: send the worker's dls records to the parent over a process queue"""
    worker_logger = logging.getLogger("dls")
    worker_logger.handlers = [QueueHandler(log_queue)]
    worker_logger.setLevel(level)
    worker_logger.propagate = False


class _WorkerRecordHandler(logging.Handler):
    """Replays worker records through the parent's own logger and handlers"""

    def emit(self, record: logging.LogRecord) -> None:
        logging.getLogger(record.name).handle(record)


async def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    async with aiofiles.open(tmp, "w", encoding="utf-8") as f:
        await f.write(text)
    os.replace(tmp, path)


async def _dispatch(
    loop: asyncio.AbstractEventLoop,
    pool: Optional[ProcessPoolExecutor],
    cell: SweepCell,
    overrides: Dict[str, Any],
    cell_dir: Path,
) -> CellResult:
    try:
        if pool is None:
            result = run_cell(cell, overrides)
        else:
            result = await loop.run_in_executor(pool, run_cell, cell, overrides)
        logger.info(
            f"Cell {cell.key}: {result.status}, slip events baseline={result.outcomes['baseline'].slip_events} "
            f"ours={result.outcomes['ours'].slip_events}"
        )
    except Exception as e:
        logger.error(f"Cell {cell.key} failed: {type(e).__name__}: {e}")
        result = CellResult.failed(cell, f"{type(e).__name__}: {e}")
    await _write_atomic(cell_dir / f"{cell.key}.json", result.to_json())
    return result


async def _run_cells(
    cells: Sequence[SweepCell], overrides: Dict[str, Any], cell_dir: Path, workers: int
) -> List[CellResult]:
    loop = asyncio.get_running_loop()
    if workers <= 1:
        return [await _dispatch(loop, None, cell, overrides, cell_dir) for cell in cells]

    # spawned workers never inherit the parent's listener thread or its locks
    context = multiprocessing.get_context("spawn")
    log_queue = context.Queue()
    listener = QueueListener(log_queue, _WorkerRecordHandler())
    listener.start()
    try:
        with ProcessPoolExecutor(
            max_workers=workers,
            mp_context=context,
            initializer=_init_worker_logging,
            initargs=(log_queue, logger.getEffectiveLevel()),
        ) as pool:
            return list(await asyncio.gather(*(_dispatch(loop, pool, cell, overrides, cell_dir) for cell in cells)))
    finally:
        listener.stop()
        log_queue.close()
        log_queue.join_thread()


@dataclass(frozen=True)
class ResultsRow:
    object_label: str
    planner: str
    side: str
    rmse_mm: float
    stdev_mm: float
    rmse_deg: float
    stdev_deg: float
    samples: int


class ResultsTable:
    """
    Pooled waypoint errors per (object, planner, side).

    Failed cells are left out for both planners so the comparison stays paired.
    """

    def __init__(self, rows: List[ResultsRow]):
        self.rows = rows

    @classmethod
    def from_cells(cls, cells: Sequence[CellResult]) -> "ResultsTable":
        objects: List[str] = []
        for c in cells:
            if c.object_label not in objects:
                objects.append(c.object_label)

        rows = []
        for obj in objects:
            done = [c for c in cells if c.object_label == obj and c.status != "failed"]
            for planner in PLANNERS:
                for side in SIDES:
                    errors = []
                    for c in done:
                        outcome = c.outcomes[planner]
                        errors.extend(outcome.errors_top if side == "top" else outcome.errors_bottom)
                    trans = np.array([1e3 * e[0] for e in errors])
                    rot = np.degrees([e[1] for e in errors])
                    rows.append(ResultsRow(
                        obj, planner, side,
                        rmse_mm=float(np.sqrt(np.mean(trans ** 2))) if len(errors) else float("nan"),
                        stdev_mm=float(np.std(trans)) if len(errors) else float("nan"),
                        rmse_deg=float(np.sqrt(np.mean(rot ** 2))) if len(errors) else float("nan"),
                        stdev_deg=float(np.std(rot)) if len(errors) else float("nan"),
                        samples=len(errors),
                    ))
        return cls(rows)

    def get(self, object_label: str, planner: str, side: str) -> ResultsRow:
        for row in self.rows:
            if (row.object_label, row.planner, row.side) == (object_label, planner, side):
                return row
        raise KeyError((object_label, planner, side))

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[r.object_label, r.planner, r.side, r.rmse_mm, r.stdev_mm, r.rmse_deg, r.stdev_deg, r.samples]
             for r in self.rows],
            columns=RESULT_COLUMNS,
        )

    def to_text(self) -> str:
        header = f"{'object':<10} {'planner':<9} {'side':<7} {'RMSE (mm)':>10} {'STDEV (mm)':>11} " \
                 f"{'RMSE (deg)':>11} {'STDEV (deg)':>12}"
        lines = [SIDE_NOTE, header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.object_label:<10} {r.planner:<9} {r.side:<7} {r.rmse_mm:>10.3f} {r.stdev_mm:>11.3f} "
                f"{r.rmse_deg:>11.3f} {r.stdev_deg:>12.3f}"
            )
        return "\n".join(lines) + "\n"


def run_sweep(
    suite: SuiteFile,
    out_dir: Path,
    workers: Optional[int] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> Tuple[ResultsTable, List[CellResult]]:
    """Run every cell, write cells/*.json, results.csv and results.txt"""
    out_dir = Path(out_dir)
    cell_dir = out_dir / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    workers = RuntimeConfig.get_workers() if workers is None else workers
    cells = suite.cells()
    logger.info(f"Sweeping {len(cells)} cell(s) with {workers} worker(s)")

    results = asyncio.run(_run_cells(cells, dict(overrides or {}), cell_dir, workers))
    table = ResultsTable.from_cells(results)
    table.to_frame().to_csv(out_dir / "results.csv", index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    (out_dir / "results.txt").write_text(table.to_text(), encoding="utf-8")

    failed = sum(1 for r in results if r.status == "failed")
    unconverged = sum(1 for r in results if r.status == "unconverged")
    if failed or unconverged:
        logger.warning(f"Sweep finished with {failed} failed and {unconverged} unconverged cell(s)")
    else:
        logger.info(f"Sweep finished: {len(results)} cell(s) ok")
    return table, results
