"""
Scenario, suite and plan file codecs.

Scenario and suite files are strict JSON (schema version 1). Lengths are in
meters, masses in kilograms, forces in newtons and angles in degrees; angles
become radians only when a file record is turned into a Scenario. Plan and
rollout tables are CSV in SI units with angles in radians, floats written with
17 significant digits so they read back exactly.
"""
import json
import logging
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pandas as pd

from .contact_sim import GraspConfig, Phase, RolloutResult, SimState
from .errors import DLSError, InvalidParameterError, PlanFileError, ScenarioParseError
from .frames import PlanarPose, Twist
from .limit_surface import ConstraintKind
from .planner import Plan, Scenario, SolverConfig, SlipPolicy

logger = logging.getLogger("dls")

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.17g"

PLAN_COLUMNS = [
    "t", "segment", "phase", "v_x", "v_y", "omega_z", "margin", "margin_kind",
    "left_x", "left_y", "left_theta", "right_x", "right_y", "right_theta",
]

ROLLOUT_COLUMNS = [
    "t", "phase", "mode", "slip", "v_cmd_x", "v_cmd_y", "v_cmd_omega", "v_obj_x", "v_obj_y", "v_obj_omega",
    "residual_norm", "dissipation", "in_workspace",
    "left_x", "left_y", "left_theta", "right_x", "right_y", "right_theta",
]

PathLike = Union[str, Path]


class _Reader:
    """Strict field access over parsed JSON, reporting field paths and source lines"""

    def __init__(self, text: str):
        self.text = text

    def line_of(self, key: str) -> Optional[int]:
        match = re.search(rf'"{re.escape(key)}"\s*:', self.text)
        return self.text.count("\n", 0, match.start()) + 1 if match else None

    def fail(self, message: str, path: str) -> ScenarioParseError:
        return ScenarioParseError(message, field=path, line=self.line_of(path.rsplit(".", 1)[-1].split("[")[0]))

    def table(self, value: Any, path: str, required: Tuple[str, ...], optional: Tuple[str, ...] = ()) -> Dict[str, Any]:
        if not isinstance(value, dict):
            raise self.fail(f"expected an object, got {type(value).__name__}", path)
        unknown = [k for k in value if k not in required and k not in optional]
        if unknown:
            raise self.fail(f"unknown field '{unknown[0]}'", f"{path}.{unknown[0]}" if path else unknown[0])
        missing = [k for k in required if k not in value]
        if missing:
            raise ScenarioParseError(f"missing required field '{missing[0]}'", field=f"{path}.{missing[0]}" if path else missing[0])
        return value

    def number(self, value: Any, path: str) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.fail(f"expected a number, got {json.dumps(value)}", path)
        if not math.isfinite(value):
            raise self.fail("expected a finite number", path)
        return float(value)

    def integer(self, value: Any, path: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.fail(f"expected an integer, got {json.dumps(value)}", path)
        return value

    def boolean(self, value: Any, path: str) -> bool:
        if not isinstance(value, bool):
            raise self.fail(f"expected true or false, got {json.dumps(value)}", path)
        return value

    def string(self, value: Any, path: str) -> str:
        if not isinstance(value, str):
            raise self.fail(f"expected a string, got {json.dumps(value)}", path)
        return value

    def array(self, value: Any, path: str) -> list:
        if not isinstance(value, list):
            raise self.fail(f"expected an array, got {type(value).__name__}", path)
        return value


def _parse_json(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"invalid JSON: {e.msg} (column {e.colno})", line=e.lineno)


@dataclass(frozen=True)
class PoseRecord:
    x: float
    y: float
    theta_deg: float

    @classmethod
    def parse(cls, r: _Reader, value: Any, path: str) -> "PoseRecord":
        t = r.table(value, path, ("x", "y", "theta_deg"))
        return cls(r.number(t["x"], f"{path}.x"), r.number(t["y"], f"{path}.y"),
                   r.number(t["theta_deg"], f"{path}.theta_deg"))

    def to_pose(self) -> PlanarPose:
        return PlanarPose(self.x, self.y, math.radians(self.theta_deg))

    def to_dict(self) -> Dict[str, float]:
        return {"x": self.x, "y": self.y, "theta_deg": self.theta_deg}


@dataclass(frozen=True)
class WaypointRecord:
    left: PoseRecord
    right: PoseRecord

    @classmethod
    def parse(cls, r: _Reader, value: Any, path: str) -> "WaypointRecord":
        t = r.table(value, path, ("left", "right"))
        return cls(PoseRecord.parse(r, t["left"], f"{path}.left"), PoseRecord.parse(r, t["right"], f"{path}.right"))

    def to_target(self) -> Tuple[PlanarPose, PlanarPose]:
        return self.left.to_pose(), self.right.to_pose()

    def to_dict(self) -> Dict[str, Any]:
        return {"left": self.left.to_dict(), "right": self.right.to_dict()}


@dataclass(frozen=True)
class GraspRecord:
    mass: float
    gravity: float
    incline_deg: float
    downhill_alpha_deg: float
    squeeze_force: float
    mu_static_palm: float
    mu_moving_palm: float
    radius_static_palm: float
    radius_moving_palm: float
    palm_radius: float
    pressure_constant: float = 0.6
    moving_palm_below: bool = True

    @classmethod
    def parse(cls, r: _Reader, value: Any, path: str) -> "GraspRecord":
        names = [f.name for f in fields(cls)]
        t = r.table(value, path, tuple(names[:-2]), tuple(names[-2:]))
        kwargs: Dict[str, Any] = {}
        for name in names:
            if name not in t:
                continue
            if name == "moving_palm_below":
                kwargs[name] = r.boolean(t[name], f"{path}.{name}")
            else:
                kwargs[name] = r.number(t[name], f"{path}.{name}")
        return cls(**kwargs)

    def to_grasp(self) -> GraspConfig:
        return GraspConfig(
            mass=self.mass,
            gravity=self.gravity,
            incline_phi=math.radians(self.incline_deg),
            downhill_alpha=math.radians(self.downhill_alpha_deg),
            squeeze_force=self.squeeze_force,
            mu_static_palm=self.mu_static_palm,
            mu_moving_palm=self.mu_moving_palm,
            radius_static_palm=self.radius_static_palm,
            radius_moving_palm=self.radius_moving_palm,
            palm_radius=self.palm_radius,
            pressure_constant=self.pressure_constant,
            moving_palm_below=self.moving_palm_below,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ScenarioRecord:
    start_left: PoseRecord
    start_right: PoseRecord
    goal_left: PoseRecord
    goal_right: PoseRecord
    grasp: GraspRecord
    waypoints: Tuple[WaypointRecord, ...] = ()

    @classmethod
    def parse(cls, r: _Reader, value: Any, path: str) -> "ScenarioRecord":
        poses = ("start_left", "start_right", "goal_left", "goal_right")
        t = r.table(value, path, poses + ("grasp",), ("waypoints",))
        waypoints = tuple(
            WaypointRecord.parse(r, w, f"{path}.waypoints[{k}]")
            for k, w in enumerate(r.array(t.get("waypoints", []), f"{path}.waypoints"))
        )
        return cls(
            *(PoseRecord.parse(r, t[name], f"{path}.{name}") for name in poses),
            grasp=GraspRecord.parse(r, t["grasp"], f"{path}.grasp"),
            waypoints=waypoints,
        )

    def to_scenario(self) -> Scenario:
        return Scenario(
            start_left=self.start_left.to_pose(),
            start_right=self.start_right.to_pose(),
            goal_left=self.goal_left.to_pose(),
            goal_right=self.goal_right.to_pose(),
            grasp=self.grasp.to_grasp(),
            waypoints=tuple(w.to_target() for w in self.waypoints),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "start_left": self.start_left.to_dict(),
            "start_right": self.start_right.to_dict(),
            "goal_left": self.goal_left.to_dict(),
            "goal_right": self.goal_right.to_dict(),
            "waypoints": [w.to_dict() for w in self.waypoints],
            "grasp": self.grasp.to_dict(),
        }


_SOLVER_FIELDS = {f.name: f.default for f in fields(SolverConfig)}


def _parse_solver(r: _Reader, value: Any, path: str) -> Dict[str, Any]:
    t = r.table(value, path, (), tuple(_SOLVER_FIELDS))
    overrides: Dict[str, Any] = {}
    for name in _SOLVER_FIELDS:
        if name not in t:
            continue
        default = _SOLVER_FIELDS[name]
        where = f"{path}.{name}"
        if isinstance(default, SlipPolicy):
            raw = r.string(t[name], where)
            if raw not in {p.value for p in SlipPolicy}:
                raise r.fail(f"unknown slip policy '{raw}'", where)
            overrides[name] = raw
        elif isinstance(default, int):
            overrides[name] = r.integer(t[name], where)
        else:
            overrides[name] = r.number(t[name], where)
    return overrides


def _parse_labels(r: _Reader, value: Any, path: str) -> Dict[str, str]:
    if not isinstance(value, dict):
        raise r.fail(f"expected an object, got {type(value).__name__}", path)
    return {k: r.string(v, f"{path}.{k}") for k, v in value.items()}


def _canonical_json(data: Dict[str, Any]) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class ScenarioFile:
    """Scenario file contents in file units"""
    scenario: ScenarioRecord
    solver: Dict[str, Any] = field(default_factory=dict)
    labels: Dict[str, str] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_scenario(self) -> Scenario:
        return self.scenario.to_scenario()

    def solver_config(self, **overrides) -> SolverConfig:
        """SolverDefaults, then this file's solver table, then explicit (e.g. CLI) overrides"""
        merged = dict(self.solver)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return SolverConfig.from_defaults(**merged)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "labels": {k: self.labels[k] for k in sorted(self.labels)},
            "scenario": self.scenario.to_dict(),
            "solver": {k: self.solver[k] for k in _SOLVER_FIELDS if k in self.solver},
        }

    def to_json(self) -> str:
        return _canonical_json(self.to_dict())


def _check_schema(r: _Reader, t: Dict[str, Any]) -> None:
    version = r.integer(t["schema_version"], "schema_version")
    if version != SCHEMA_VERSION:
        raise r.fail(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})", "schema_version")


def parse_scenario_text(text: str) -> ScenarioFile:
    r = _Reader(text)
    t = r.table(_parse_json(text), "", ("schema_version", "scenario"), ("solver", "labels"))
    _check_schema(r, t)
    sf = ScenarioFile(
        scenario=ScenarioRecord.parse(r, t["scenario"], "scenario"),
        solver=_parse_solver(r, t.get("solver", {}), "solver"),
        labels=_parse_labels(r, t.get("labels", {}), "labels"),
    )
    try:
        sf.to_scenario()
        sf.solver_config()
    except InvalidParameterError as e:
        raise ScenarioParseError(str(e), field="scenario")
    return sf


def load_scenario(path: PathLike) -> ScenarioFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioParseError(f"cannot read scenario file {path}: {e}")
    try:
        return parse_scenario_text(text)
    except ScenarioParseError as e:
        raise ScenarioParseError(f"{path}: {e.message}", field=e.field, line=e.line)


def dump_scenario(sf: ScenarioFile, path: PathLike) -> None:
    Path(path).write_text(sf.to_json(), encoding="utf-8")


@dataclass(frozen=True)
class ObjectRecord:
    label: str
    radius_static_palm: float
    radius_moving_palm: float


@dataclass(frozen=True)
class PathRecord:
    label: str
    start_left: PoseRecord
    start_right: PoseRecord
    waypoints: Tuple[WaypointRecord, ...]


@dataclass(frozen=True)
class SweepCell:
    """One (object, path, incline) combination of a suite"""
    object_label: str
    path_label: str
    incline_deg: float
    scenario_file: ScenarioFile

    @property
    def key(self) -> str:
        return f"{self.object_label}_{self.path_label}_{self.incline_deg:g}deg"


@dataclass(frozen=True)
class SuiteFile:
    grasp: GraspRecord
    inclines_deg: Tuple[float, ...]
    objects: Tuple[ObjectRecord, ...]
    paths: Tuple[PathRecord, ...]
    solver: Dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def cells(self) -> List[SweepCell]:
        """Expand to cells, ordered by object, then path, then incline"""
        cells = []
        for obj in self.objects:
            for path in self.paths:
                for incline in self.inclines_deg:
                    grasp = GraspRecord(**{
                        **self.grasp.to_dict(),
                        "incline_deg": incline,
                        "radius_static_palm": obj.radius_static_palm,
                        "radius_moving_palm": obj.radius_moving_palm,
                    })
                    goal = path.waypoints[-1]
                    record = ScenarioRecord(path.start_left, path.start_right, goal.left, goal.right, grasp,
                                            path.waypoints)
                    labels = {"object": obj.label, "path": path.label, "incline_deg": f"{incline:g}"}
                    cells.append(SweepCell(obj.label, path.label, incline,
                                           ScenarioFile(record, dict(self.solver), labels)))
        return cells


def parse_suite_text(text: str) -> SuiteFile:
    r = _Reader(text)
    t = r.table(_parse_json(text), "", ("schema_version", "grasp", "inclines_deg", "objects", "paths"), ("solver",))
    _check_schema(r, t)

    objects = []
    for k, value in enumerate(r.array(t["objects"], "objects")):
        where = f"objects[{k}]"
        o = r.table(value, where, ("label", "radius_static_palm", "radius_moving_palm"))
        objects.append(ObjectRecord(
            r.string(o["label"], f"{where}.label"),
            r.number(o["radius_static_palm"], f"{where}.radius_static_palm"),
            r.number(o["radius_moving_palm"], f"{where}.radius_moving_palm"),
        ))

    paths = []
    for k, value in enumerate(r.array(t["paths"], "paths")):
        where = f"paths[{k}]"
        p = r.table(value, where, ("label", "start_left", "start_right", "waypoints"))
        waypoints = tuple(
            WaypointRecord.parse(r, w, f"{where}.waypoints[{j}]")
            for j, w in enumerate(r.array(p["waypoints"], f"{where}.waypoints"))
        )
        if not waypoints:
            raise r.fail("a path needs at least one waypoint", f"{where}.waypoints")
        paths.append(PathRecord(
            r.string(p["label"], f"{where}.label"),
            PoseRecord.parse(r, p["start_left"], f"{where}.start_left"),
            PoseRecord.parse(r, p["start_right"], f"{where}.start_right"),
            waypoints,
        ))

    suite = SuiteFile(
        grasp=GraspRecord.parse(r, t["grasp"], "grasp"),
        inclines_deg=tuple(r.number(v, f"inclines_deg[{k}]") for k, v in enumerate(r.array(t["inclines_deg"], "inclines_deg"))),
        objects=tuple(objects),
        paths=tuple(paths),
        solver=_parse_solver(r, t.get("solver", {}), "solver"),
    )
    try:
        for cell in suite.cells():
            cell.scenario_file.to_scenario()
    except InvalidParameterError as e:
        raise ScenarioParseError(str(e), field="grasp")
    return suite


def load_suite(path: PathLike) -> SuiteFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioParseError(f"cannot read suite file {path}: {e}")
    try:
        return parse_suite_text(text)
    except ScenarioParseError as e:
        raise ScenarioParseError(f"{path}: {e.message}", field=e.field, line=e.line)


def _pose_columns(prefix: str, pose: PlanarPose) -> Dict[str, float]:
    return {f"{prefix}_x": pose.x, f"{prefix}_y": pose.y, f"{prefix}_theta": pose.theta}


def _segment_of(t: int, segment_ends: List[int]) -> int:
    for k, end in enumerate(segment_ends):
        if t < end:
            return k
    return max(0, len(segment_ends) - 1)


def plan_to_frame(p: Plan) -> pd.DataFrame:
    """One row per step; poses are the predicted poses after the step"""
    rows = []
    for t, (twist, phase) in enumerate(zip(p.twists, p.phases)):
        after = p.predicted_states[t + 1]
        margin = p.margins[t] if t < len(p.margins) else None
        kind = p.margin_kinds[t] if t < len(p.margin_kinds) else None
        rows.append({
            "t": t,
            "segment": _segment_of(t, p.segment_ends),
            "phase": phase.value,
            "v_x": twist.v_x,
            "v_y": twist.v_y,
            "omega_z": twist.omega_z,
            "margin": float("nan") if margin is None else margin,
            "margin_kind": "" if kind is None else kind.value,
            **_pose_columns("left", after.pose_obj_in_left),
            **_pose_columns("right", after.pose_obj_in_right),
        })
    return pd.DataFrame(rows, columns=PLAN_COLUMNS)


def _write_frame(df: pd.DataFrame, path: PathLike) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_plan_csv(p: Plan, path: PathLike) -> None:
    _write_frame(plan_to_frame(p), path)


def read_plan_csv(path: PathLike, scenario: Scenario) -> Plan:
    """
    Read a plan table back against its scenario.

    The step count per segment must be the same even number for every segment
    and the segment count must match the scenario's waypoints.
    """
    try:
        df = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, dtype={"phase": str, "margin_kind": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise PlanFileError(f"cannot read plan file {path}: {e}")

    if list(df.columns) != PLAN_COLUMNS:
        extra = [c for c in df.columns if c not in PLAN_COLUMNS]
        missing = [c for c in PLAN_COLUMNS if c not in df.columns]
        raise PlanFileError(f"plan columns must be {', '.join(PLAN_COLUMNS)}", field=(extra or missing or ["columns"])[0], line=1)

    targets = scenario.targets()
    state = scenario.initial_state()
    twists: List[Twist] = []
    phases: List[Phase] = []
    states = [state]
    margins: List[Optional[float]] = []
    kinds: List[Optional[ConstraintKind]] = []
    segments: List[int] = []

    for t, row in enumerate(df.itertuples(index=False)):
        line = t + 2
        try:
            if int(row.t) != t:
                raise PlanFileError(f"expected step {t}, found {row.t}", field="t", line=line)
            phase = Phase(row.phase)
            if phase is not Phase.for_step(t):
                raise PlanFileError(f"phase {phase.value} breaks the alternation schedule", field="phase", line=line)
            twist = Twist(float(row.v_x), float(row.v_y), float(row.omega_z))
            left = PlanarPose(float(row.left_x), float(row.left_y), float(row.left_theta))
            right = PlanarPose(float(row.right_x), float(row.right_y), float(row.right_theta))
            margins.append(None if row.margin == "" else float(row.margin))
            kinds.append(None if row.margin_kind == "" else ConstraintKind(row.margin_kind))
            segments.append(int(row.segment))
        except PlanFileError:
            raise
        except (ValueError, TypeError, DLSError) as e:
            raise PlanFileError(f"malformed plan row: {e}", line=line)
        twists.append(twist)
        phases.append(phase)
        states.append(SimState(left, right, phase.moving_palm.other))

    if not twists:
        segment_ends = [0] * len(targets)
    else:
        counts = [segments.count(k) for k in range(max(segments) + 1)]
        if segments != sorted(segments) or segments[0] != 0 or 0 in counts:
            raise PlanFileError("segment numbers must start at 0 and increase without gaps", field="segment")
        if len(counts) != len(targets):
            raise PlanFileError(
                f"plan has {len(counts)} segment(s) but the scenario has {len(targets)} waypoint(s)", field="segment"
            )
        if len(set(counts)) != 1 or counts[0] % 2:
            raise PlanFileError(f"every segment needs the same even number of steps, got {counts}", field="segment")
        segment_ends = [counts[0] * (k + 1) for k in range(len(counts))]

    return Plan(
        twists=twists,
        phases=phases,
        predicted_states=states,
        objective_value=float("nan"),
        converged=True,
        margins=margins,
        margin_kinds=kinds,
        segment_ends=segment_ends,
        targets=targets,
        label="file",
    )


def rollout_to_frame(result: RolloutResult, phases: List[Phase]) -> pd.DataFrame:
    rows = []
    for t, record in enumerate(result.records):
        rows.append({
            "t": t,
            "phase": phases[t].value,
            "mode": record.mode.value,
            "slip": int(record.mode.is_slip_event and not record.v_command.is_zero()),
            "v_cmd_x": record.v_command.v_x,
            "v_cmd_y": record.v_command.v_y,
            "v_cmd_omega": record.v_command.omega_z,
            "v_obj_x": record.v_object.v_x,
            "v_obj_y": record.v_object.v_y,
            "v_obj_omega": record.v_object.omega_z,
            "residual_norm": record.residual_norm,
            "dissipation": record.dissipation,
            "in_workspace": int(record.in_workspace),
            **_pose_columns("left", record.state.pose_obj_in_left),
            **_pose_columns("right", record.state.pose_obj_in_right),
        })
    return pd.DataFrame(rows, columns=ROLLOUT_COLUMNS)


def write_rollout_csv(result: RolloutResult, phases: List[Phase], path: PathLike) -> None:
    _write_frame(rollout_to_frame(result, phases), path)


def format_plan_summary(p: Plan, worst_margin: float) -> str:
    return (
        f"objective={p.objective_value:.17g} converged={str(p.converged).lower()} "
        f"iterations={p.iterations} steps={len(p.twists)} worst_margin={worst_margin:.17g}\n"
    )


def format_rollout_summary(result: RolloutResult) -> str:
    (tl, rl), (tr, rr) = result.final_error_left, result.final_error_right
    return (
        f"slip_events={result.slip_events} "
        f"final_error_left_mm={1e3 * tl:.6g} final_error_left_deg={math.degrees(rl):.6g} "
        f"final_error_right_mm={1e3 * tr:.6g} final_error_right_deg={math.degrees(rr):.6g} "
        f"max_residual_N={max(result.residual_norms, default=0.0):.3g} workspace_exits={result.workspace_exits}\n"
    )
