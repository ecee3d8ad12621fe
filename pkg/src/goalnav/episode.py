"""Episode orchestration: the closed observe-think-act loop per step,
success/SPL/SR metrics, and the ablation batch runner.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, OracleError, SelectionError
from .geometry import CameraModel, PolarAction, Pose, planar_distance, wrap_angle
from .memory import (
    CellState,
    ExplorationAreaMap,
    ExplorationValueMap,
    Frame,
    SlidingWindow,
    fuse_value,
    mark_observation,
    push_frame,
    read_direction_scores,
    render_area_map,
)
from .perception import GoalBundle, NavOracle, StepContext
from .policy import (
    CandidateSet,
    IntegratedViews,
    analyze_observation,
    compute_traversable,
    decide_stop,
    locate_goal,
    sample_candidates,
    select_action,
    select_direction,
    update_subgoal,
)
from .recovery import (
    PhaseGoal,
    ReviewState,
    multi_step_review,
    room_exit_bias,
    two_step_review,
)
from .render import stitch_panorama, view_raster
from .simworld import (
    DIRECTIONS,
    SceneSpec,
    apply_action,
    geodesic_shortest_path,
    render_panorama,
    sweep_observation,
)

STOP_GOAL = "goal_stop"
STOP_CAP = "step_cap"
STOP_BLOCKED = "blocked_abort"


@dataclass(frozen=True)
class Toggles:
    """Module on/off switches for ablation runs."""

    review_two_step: bool = True
    review_room: bool = True
    review_floor: bool = True
    common_sense: bool = True
    value_map: bool = True


@dataclass(frozen=True)
class RunConfig:
    """Thresholds and knobs of one run; every value has a pinned default."""

    t_g: float = 1.0  # success radius, meters
    t_o: float = 3.0  # observation distance for Explored marking
    t_h: float = 0.2  # traversable height threshold
    t_s: float = 1.0  # stop distance to the goal fix
    t_sim: float = 0.95  # frame similarity threshold for stuck detection
    t_e: int = 60  # steps on a floor before the floor-exit trigger
    t_max: int = 100  # episode step cap
    l_w: int = 1  # sliding-window capacity
    alpha: float = 0.7  # EMA weight on the current score
    angular_interval: float = math.radians(10.0)
    shrink: float = 0.9
    sector_radius: float = 3.0
    value_read_radius: float = 1.0
    move_epsilon: float = 0.05
    room_explored_threshold: float = 0.95
    min_step: float = 0.5
    frame_value_range: float = 2.0
    exclusion_radius: float = 3.0
    blocked_abort_limit: int = 5
    max_sensor_range: float = 10.0
    camera_fov: float = math.radians(60.0)
    camera_columns: int = 31
    camera_pitch: float = math.radians(-30.0)
    seed: int = 0
    toggles: Toggles = field(default_factory=Toggles)

    def __post_init__(self):
        for name in ("t_g", "t_o", "t_h", "t_s", "t_sim", "alpha", "shrink", "min_step"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.l_w < 1:
            raise ConfigError("l_w must be >= 1")

    def camera(self) -> CameraModel:
        return CameraModel(self.camera_fov, self.camera_columns, self.camera_pitch)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["toggles"] = asdict(self.toggles)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        if "toggles" in data:
            tdata = data["toggles"]
            tknown = {f.name for f in fields(Toggles)}
            tunknown = set(tdata) - tknown
            if tunknown:
                raise ConfigError(f"unknown toggle keys: {sorted(tunknown)}")
            data["toggles"] = Toggles(**tdata)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad run config: {exc}") from exc

    def with_toggles(self, **kwargs) -> "RunConfig":
        return replace(self, toggles=replace(self.toggles, **kwargs))


@dataclass(frozen=True)
class EpisodeSpec:
    """Start pose plus goal category for one episode on a given scene."""

    start: Pose
    goal: str
    scene_id: str = ""

    def to_dict(self) -> dict:
        return {
            "start": {
                "x": self.start.x,
                "y": self.start.y,
                "floor": self.start.floor,
                "heading": self.start.heading,
            },
            "goal": self.goal,
            "scene_id": self.scene_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeSpec":
        s = data["start"]
        return cls(
            start=Pose(float(s["x"]), float(s["y"]), int(s.get("floor", 0)), heading=float(s.get("heading", 0.0))),
            goal=str(data["goal"]),
            scene_id=str(data.get("scene_id", "")),
        )


@dataclass
class StepRecord:
    step: int
    pose: Pose
    raw_scores: dict
    fused_scores: dict
    selected_direction: int
    phase: str
    subgoal: str
    stuck: bool
    excluded: list
    n_candidates: int
    action_range: float
    action_bearing: float
    new_pose: Pose
    displacement: float
    collided: bool
    floor_changed: bool
    goal_fix: tuple | None
    blocked: bool

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "pose": [self.pose.x, self.pose.y, self.pose.floor, self.pose.heading],
            "raw_scores": {str(k): self.raw_scores[k] for k in sorted(self.raw_scores)},
            "fused_scores": {str(k): self.fused_scores[k] for k in sorted(self.fused_scores)},
            "selected_direction": self.selected_direction,
            "phase": self.phase,
            "subgoal": self.subgoal,
            "stuck": self.stuck,
            "excluded": sorted(self.excluded),
            "n_candidates": self.n_candidates,
            "action": [self.action_range, self.action_bearing],
            "new_pose": [self.new_pose.x, self.new_pose.y, self.new_pose.floor, self.new_pose.heading],
            "displacement": self.displacement,
            "collided": self.collided,
            "floor_changed": self.floor_changed,
            "goal_fix": list(self.goal_fix) if self.goal_fix is not None else None,
            "blocked": self.blocked,
        }


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    path_length: float
    shortest_length: float | None
    spl: float
    stop_reason: str
    final_pose: Pose
    goal_distance: float | None
    trace: list[StepRecord] = field(default_factory=list)
    oracle_error: str = ""

    def to_record(self) -> dict:
        return {
            "success": self.success,
            "steps": self.steps,
            "path_length": self.path_length,
            "shortest_length": self.shortest_length,
            "spl": self.spl,
            "stop_reason": self.stop_reason,
            "final_pose": [self.final_pose.x, self.final_pose.y, self.final_pose.floor],
            "goal_distance": self.goal_distance,
            "oracle_error": self.oracle_error,
        }


_ALLOWED_TRANSITIONS = {
    CellState.UNKNOWN: {CellState.UNKNOWN, CellState.EXPLORED, CellState.FRONTIER, CellState.UNREACHABLE},
    CellState.FRONTIER: {CellState.FRONTIER, CellState.EXPLORED, CellState.UNREACHABLE},
    CellState.EXPLORED: {CellState.EXPLORED, CellState.UNREACHABLE},
    CellState.UNREACHABLE: {CellState.UNREACHABLE},
}


class EpisodeRunner:
    """Steps one episode: observe, update memory, review, decide, act."""

    def __init__(
        self,
        scene: SceneSpec,
        spec: EpisodeSpec,
        oracle: NavOracle,
        config: RunConfig,
        strict_map_checks: bool = False,
    ):
        start_cell = scene.cell_of(spec.start.x, spec.start.y, spec.start.floor)
        if not scene.is_traversable(start_cell.floor, start_cell.col, start_cell.row):
            raise ConfigError(f"episode start cell {tuple(start_cell)} is not traversable")
        self.scene = scene
        self.spec = spec
        self.oracle = oracle
        self.config = config
        self.camera = config.camera()
        self.pose = Pose(
            spec.start.x,
            spec.start.y,
            spec.start.floor,
            scene.surface(start_cell.floor, start_cell.col, start_cell.row),
            spec.start.heading,
        )
        self.area_map = ExplorationAreaMap.for_scene(scene)
        self.value_map = ExplorationValueMap.for_scene(scene)
        self.window = SlidingWindow(config.l_w)
        self.review = ReviewState()
        self.subgoal = ""
        self.trace: list[StepRecord] = []
        self.blocked_streak = 0
        self.floor_changed_last = False
        self.stop_reason: str | None = None
        self.strict_map_checks = strict_map_checks
        self.map_violations = 0

    # -- helpers -----------------------------------------------------------

    def _goal_cells(self):
        return self.scene.goal_cells(self.spec.goal)

    def _goal_distance(self, pose: Pose) -> float | None:
        best = None
        for cell in self._goal_cells():
            if cell.floor != pose.floor:
                continue
            d = planar_distance(pose, self.scene.cell_center(cell))
            if best is None or d < best:
                best = d
        return best

    def _shortest_length(self) -> float | None:
        best = None
        start = self.spec.start
        for cell in self._goal_cells():
            cx, cy = self.scene.cell_center(cell)
            d = geodesic_shortest_path(self.scene, start, (cx, cy, cell.floor))
            if d is not None and (best is None or d < best):
                best = d
        return best

    def _check_map_monotonic(self, before: list[np.ndarray]) -> None:
        for prev, cur in zip(before, self.area_map.grids):
            changed = prev != cur
            if not changed.any():
                continue
            for state_prev in (CellState.EXPLORED, CellState.FRONTIER, CellState.UNREACHABLE):
                mask = changed & (prev == state_prev)
                if not mask.any():
                    continue
                for value in np.unique(cur[mask]):
                    if CellState(int(value)) not in _ALLOWED_TRANSITIONS[state_prev]:
                        self.map_violations += 1
                        if self.strict_map_checks:
                            raise AssertionError(
                                f"illegal cell transition {state_prev.name} -> {CellState(int(value)).name}"
                            )

    def _excluded_relative(self) -> set[int]:
        """Map active exclusion anchors to the current relative directions."""
        out = set()
        for az in self.review.active_exclusions(self.pose, self.config.exclusion_radius):
            rel = math.degrees(wrap_angle(az - self.pose.heading)) % 360.0
            nearest = min(DIRECTIONS, key=lambda d: min(abs(rel - d), 360.0 - abs(rel - d)))
            out.add(nearest)
        return out

    def _pick_direction_and_candidates(self, scores, stuck: bool, panorama):
        """Direction choice plus candidate sampling.

        Nominal steps take the argmax direction even when its candidate set
        comes back empty (the step degenerates to a rotation); recovery
        steps walk down the score order until a direction yields candidates.
        """
        cfg = self.config
        excluded = self._excluded_relative()
        if len(excluded) >= len(DIRECTIONS):
            # the local ban table is overconstrained; forget anchors here
            self.review.exclusions = [
                a
                for a in self.review.exclusions
                if not a.active(self.pose, cfg.exclusion_radius)
            ]
            excluded = set()
        tried = set(excluded)
        last_d = None
        while len(tried) < len(DIRECTIONS):
            d = select_direction(scores, tried if tried else None)
            last_d = d
            obs = panorama[d]
            mask = compute_traversable(obs, self.pose, cfg.t_h, self.scene.resolution)
            cands = sample_candidates(
                mask,
                self.pose,
                self.pose.heading + math.radians(d),
                cfg.camera_fov,
                cfg.angular_interval,
                cfg.shrink,
                cfg.min_step,
                self.scene.resolution,
            )
            if cands or not stuck:
                return d, cands, excluded
            tried.add(d)
        empty = CandidateSet(candidates=(), annotated=np.zeros((1, 1, 3), dtype=np.uint8))
        if last_d is None:
            last_d = select_direction(scores, None)
        return last_d, empty, excluded

    # -- stepping ----------------------------------------------------------

    def step(self) -> StepRecord:
        if self.stop_reason is not None:
            raise RuntimeError("episode already finished")
        cfg = self.config
        scene = self.scene
        pose = self.pose
        t = len(self.trace)

        panorama = render_panorama(scene, pose, self.camera, cfg.max_sensor_range)
        frame_raster = np.concatenate([panorama[d].depth for d in DIRECTIONS])

        # memory update
        before = [g.copy() for g in self.area_map.grids] if self.strict_map_checks else None
        points: list = []
        for d in DIRECTIONS:
            interior, endpoints = sweep_observation(panorama[d], scene.resolution)
            points.extend((p, 0.0) for p in interior)
            points.extend(endpoints)
        mark_observation(self.area_map, pose, points, cfg.t_o, cfg.t_h)
        if before is not None:
            self._check_map_monotonic(before)

        # review
        stuck = False
        if cfg.toggles.review_two_step:
            prev = self.window.latest()
            if prev is not None:
                stuck = two_step_review(
                    self.review,
                    prev.raster,
                    frame_raster,
                    pose,
                    cfg.t_sim,
                    cfg.move_epsilon,
                    cfg.frame_value_range,
                )
        if cfg.toggles.review_floor:
            stairs_visible = any(
                h.category == "stairs" for d in DIRECTIONS for h in panorama[d].semantics
            )
            multi_step_review(
                self.review,
                self.area_map,
                scene.rooms_on(pose.floor),
                stairs_visible,
                self.floor_changed_last,
                cfg.t_e,
                cfg.room_explored_threshold,
            )
            self.floor_changed_last = False
        phase = self.review.phase
        if not cfg.toggles.review_two_step and phase == PhaseGoal.AVOID_OBSTACLE:
            phase = PhaseGoal.NONE
        bundle = GoalBundle(self.spec.goal, phase, self.subgoal)

        bias = None
        if cfg.toggles.review_room:
            cell = scene.cell_of(pose.x, pose.y, pose.floor)
            room = scene.room_of(pose.floor, cell.col, cell.row)
            bias = room_exit_bias(
                self.area_map,
                list(room.cells()) if room is not None else None,
                cfg.room_explored_threshold,
            )

        history = render_area_map(self.area_map, pose.floor)
        views = IntegratedViews(
            local=view_raster(panorama[0]),
            panorama=stitch_panorama(panorama),
            history=history,
        )
        ctx = StepContext(pose=pose, panorama=panorama, area_map=self.area_map, bias=bias)

        assessments = analyze_observation(self.oracle, bundle, views, ctx)
        raw = {a.direction: float(a.score) for a in assessments}
        if cfg.toggles.value_map:
            fuse_value(self.value_map, pose, raw, cfg.alpha, cfg.sector_radius)
            fused = read_direction_scores(self.value_map, pose, cfg.value_read_radius, raw)
        else:
            fused = dict(raw)

        d_sel, cands, excluded = self._pick_direction_and_candidates(fused, stuck, panorama)
        self.review.last_selected_azimuth = (pose.heading + math.radians(d_sel)) % math.tau
        reason = next(a.reason for a in assessments if a.direction == d_sel)
        self.subgoal = update_subgoal(self.oracle, bundle, self.subgoal, d_sel, reason, ctx)

        goal_fix = None
        if cands:
            self.blocked_streak = 0
            action = select_action(self.oracle, bundle, cands, pose, ctx)
            goal_fix = locate_goal(self.oracle, bundle, cands, ctx)
            blocked = False
        else:
            self.blocked_streak += 1
            action = PolarAction(0.0, wrap_angle(math.radians(d_sel)))
            blocked = True

        outcome = apply_action(
            scene, pose, action, allow_stairs=(phase == PhaseGoal.REACH_NEW_FLOOR)
        )
        displacement = (
            planar_distance(pose, outcome.new_pose)
            if not outcome.floor_changed
            else math.inf
        )
        self.pose = outcome.new_pose

        self.review.pose_history.append(pose)
        self.review.note_motion(
            0.0 if outcome.floor_changed else displacement, cfg.move_epsilon, outcome.floor_changed
        )
        if outcome.floor_changed:
            self.floor_changed_last = True
        else:
            self.review.steps_on_floor += 1
        push_frame(self.window, Frame(frame_raster, pose, t))

        record = StepRecord(
            step=t,
            pose=pose,
            raw_scores=raw,
            fused_scores=fused,
            selected_direction=d_sel,
            phase=phase.value,
            subgoal=self.subgoal,
            stuck=stuck,
            excluded=sorted(excluded),
            n_candidates=len(cands),
            action_range=action.range_m,
            action_bearing=action.bearing,
            new_pose=outcome.new_pose,
            displacement=0.0 if outcome.floor_changed else displacement,
            collided=outcome.collided,
            floor_changed=outcome.floor_changed,
            goal_fix=goal_fix,
            blocked=blocked,
        )
        self.trace.append(record)

        steps_taken = len(self.trace)
        if goal_fix is not None and planar_distance(self.pose, goal_fix) < cfg.t_s:
            self.stop_reason = STOP_GOAL
        elif steps_taken >= cfg.t_max:
            self.stop_reason = STOP_CAP
        elif self.blocked_streak >= cfg.blocked_abort_limit:
            self.stop_reason = STOP_BLOCKED
        return record

    def run(self) -> EpisodeResult:
        oracle_error = ""
        try:
            while self.stop_reason is None:
                self.step()
        except OracleError as exc:
            self.stop_reason = STOP_BLOCKED
            oracle_error = str(exc)
        return self._result(oracle_error)

    def _result(self, oracle_error: str = "") -> EpisodeResult:
        path_length = sum(r.displacement for r in self.trace) + sum(
            planar_distance(r.pose, r.new_pose) for r in self.trace if r.floor_changed
        )
        goal_distance = self._goal_distance(self.pose)
        success = goal_distance is not None and goal_distance < self.config.t_g
        shortest = self._shortest_length()
        spl = 0.0
        if success and shortest is not None and shortest > 0:
            spl = shortest / max(path_length, shortest)
        elif success and shortest == 0.0:
            spl = 1.0
        return EpisodeResult(
            success=success,
            steps=len(self.trace),
            path_length=path_length,
            shortest_length=shortest,
            spl=spl,
            stop_reason=self.stop_reason or STOP_CAP,
            final_pose=self.pose,
            goal_distance=goal_distance,
            trace=self.trace,
            oracle_error=oracle_error,
        )


def run_episode(
    scene: SceneSpec,
    spec: EpisodeSpec,
    oracle: NavOracle,
    config: RunConfig,
    strict_map_checks: bool = False,
) -> EpisodeResult:
    """Run one full episode; oracle hard failures end it as blocked_abort."""
    runner = EpisodeRunner(scene, spec, oracle, config, strict_map_checks)
    return runner.run()


def compute_sr(results) -> float:
    """Success rate as a percentage."""
    results = list(results)
    if not results:
        raise ValueError("compute_sr over an empty result list")
    return 100.0 * sum(1 for r in results if r.success) / len(results)


def compute_spl(results) -> float:
    """Mean of S_i * l_i / max(p_i, l_i) over the episodes."""
    results = list(results)
    if not results:
        raise ValueError("compute_spl over an empty result list")
    total = 0.0
    for r in results:
        if not r.success:
            continue
        if r.shortest_length is None or r.shortest_length <= 0:
            raise ValueError("successful episode lacks a positive shortest_length")
        total += r.shortest_length / max(r.path_length, r.shortest_length)
    return total / len(results)


@dataclass(frozen=True)
class AblationRow:
    label: str
    sr: float
    spl: float
    episodes: int


def run_ablation(
    episodes,
    oracle_factory,
    config: RunConfig,
    variants,
    strict_map_checks: bool = False,
) -> list[AblationRow]:
    """Run the episode suite once per toggle configuration.

    ``episodes`` is a list of (scene, EpisodeSpec); ``oracle_factory`` maps
    (scene, config) to an oracle; ``variants`` maps labels to toggle
    overrides. Episode failures become blocked_abort rows, never crashes.
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("ablation needs a non-empty episode suite")
    rows = []
    for label, overrides in variants.items():
        cfg = config.with_toggles(**overrides)
        results = []
        for scene, spec in episodes:
            oracle = oracle_factory(scene, cfg)
            results.append(run_episode(scene, spec, oracle, cfg, strict_map_checks))
        rows.append(AblationRow(label, compute_sr(results), compute_spl(results), len(results)))
    return rows
