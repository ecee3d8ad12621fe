"""Perception oracle surface: the four analysis/planning/action/stop
capabilities behind one interface, prompt assembly, response parsing, and a
deterministic scripted oracle that plays a competent-but-fallible scorer
against simulator ground truth.
"""

from __future__ import annotations

import ast
import json
import math
import re
from collections import deque
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ParseError
from .geometry import GridCoord, Pose, wrap_angle
from .memory import (
    SCORE_MAX,
    SCORE_MIN,
    CellState,
    CommonSenseStore,
    ExplorationAreaMap,
)
from .recovery import PhaseGoal, RoomExitBias
from .simworld import DIRECTIONS, SceneSpec, SimObservation, sweep_observation

STAIRS_CATEGORY = "stairs"


@dataclass(frozen=True)
class DirectionAssessment:
    direction: int
    score: int
    reason: str

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction}")
        if not isinstance(self.score, int) or isinstance(self.score, bool):
            raise ValueError(f"score must be an integer, got {self.score!r}")
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise ValueError(f"score {self.score} outside [{SCORE_MIN}, {SCORE_MAX}]")


@dataclass(frozen=True)
class GoalBundle:
    """Goal instruction, temporary phase goal, and current subgoal."""

    goal: str
    phase: PhaseGoal = PhaseGoal.NONE
    subgoal: str = ""


@dataclass(frozen=True)
class PromptSpec:
    """Modular prompt: six ordered sections, all required."""

    objective: str
    input_spec: str
    scoring: str
    commonsense: str
    output_guidelines: str
    output_examples: str

    SECTION_TITLES = (
        ("objective", "Objective"),
        ("input_spec", "Input specification"),
        ("scoring", "Scoring criteria"),
        ("commonsense", "Commonsense constraints"),
        ("output_guidelines", "Output guidelines"),
        ("output_examples", "Output examples"),
    )


def build_prompt(spec: PromptSpec, bundle: GoalBundle, views_note: str) -> str:
    """Deterministic concatenation of the prompt sections in fixed order.

    Commonsense rules appear verbatim. Raises ValueError when a section is
    empty.
    """
    parts = [
        f"Goal: {bundle.goal}",
        f"Phase goal: {bundle.phase.value}",
        f"Subgoal: {bundle.subgoal or '(none)'}",
        f"Attached views: {views_note}",
    ]
    for field_name, title in PromptSpec.SECTION_TITLES:
        text = getattr(spec, field_name)
        if not text or not text.strip():
            raise ValueError(f"prompt section {field_name!r} is empty")
        parts.append(f"## {title}\n{text.strip()}")
    return "\n\n".join(parts) + "\n"


def default_analysis_prompt(store: CommonSenseStore) -> PromptSpec:
    return PromptSpec(
        objective=(
            "You are a navigation analyst. Score how promising each of the six "
            "view directions (0, 60, 120, 180, 240, 300 degrees, counterclockwise "
            "from the current heading) is for reaching the goal."
        ),
        input_spec=(
            "Inputs: the current-direction view, the stitched six-direction "
            "panorama in fixed order 0..300, and the top-down exploration map "
            "(gray=explored, green=seen but unexplored, black=unreachable, "
            "dots=visited)."
        ),
        scoring=(
            "Score each direction on an integer scale from 0 to 10. 10 means the "
            "goal is visible and reachable that way; 0 means the direction is "
            "blocked or leads nowhere new. Prefer directions toward unexplored "
            "area when the goal is not in sight."
        ),
        commonsense="\n".join(store.prompt_lines()),
        output_guidelines=(
            "Answer with a single JSON object whose keys are the six direction "
            'strings and whose values are objects {"score": <int 0-10>, '
            '"reason": <short text>}. No other text.'
        ),
        output_examples=(
            '{"0": {"score": 6, "reason": "open corridor toward unexplored area"}, '
            '"60": {"score": 3, "reason": "wall and an explored corner"}, ...}'
        ),
    )


def serialize_assessments(assessments) -> str:
    """Canonical JSON for six assessments, keyed by direction, 0..300 order."""
    items = {a.direction: a for a in assessments}
    if sorted(items) != sorted(DIRECTIONS):
        raise ValueError(f"expected exactly directions {DIRECTIONS}, got {sorted(items)}")
    payload = {
        str(d): {"score": items[d].score, "reason": items[d].reason} for d in DIRECTIONS
    }
    return json.dumps(payload, ensure_ascii=False)


_DIRECTION_KEY_RE = re.compile(r"""['"](\d{1,3})['"]\s*:\s*\{""")


def _loads_lenient(text: str) -> dict:
    s = text.strip()
    start, end = s.find("{"), s.rfind("}")
    if start < 0 or end <= start:
        raise ParseError("no JSON object found in response", s[:80])
    s = s[start : end + 1]
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        pass
    try:
        value = ast.literal_eval(s)
    except (ValueError, SyntaxError) as exc:
        raise ParseError(f"unparseable response ({exc})", s[:120]) from None
    if not isinstance(value, dict):
        raise ParseError("response is not a mapping", s[:80])
    return value


def parse_assessments(text: str) -> dict[int, DirectionAssessment]:
    """Parse a six-direction assessment response.

    Accepts strict JSON or a Python-literal map of the same shape
    ``{'240': {'score': 6, 'reason': '...'}, ...}``. Exactly the six
    directions must be present once each with in-range integer scores;
    reasons are preserved verbatim. Parse errors carry the offending
    fragment.
    """
    keys = _DIRECTION_KEY_RE.findall(text)
    seen: set[str] = set()
    for key in keys:
        if key in seen and int(key) in DIRECTIONS:
            raise ParseError(f"duplicate direction {key}", text[:120])
        seen.add(key)
    data = _loads_lenient(text)
    out: dict[int, DirectionAssessment] = {}
    for raw_key, entry in data.items():
        try:
            direction = int(raw_key)
        except (TypeError, ValueError):
            raise ParseError(f"non-numeric direction key {raw_key!r}", str(raw_key)) from None
        if direction not in DIRECTIONS:
            raise ParseError(f"unknown direction {direction}", str(raw_key))
        if direction in out:
            raise ParseError(f"duplicate direction {direction}", str(raw_key))
        if not isinstance(entry, dict) or "score" not in entry:
            raise ParseError(f"direction {direction} entry has no score", repr(entry)[:120])
        score = entry["score"]
        if isinstance(score, bool) or not isinstance(score, int):
            raise ParseError(f"direction {direction} score is not an integer", repr(score))
        if not SCORE_MIN <= score <= SCORE_MAX:
            raise ParseError(
                f"direction {direction} score {score} outside [{SCORE_MIN}, {SCORE_MAX}]",
                repr(score),
            )
        reason = entry.get("reason", "")
        if not isinstance(reason, str):
            raise ParseError(f"direction {direction} reason is not text", repr(reason)[:120])
        out[direction] = DirectionAssessment(direction, score, reason)
    missing = [d for d in DIRECTIONS if d not in out]
    if missing:
        raise ParseError(f"missing directions {missing}", text[:120])
    return out


@dataclass
class StepContext:
    """Ground-truth and memory handles the runner passes to oracle calls."""

    pose: Pose
    panorama: dict[int, SimObservation]
    area_map: ExplorationAreaMap | None = None
    bias: RoomExitBias | None = None


class NavOracle(Protocol):
    """The four perception capabilities used by the decision pipeline."""

    def analyze_directions(self, ctx: StepContext, bundle: GoalBundle) -> list[DirectionAssessment]:
        ...

    def plan_subgoal(
        self,
        ctx: StepContext,
        bundle: GoalBundle,
        prev_subgoal: str,
        selected_direction: int,
        selected_reason: str,
    ) -> str:
        ...

    def choose_candidate(self, ctx: StepContext, bundle: GoalBundle, candidates) -> int:
        ...

    def locate_goal(self, ctx: StepContext, bundle: GoalBundle, candidates) -> int | None:
        ...


def visible_cells(obs: SimObservation, resolution: float) -> set[GridCoord]:
    """Traversable cells seen in one view: cells swept by the columns'
    planar rays, excluding the agent's own cell and blocked endpoints."""
    interior, endpoints = sweep_observation(obs, resolution / 2.0)
    pose = obs.pose
    own = GridCoord(
        int(math.floor(pose.x / resolution)), int(math.floor(pose.y / resolution)), pose.floor
    )
    cells = set()
    for x, y in interior:
        cell = GridCoord(int(math.floor(x / resolution)), int(math.floor(y / resolution)), pose.floor)
        if cell != own:
            cells.add(cell)
    return cells


class ScriptedOracle:
    """Deterministic stand-in for the four model roles.

    Scores follow a documented formula: a direction in which a target
    instance is visible scores the strict maximum (10); otherwise each
    visible traversable cell costs its path distance to the target, plus (in
    nominal phase) ``frontier_weight`` times the cell's distance to the
    nearest unexplored cell when the cell is already explored, so stale
    ground repels the agent toward new space. The direction score is
    ``round(9 * (1 - best_cost / D))`` clamped to [0, 9] with ``best_cost``
    the cheapest visible cell and ``D`` the scene diameter. With no target
    on the floor the same shape runs on the frontier term alone.

    ``door_aware=False`` drops the environmental common sense about closed
    doors: a direction with a closed door in sight (within ``bait_range``)
    scores as a promising opening (9) instead of being rated by true
    distances, which baits the agent into dead ends the recovery layer must
    dig it out of.
    """

    BAIT_SCORE = 9

    def __init__(
        self,
        scene: SceneSpec,
        door_aware: bool = True,
        stop_fix_radius: float = 1.0,
        goal_sight_range: float = 2.0,
        frontier_weight: float = 2.0,
        bait_range: float = 4.0,
        revisit_penalty: float = 1.0,
        distance_scale: float | None = None,
    ):
        self.scene = scene
        self.door_aware = door_aware
        self.stop_fix_radius = stop_fix_radius
        self.goal_sight_range = goal_sight_range
        self.frontier_weight = frontier_weight
        self.bait_range = bait_range
        self.revisit_penalty = revisit_penalty
        self.distance_scale = distance_scale if distance_scale is not None else scene.diameter()
        self._field_cache: dict = {}

    # -- path fields -------------------------------------------------------

    def _passable(self, floor: int, col: int, row: int) -> bool:
        return self.scene.is_traversable(floor, col, row)

    def _edge(self, floor: int, c0: int, r0: int, c1: int, r1: int) -> bool:
        if not (self._passable(floor, c0, r0) and self._passable(floor, c1, r1)):
            return False
        scene = self.scene
        return abs(scene.surface(floor, c1, r1) - scene.surface(floor, c0, r0)) <= scene.obstacle_height

    def _bfs_field(self, floor: int, sources, blocked: np.ndarray | None = None) -> np.ndarray:
        grid = self.scene.floors[floor]
        field = np.full((grid.height, grid.width), np.inf)
        queue = deque()
        for cell in sources:
            if self._passable(floor, cell.col, cell.row):
                field[cell.row, cell.col] = 0.0
                queue.append((cell.col, cell.row))
        res = self.scene.resolution
        while queue:
            col, row = queue.popleft()
            base = field[row, col]
            for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nc, nr = col + dc, row + dr
                if (
                    0 <= nc < grid.width
                    and 0 <= nr < grid.height
                    and field[nr, nc] == np.inf
                    and self._edge(floor, col, row, nc, nr)
                    and (blocked is None or not blocked[nr, nc])
                ):
                    field[nr, nc] = base + res
                    queue.append((nc, nr))
        return field

    def distance_field(self, floor: int, targets) -> np.ndarray:
        key = (floor, tuple(sorted(tuple(c) for c in targets)))
        if key not in self._field_cache:
            self._field_cache[key] = self._bfs_field(floor, list(targets))
        return self._field_cache[key]

    def _frontier_field(self, area: ExplorationAreaMap, floor: int) -> np.ndarray:
        """Distance to the nearest unexplored cell, routed around everything
        the agent's own map has marked unreachable (the exploration pull is
        grounded in observed blockage, not in semantic optimism)."""
        grid = self.scene.floors[floor]
        states = area.grids[floor]
        blocked = states == CellState.UNREACHABLE
        unexplored = []
        for row in range(grid.height):
            for col in range(grid.width):
                if (
                    states[row, col] != CellState.EXPLORED
                    and not blocked[row, col]
                    and self._passable(floor, col, row)
                ):
                    unexplored.append(GridCoord(col, row, floor))
        return self._bfs_field(floor, unexplored, blocked)

    def _targets(self, bundle: GoalBundle, floor: int) -> tuple[str, list[GridCoord]]:
        if bundle.phase in (PhaseGoal.FIND_STAIRS, PhaseGoal.REACH_NEW_FLOOR):
            cells = self.scene.stairs_cells_on(floor)
            if cells:
                return STAIRS_CATEGORY, cells
        return bundle.goal, self.scene.goal_cells(bundle.goal)

    @staticmethod
    def _visible_positions(ctx: StepContext, category: str) -> list[tuple[float, float, float]]:
        """(x, y, range) of category hits across the panorama, nearest first."""
        pose = ctx.pose
        out = []
        for d in DIRECTIONS:
            for hit in ctx.panorama[d].semantics:
                if hit.category != category:
                    continue
                az = pose.heading + hit.bearing
                out.append(
                    (pose.x + hit.range_m * math.cos(az), pose.y + hit.range_m * math.sin(az), hit.range_m)
                )
        out.sort(key=lambda p: (p[2], p[0], p[1]))
        return out

    # -- capabilities ------------------------------------------------------

    def analyze_directions(self, ctx: StepContext, bundle: GoalBundle) -> list[DirectionAssessment]:
        scene = self.scene
        floor = ctx.pose.floor
        res = scene.resolution
        category, targets = self._targets(bundle, floor)
        target_field = self.distance_field(floor, targets) if targets else None
        # the frontier pull only steers nominal exploration, not phase runs
        frontier_field = None
        use_frontier = bundle.phase not in (PhaseGoal.FIND_STAIRS, PhaseGoal.REACH_NEW_FLOOR)
        if use_frontier or target_field is None:
            if ctx.area_map is None:
                raise ValueError("scripted oracle needs an area map for frontier-aware scoring")
            frontier_field = self._frontier_field(ctx.area_map, floor)

        states = ctx.area_map.grids[floor] if ctx.area_map is not None else None
        out = []
        for d in DIRECTIONS:
            obs = ctx.panorama[d]
            if any(h.category == category for h in obs.semantics) and target_field is not None:
                out.append(DirectionAssessment(d, SCORE_MAX, f"{category} in view"))
                continue
            if not self.door_aware and any(
                h.category == "closed_door" and h.range_m <= self.bait_range
                for h in obs.semantics
            ):
                out.append(
                    DirectionAssessment(d, self.BAIT_SCORE, "a doorway ahead looks worth entering")
                )
                continue
            cells = visible_cells(obs, res)
            best = math.inf
            for cell in cells:
                cost = 0.0
                if target_field is not None:
                    cost += float(target_field[cell.row, cell.col])
                if frontier_field is not None and (
                    states is None or states[cell.row, cell.col] == CellState.EXPLORED
                ):
                    pull = float(frontier_field[cell.row, cell.col])
                    if not math.isinf(pull):  # inf means fully covered: no pull left
                        cost += self.frontier_weight * pull
                if cost < best:
                    best = cost
            if not cells or best == math.inf:
                out.append(DirectionAssessment(d, SCORE_MIN, "no traversable cell in view"))
                continue
            score = max(
                SCORE_MIN,
                min(SCORE_MAX - 1, round((SCORE_MAX - 1) * (1.0 - best / self.distance_scale))),
            )
            reason = f"best visible cell costs {best:.2f} m toward {category}"
            if ctx.bias is not None and ctx.bias.active and self._leads_out(ctx, cells):
                score = min(SCORE_MAX, score + int(round(ctx.bias.bonus)))
                reason += "; leads toward unexplored area"
            out.append(DirectionAssessment(d, int(score), reason))
        return out

    def _leads_out(self, ctx: StepContext, cells) -> bool:
        if ctx.area_map is None:
            return False
        pose = ctx.pose
        room = self.scene.room_of(pose.floor, *self.scene.cell_of(pose.x, pose.y)[:2])
        states = ctx.area_map.grids[pose.floor]
        for cell in cells:
            outside = room is None or not room.contains(cell.col, cell.row)
            if outside and states[cell.row, cell.col] != CellState.EXPLORED:
                return True
        return False

    def plan_subgoal(
        self,
        ctx: StepContext,
        bundle: GoalBundle,
        prev_subgoal: str,
        selected_direction: int,
        selected_reason: str,
    ) -> str:
        if bundle.phase == PhaseGoal.REACH_NEW_FLOOR:
            links = self.scene.stairs_cells_on(ctx.pose.floor)
            if links:
                other = self.scene.stair_link(links[0])
                return "go up the stairs" if other.floor > ctx.pose.floor else "go down the stairs"
            return "go up the stairs"
        if bundle.phase == PhaseGoal.FIND_STAIRS:
            new = "find the stairs"
        elif bundle.phase == PhaseGoal.AVOID_OBSTACLE:
            new = "go around the obstacle"
        elif self._visible_positions(ctx, bundle.goal):
            new = f"approach the {bundle.goal}"
        else:
            new = f"explore toward {selected_direction} degrees"
        return prev_subgoal if new == prev_subgoal else new

    def _bait_door(self, ctx: StepContext, candidates) -> tuple[float, float] | None:
        """Position of a tempting closed door inside the candidates' frustum."""
        if self.door_aware:
            return None
        doors = [
            h
            for d in DIRECTIONS
            for h in ctx.panorama[d].semantics
            if h.category == "closed_door" and h.range_m <= self.bait_range
        ]
        if not doors:
            return None
        nearest = min(doors, key=lambda h: (h.range_m, h.bearing))
        az = ctx.pose.heading + nearest.bearing
        in_frustum = any(
            abs(wrap_angle(nearest.bearing - c.bearing)) <= math.radians(35.0) for c in candidates
        )
        if not in_frustum:
            return None
        return (
            ctx.pose.x + nearest.range_m * math.cos(az),
            ctx.pose.y + nearest.range_m * math.sin(az),
        )

    def choose_candidate(self, ctx: StepContext, bundle: GoalBundle, candidates) -> int:
        if not candidates:
            raise ValueError("no candidates to choose from")
        goals = self._visible_positions(ctx, bundle.goal)
        if goals:
            gx, gy, _ = goals[0]
            ranked = min(
                range(len(candidates)),
                key=lambda i: (math.hypot(candidates[i].point[0] - gx, candidates[i].point[1] - gy), i),
            )
            return ranked
        bait = self._bait_door(ctx, candidates)
        if bait is not None:
            bx, by = bait
            return min(
                range(len(candidates)),
                key=lambda i: (math.hypot(candidates[i].point[0] - bx, candidates[i].point[1] - by), i),
            )
        floor = ctx.pose.floor
        category, targets = self._targets(bundle, floor)
        if targets:
            field = self.distance_field(floor, targets)
        else:
            field = self._frontier_field(ctx.area_map, floor)
        # landing on the same cell over and over gets progressively costlier,
        # which breaks symmetric fly-past orbits around an occluded target
        visits: dict = {}
        if ctx.area_map is not None:
            for cell in ctx.area_map.visited:
                visits[cell] = visits.get(cell, 0) + 1

        def cost(i: int) -> tuple[float, int]:
            x, y = candidates[i].point
            cell = self.scene.cell_of(x, y, floor)
            revisit = visits.get(cell, 0) * self.revisit_penalty
            return (float(field[cell.row, cell.col]) + revisit, i)

        return min(range(len(candidates)), key=cost)

    def locate_goal(self, ctx: StepContext, bundle: GoalBundle, candidates) -> int | None:
        if not candidates:
            return None
        goals = [g for g in self._visible_positions(ctx, bundle.goal) if g[2] <= self.goal_sight_range]
        if not goals:
            return None
        gx, gy, _ = goals[0]
        idx = min(
            range(len(candidates)),
            key=lambda i: (math.hypot(candidates[i].point[0] - gx, candidates[i].point[1] - gy), i),
        )
        cx, cy = candidates[idx].point
        if math.hypot(cx - gx, cy - gy) < self.stop_fix_radius:
            return idx
        return None
