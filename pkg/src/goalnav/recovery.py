"""Anomaly detection and correction: fine-grained stuck detection over
consecutive observations, and the coarse room-exit / floor-exit flag
machine that injects temporary phase goals.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import Pose, planar_distance
from .memory import ExplorationAreaMap, explored_fraction


class PhaseGoal(Enum):
    NONE = "none"
    AVOID_OBSTACLE = "avoid_obstacle"
    FIND_STAIRS = "find_stairs"
    REACH_NEW_FLOOR = "reach_new_floor"


def frame_similarity(a: np.ndarray, b: np.ndarray, value_range: float | None = None) -> float:
    """Similarity in [0, 1]: 1 - mean(|a - b|) / value_range, clamped.

    ``value_range`` defaults to the spread of the values in both rasters; a
    fixed range makes the measure comparable across steps. Returns exactly
    1.0 only for identical rasters.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"raster shapes differ: {a.shape} vs {b.shape}")
    if value_range is None:
        lo = min(a.min(), b.min()) if a.size else 0.0
        hi = max(a.max(), b.max()) if a.size else 0.0
        value_range = hi - lo
    if value_range <= 0.0:
        return 1.0 if np.array_equal(a, b) else 0.0
    sim = 1.0 - float(np.mean(np.abs(a - b))) / value_range
    return min(1.0, max(0.0, sim))


@dataclass(frozen=True)
class ExclusionAnchor:
    """A direction banned near the position where it got the agent stuck.

    The azimuth is absolute; the anchor is active while the agent stays
    within the activation radius of the stuck position on the same floor,
    so the same dead end cannot re-bait the agent on a later pass.
    """

    azimuth: float
    x: float
    y: float
    floor: int

    def active(self, pose: Pose, radius: float) -> bool:
        return pose.floor == self.floor and planar_distance(pose, (self.x, self.y)) <= radius


@dataclass
class ReviewState:
    """Per-episode monitor state: pose history, stasis counter, the
    room/floor flag progression, and the direction exclusion anchors."""

    pose_history: deque = field(default_factory=lambda: deque(maxlen=3))
    stasis_count: int = 0
    flag_jump: bool = False
    flag_stairs: bool = False
    flag_floor: bool = False
    steps_on_floor: int = 0
    exclusions: list = field(default_factory=list)
    last_selected_azimuth: float | None = None
    avoid_obstacle: bool = False

    @property
    def phase(self) -> PhaseGoal:
        if self.avoid_obstacle:
            return PhaseGoal.AVOID_OBSTACLE
        if self.flag_stairs:
            return PhaseGoal.REACH_NEW_FLOOR
        if self.flag_jump:
            return PhaseGoal.FIND_STAIRS
        return PhaseGoal.NONE

    def active_exclusions(self, pose: Pose, radius: float) -> list[float]:
        """Azimuths banned at this pose (anchors within their radius)."""
        return [a.azimuth for a in self.exclusions if a.active(pose, radius)]

    def add_exclusion(self, pose: Pose) -> None:
        if self.last_selected_azimuth is None:
            return
        anchor = ExclusionAnchor(self.last_selected_azimuth, pose.x, pose.y, pose.floor)
        if anchor not in self.exclusions:
            self.exclusions.append(anchor)

    def note_motion(self, displacement: float, move_epsilon: float, floor_changed: bool) -> None:
        """Post-action bookkeeping: track stasis; real movement (or a floor
        change) ends the avoid-obstacle phase."""
        if floor_changed or displacement >= move_epsilon:
            self.stasis_count = 0
            self.avoid_obstacle = False
        else:
            self.stasis_count += 1


def two_step_review(
    state: ReviewState,
    prev_raster: np.ndarray | None,
    raster: np.ndarray,
    pose: Pose,
    t_sim: float,
    move_epsilon: float,
    value_range: float | None = None,
) -> bool:
    """Stuck check over the last two steps; mutates the state on detection.

    Stuck when the observation barely changed (similarity >= ``t_sim``) or
    the position stayed put for two consecutive steps. On detection the
    phase becomes AvoidObstacle and the previously selected direction gets
    an exclusion anchor at this position, so selection re-explores a
    suboptimal alternative here and on any later pass.
    """
    stuck = False
    if prev_raster is not None:
        if frame_similarity(prev_raster, raster, value_range) >= t_sim:
            stuck = True
    if not stuck and len(state.pose_history) >= 2:
        hist = list(state.pose_history)
        d1 = planar_distance(hist[-1], pose) if hist[-1].floor == pose.floor else math.inf
        d2 = (
            planar_distance(hist[-2], hist[-1])
            if hist[-2].floor == hist[-1].floor
            else math.inf
        )
        if d1 < move_epsilon and d2 < move_epsilon:
            stuck = True
    if stuck:
        state.avoid_obstacle = True
        state.add_exclusion(pose)
    return stuck


def floor_fully_explored(
    area: ExplorationAreaMap, rooms, threshold: float
) -> bool:
    """True when every room region on the floor is explored past the threshold."""
    rooms = list(rooms)
    if not rooms:
        return False
    return all(explored_fraction(area, room.cells()) >= threshold for room in rooms)


def multi_step_review(
    state: ReviewState,
    area: ExplorationAreaMap,
    rooms,
    stairs_visible: bool,
    new_floor_reached: bool,
    t_e: int,
    explored_threshold: float = 0.95,
) -> PhaseGoal:
    """Advance the room/floor flag machine and return the resulting phase.

    Arrival on a new floor sets Flag_floor, clears the phase and resets the
    counters; floor exhaustion (every room explored, or ``t_e`` steps spent
    on the floor) sets Flag_jump (phase FindStairs); sighting stairs while
    Flag_jump is set promotes to Flag_stairs (phase ReachNewFloor).
    """
    if new_floor_reached:
        state.flag_floor = True
        state.flag_jump = False
        state.flag_stairs = False
        state.steps_on_floor = 0
        return state.phase
    if state.flag_jump and stairs_visible and not state.flag_stairs:
        state.flag_stairs = True
        return state.phase
    if not state.flag_jump and (
        state.steps_on_floor >= t_e or floor_fully_explored(area, rooms, explored_threshold)
    ):
        state.flag_jump = True
        state.flag_floor = False  # a new exit cycle begins
    return state.phase


@dataclass(frozen=True)
class RoomExitBias:
    """Directive for the analysis stage: prefer directions that lead out of
    the (sufficiently explored) current room toward unexplored area."""

    active: bool
    bonus: float = 2.0


def room_exit_bias(
    area: ExplorationAreaMap,
    current_room,
    threshold: float,
    bonus: float = 2.0,
) -> RoomExitBias:
    """Emit the room-exit directive once the current room is explored enough.

    For the scripted scorer the directive is a fixed additive bonus applied
    to directions facing unexplored cells beyond the room; for a remote
    oracle it is rendered as prompt text.
    """
    if current_room is None:
        return RoomExitBias(active=False, bonus=bonus)
    frac = explored_fraction(area, current_room)
    return RoomExitBias(active=frac >= threshold, bonus=bonus)
