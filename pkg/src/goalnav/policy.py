"""Per-step decision pipeline: direction scoring and selection, traversable
mask extraction, candidate sampling inside the selected frustum, action
selection, and the stop decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SelectionError
from .geometry import (
    GridCoord,
    PolarAction,
    Pose,
    planar_distance,
    polar_from_point,
    wrap_angle,
)
from .perception import DirectionAssessment, GoalBundle, NavOracle, StepContext
from .render import annotate_candidates
from .simworld import DIRECTIONS, SimObservation, sweep_observation


@dataclass(frozen=True)
class IntegratedViews:
    """The three fused observation views handed to the analysis stage."""

    local: np.ndarray
    panorama: np.ndarray
    history: np.ndarray

    def validate(self) -> None:
        for name in ("local", "panorama", "history"):
            arr = getattr(self, name)
            if arr is None or getattr(arr, "size", 0) == 0:
                raise ValueError(f"integrated views missing the {name} raster")


@dataclass(frozen=True)
class Candidate:
    index: int
    point: tuple[float, float]
    image_xy: tuple[int, int]
    bearing: float
    range_m: float


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[Candidate, ...]
    annotated: np.ndarray

    def __len__(self) -> int:
        return len(self.candidates)

    def __getitem__(self, i: int) -> Candidate:
        return self.candidates[i]

    def __bool__(self) -> bool:
        return bool(self.candidates)


def validate_scores(scores) -> dict[int, float]:
    out = {}
    for d in DIRECTIONS:
        if d not in scores:
            raise ValueError(f"missing score for direction {d}")
        out[d] = float(scores[d])
    return out


def analyze_observation(
    oracle: NavOracle, bundle: GoalBundle, views: IntegratedViews, ctx: StepContext
) -> list[DirectionAssessment]:
    """Run the analysis capability over complete integrated views."""
    views.validate()
    assessments = oracle.analyze_directions(ctx, bundle)
    got = sorted(a.direction for a in assessments)
    if got != sorted(DIRECTIONS):
        raise ValueError(f"oracle returned directions {got}, expected {sorted(DIRECTIONS)}")
    return assessments


def select_direction(scores, excluded=None) -> int:
    """Highest-scoring non-excluded direction; ties break to the smallest angle."""
    banned = set(excluded) if excluded else set()
    best = None
    for d in DIRECTIONS:  # ascending angle gives the tie-break for free
        if d in banned:
            continue
        s = float(scores[d])
        if best is None or s > best[1]:
            best = (d, s)
    if best is None:
        raise SelectionError("all six directions are excluded")
    return best[0]


def update_subgoal(
    oracle: NavOracle,
    bundle: GoalBundle,
    prev_subgoal: str,
    selected_direction: int,
    selected_reason: str,
    ctx: StepContext,
) -> str:
    """Refresh or keep the subgoal after a direction was selected."""
    subgoal = oracle.plan_subgoal(ctx, bundle, prev_subgoal, selected_direction, selected_reason)
    if bundle.goal and not subgoal:
        raise ValueError("planner returned an empty subgoal for a non-empty goal")
    return subgoal


def compute_traversable(
    obs: SimObservation, pose: Pose, t_h: float, resolution: float
) -> set[GridCoord]:
    """Traversable BEV mask from one frame's depth columns.

    A cell qualifies when its observed surface height stays within ``t_h``
    of the agent's standing height and it connects to the agent's cell
    through qualifying cells (4-connected flood fill).
    """
    interior, endpoints = sweep_observation(obs, resolution / 2.0)
    own = GridCoord(
        int(math.floor(pose.x / resolution)), int(math.floor(pose.y / resolution)), pose.floor
    )
    seen: set[GridCoord] = {own}
    for x, y in interior:
        seen.add(GridCoord(int(math.floor(x / resolution)), int(math.floor(y / resolution)), pose.floor))
    for (x, y), height in endpoints:
        if abs(height) <= t_h:
            seen.add(GridCoord(int(math.floor(x / resolution)), int(math.floor(y / resolution)), pose.floor))
    # connectivity: keep only cells reachable from the agent through the mask
    frontier = [own]
    connected = {own}
    while frontier:
        cell = frontier.pop()
        for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = GridCoord(cell.col + dc, cell.row + dr, cell.floor)
            if nxt in seen and nxt not in connected:
                connected.add(nxt)
                frontier.append(nxt)
    return connected


def _farthest_along(
    mask: set[GridCoord], pose: Pose, azimuth: float, max_dist: float, resolution: float
) -> float:
    """Largest distance along the ray whose swept cells all lie in the mask.

    Marches in quarter-cell steps, then bisects the final boundary so the
    returned reach is exact to ~1e-4 m.
    """
    step = resolution / 4.0
    ux, uy = math.cos(azimuth), math.sin(azimuth)

    def inside(t: float) -> bool:
        cell = GridCoord(
            int(math.floor((pose.x + t * ux) / resolution)),
            int(math.floor((pose.y + t * uy) / resolution)),
            pose.floor,
        )
        return cell in mask

    good = 0.0
    t = step
    bad = None
    while t <= max_dist:
        if not inside(t):
            bad = t
            break
        good = t
        t += step
    if bad is None:
        return good
    for _ in range(20):
        mid = (good + bad) / 2.0
        if inside(mid):
            good = mid
        else:
            bad = mid
    return good


def sample_candidates(
    mask: set[GridCoord],
    pose: Pose,
    center_azimuth: float,
    fov: float,
    angular_interval: float,
    shrink: float,
    min_step: float,
    resolution: float,
    raster_scale: int = 4,
) -> CandidateSet:
    """Candidate reachable positions inside the selected frustum.

    Candidate 0 sits on the frustum's center ray at the farthest reachable
    point scaled inward by ``shrink``; further candidates alternate left and
    right at multiples of ``angular_interval``. Rays that cannot reach past
    ``min_step`` contribute nothing; an empty set signals a blocked step.
    """
    if not mask:
        return CandidateSet(candidates=(), annotated=np.zeros((1, 1, 3), dtype=np.uint8))
    max_dist = (max(max(abs(c.col), abs(c.row)) for c in mask) + 2) * resolution * 2
    offsets = [0.0]
    k = 1
    while k * angular_interval <= fov / 2.0 + 1e-9:
        offsets.append(k * angular_interval)
        offsets.append(-k * angular_interval)
        k += 1
    picks = []
    for off in offsets:
        az = center_azimuth + off
        far = _farthest_along(mask, pose, az, max_dist, resolution)
        if far < min_step:
            continue
        rng = far * shrink
        picks.append((az, rng))
    candidates = []
    for i, (az, rng) in enumerate(picks):
        x = pose.x + rng * math.cos(az)
        y = pose.y + rng * math.sin(az)
        cell = GridCoord(int(math.floor(x / resolution)), int(math.floor(y / resolution)), pose.floor)
        candidates.append(
            Candidate(
                index=i,
                point=(x, y),
                image_xy=(cell.col * raster_scale, cell.row * raster_scale),
                bearing=wrap_angle(az - pose.heading),
                range_m=rng,
            )
        )
    annotated = annotate_candidates(mask, pose, candidates, resolution, raster_scale)
    return CandidateSet(candidates=tuple(candidates), annotated=annotated)


def select_action(
    oracle: NavOracle, bundle: GoalBundle, candidates: CandidateSet, pose: Pose, ctx: StepContext
) -> PolarAction:
    """Let the oracle pick a candidate index and convert it to a polar action."""
    if not candidates:
        raise SelectionError("cannot select an action from an empty candidate set")
    idx = oracle.choose_candidate(ctx, bundle, candidates.candidates)
    if not isinstance(idx, int) or not 0 <= idx < len(candidates):
        raise SelectionError(f"oracle chose candidate {idx!r} of {len(candidates)}")
    return polar_from_point(pose, candidates[idx].point)


def locate_goal(
    oracle: NavOracle, bundle: GoalBundle, candidates: CandidateSet, ctx: StepContext
) -> tuple[float, float] | None:
    """Goal position fix: the candidate closest to the observed goal, if any."""
    if not candidates:
        return None
    idx = oracle.locate_goal(ctx, bundle, candidates.candidates)
    if idx is None:
        return None
    if not isinstance(idx, int) or not 0 <= idx < len(candidates):
        raise SelectionError(f"oracle located goal at candidate {idx!r} of {len(candidates)}")
    return candidates[idx].point


def decide_stop(
    goal_fix: tuple[float, float] | None,
    pose: Pose,
    t_s: float,
    t: int,
    t_max: int,
) -> bool:
    """Stop when within ``t_s`` of a fixed goal position or at the step cap."""
    if t >= t_max:
        return True
    if goal_fix is not None and planar_distance(pose, goal_fix) < t_s:
        return True
    return False
