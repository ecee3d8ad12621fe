"""Seeded scene generation: desk-scale multi-room floor plans, optional
multi-floor stairs, clutter, and deliberately adversarial "trap" layouts
whose tempting shortcut is a closed door next to the goal.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .errors import GenerationError
from .geometry import GridCoord, Pose
from .simworld import (
    Door,
    FloorGrid,
    Room,
    SceneObject,
    SceneSpec,
    StairLink,
    geodesic_shortest_path,
    reachable_cells,
)

CLUTTER_HEIGHT = 0.5


@dataclass(frozen=True)
class GenParams:
    """Bounds-checked generation parameters."""

    floors: int = 1
    width: int = 26
    height: int = 20
    rooms_per_floor: int = 3
    clutter: float = 0.04
    goal: str = "bed"
    goal_floor: int | None = None
    n_goals: int = 1
    min_goal_dist: float = 2.0
    resolution: float = 0.25
    trap: bool = False

    def validate(self) -> None:
        if not 1 <= self.floors <= 4:
            raise GenerationError(f"floors must be in 1..4, got {self.floors}")
        if not 12 <= self.width <= 200 or not 12 <= self.height <= 200:
            raise GenerationError(f"grid must be 12..200 cells per side, got {self.width}x{self.height}")
        if not 1 <= self.rooms_per_floor <= 8:
            raise GenerationError(f"rooms_per_floor must be in 1..8, got {self.rooms_per_floor}")
        if not 0.0 <= self.clutter <= 0.2:
            raise GenerationError(f"clutter must be in [0, 0.2], got {self.clutter}")
        if self.n_goals < 1:
            raise GenerationError("n_goals must be >= 1")
        if self.goal_floor is not None and not 0 <= self.goal_floor < self.floors:
            raise GenerationError(f"goal_floor {self.goal_floor} outside 0..{self.floors - 1}")
        if not self.goal.strip():
            raise GenerationError("goal category must be non-empty")


@dataclass(frozen=True)
class GeneratedEpisode:
    """A generated scene plus a suggested start pose and goal category."""

    scene: SceneSpec
    start: Pose
    goal: str


def _split_rects(rng: random.Random, width: int, height: int, n_rooms: int):
    """Partition the interior into room rects; walls carry one door gap each."""
    rects = [(1, 1, width - 2, height - 2)]
    walls: list[GridCoord] = []
    doors: list[tuple[int, int]] = []
    while len(rects) < n_rooms:
        splittable = [
            (i, r)
            for i, r in enumerate(rects)
            if (r[2] - r[0] >= 7) or (r[3] - r[1] >= 7)
        ]
        if not splittable:
            break
        idx, rect = max(splittable, key=lambda p: (p[1][2] - p[1][0] + 1) * (p[1][3] - p[1][1] + 1))
        c0, r0, c1, r1 = rect
        if c1 - c0 >= r1 - r0:
            cut = rng.randint(c0 + 3, c1 - 3)
            gap = rng.randint(r0, r1)
            walls.extend(GridCoord(cut, r, 0) for r in range(r0, r1 + 1) if r != gap)
            doors.append((cut, gap))
            rects[idx : idx + 1] = [(c0, r0, cut - 1, r1), (cut + 1, r0, c1, r1)]
        else:
            cut = rng.randint(r0 + 3, r1 - 3)
            gap = rng.randint(c0, c1)
            walls.extend(GridCoord(c, cut, 0) for c in range(c0, c1 + 1) if c != gap)
            doors.append((gap, cut))
            rects[idx : idx + 1] = [(c0, r0, c1, cut - 1), (c0, cut + 1, c1, r1)]
    return rects, walls, doors


def _perimeter(width: int, height: int, floor: int) -> set[GridCoord]:
    cells = set()
    for c in range(width):
        cells.add(GridCoord(c, 0, floor))
        cells.add(GridCoord(c, height - 1, floor))
    for r in range(height):
        cells.add(GridCoord(0, r, floor))
        cells.add(GridCoord(width - 1, r, floor))
    return cells


def _ground_cells(scene: SceneSpec, floor: int) -> list[GridCoord]:
    grid = scene.floors[floor]
    out = []
    for row in range(grid.height):
        for col in range(grid.width):
            cell = GridCoord(col, row, floor)
            if (
                scene.is_traversable(floor, col, row)
                and scene.surface(floor, col, row) == 0.0
                and cell not in scene.doors
            ):
                out.append(cell)
    return out


def _floor_connected(scene: SceneSpec, floor: int) -> bool:
    ground = _ground_cells(scene, floor)
    if not ground:
        return False
    reached = reachable_cells(scene, ground[0])
    return all(c in reached for c in ground)


def _connected_partition(rng: random.Random, params: GenParams, floor: int):
    """Partition one floor into rooms, retrying until every door gap keeps
    the floor connected (a later split can wall over an earlier gap)."""
    for _ in range(20):
        rects, split_walls, gaps = _split_rects(rng, params.width, params.height, params.rooms_per_floor)
        walls = _perimeter(params.width, params.height, 0)
        walls |= set(split_walls)
        doors = {
            GridCoord(col, row, 0): Door(0, col, row, open=True) for col, row in gaps
        }
        probe = SceneSpec(
            resolution=params.resolution,
            floors=[FloorGrid.flat(params.width, params.height)],
            walls=walls,
            doors=doors,
        )
        if _floor_connected(probe, 0):
            return rects, split_walls, gaps
    raise GenerationError(f"could not partition floor {floor} into a connected layout")


def generate_scene(seed: int, params: GenParams) -> GeneratedEpisode:
    """Deterministic scene from a seed; same seed, same scene.

    Non-trap scenes guarantee a traversable path from the start to every
    placed goal. Trap layouts instead stage a closed-door shortcut directly
    beside the goal, with a longer open detour.
    """
    params.validate()
    rng = random.Random(seed)
    if params.trap:
        return _generate_trap(rng, params)

    walls: set[GridCoord] = set()
    doors: dict[GridCoord, Door] = {}
    rooms: list[Room] = []
    floors: list[FloorGrid] = []
    for f in range(params.floors):
        floors.append(FloorGrid.flat(params.width, params.height))
        walls |= _perimeter(params.width, params.height, f)
        rects, split_walls, gaps = _connected_partition(rng, params, f)
        walls |= {GridCoord(c.col, c.row, f) for c in split_walls}
        for col, row in gaps:
            door = Door(f, col, row, open=True)
            doors[door.cell] = door
        for i, (c0, r0, c1, r1) in enumerate(rects):
            rooms.append(Room(f"f{f}r{i}", f, c0, r0, c1, r1))

    scene = SceneSpec(
        resolution=params.resolution,
        floors=floors,
        walls=walls,
        doors=doors,
        rooms=rooms,
    )

    # stairs between consecutive floors, on cells clear on both
    stairs = []
    for f in range(params.floors - 1):
        shared = [
            c
            for c in _ground_cells(scene, f)
            if scene.is_traversable(f + 1, c.col, c.row)
            and GridCoord(c.col, c.row, f + 1) not in scene.doors
        ]
        if not shared:
            raise GenerationError(f"no stairs site shared by floors {f} and {f + 1}")
        site = rng.choice(shared)
        stairs.append(StairLink(site, GridCoord(site.col, site.row, f + 1)))
    scene = SceneSpec(
        resolution=params.resolution,
        floors=floors,
        walls=walls,
        doors=doors,
        stairs=stairs,
        rooms=rooms,
    )
    stair_cells = {c for link in stairs for c in (link.a, link.b)}

    # clutter: one cell at a time, reverting any placement that disconnects
    for f in range(params.floors):
        candidates = [
            c
            for c in _ground_cells(scene, f)
            if c not in stair_cells
            and not any(
                GridCoord(c.col + dc, c.row + dr, f) in scene.doors
                for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1), (0, 0))
            )
        ]
        n_clutter = int(len(candidates) * params.clutter)
        for cell in rng.sample(candidates, min(n_clutter, len(candidates))):
            scene.floors[f].surface[cell.row, cell.col] = CLUTTER_HEIGHT
            if not _floor_connected(scene, f):
                scene.floors[f].surface[cell.row, cell.col] = 0.0

    # start on floor 0, goals on the goal floor, wall-backed and reachable
    start_options = [
        c
        for c in _ground_cells(scene, 0)
        if c not in stair_cells
        and all(
            scene.is_traversable(0, c.col + dc, c.row + dr)
            and scene.surface(0, c.col + dc, c.row + dr) == 0.0
            for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1))
        )
    ]
    if not start_options:
        raise GenerationError("no clear start cell on floor 0")
    start_cell = rng.choice(start_options)
    sx, sy = scene.cell_center(start_cell)
    start = Pose(sx, sy, 0, heading=rng.randrange(8) * math.pi / 4.0)

    goal_floor = params.goal_floor if params.goal_floor is not None else 0
    backed = []
    for c in _ground_cells(scene, goal_floor):
        if c == GridCoord(start_cell.col, start_cell.row, goal_floor) or c in stair_cells:
            continue
        for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nc, nr = c.col + dc, c.row + dr
            if scene.is_wall(goal_floor, nc, nr) or (
                scene.in_bounds(goal_floor, nc, nr)
                and scene.surface(goal_floor, nc, nr) >= CLUTTER_HEIGHT
            ):
                backed.append(c)
                break
    rng.shuffle(backed)
    objects = []
    for cell in backed:
        if len(objects) >= params.n_goals:
            break
        gx, gy = scene.cell_center(cell)
        dist = geodesic_shortest_path(scene, start, (gx, gy, goal_floor))
        if dist is None or dist < params.min_goal_dist:
            continue
        objects.append(SceneObject(params.goal, goal_floor, cell.col, cell.row))
    if len(objects) < params.n_goals:
        raise GenerationError(
            f"could not place {params.n_goals} reachable wall-backed goal(s) with seed {seed}"
        )
    scene = SceneSpec(
        resolution=params.resolution,
        floors=floors,
        walls=walls,
        doors=doors,
        stairs=stairs,
        rooms=rooms,
        objects=objects,
    )
    scene.validate()
    return GeneratedEpisode(scene=scene, start=start, goal=params.goal)


def _generate_trap(rng: random.Random, params: GenParams) -> GeneratedEpisode:
    """Bait layout: the goal sits just behind a closed door reached through a
    one-cell alcove slot, while the real route runs through a passage and an
    open doorway far below. A wall stub occludes the lower (solution) zone
    from the bait zone, so a scorer that believes closed doors are passable
    walks into the alcove and stalls there.
    """
    width = rng.randint(24, 30)
    height = rng.randint(16, 20)
    divider = width // 2 + rng.randint(-1, 1)
    door_row = rng.randint(2, 4)
    stub_row = door_row + 6
    gap_row = rng.randint(max(stub_row + 3, height - 5), height - 3)

    floor = FloorGrid.flat(width, height)
    walls = _perimeter(width, height, 0)
    walls |= {
        GridCoord(divider, r, 0)
        for r in range(1, height - 1)
        if r not in (door_row, gap_row)
    }
    # alcove: a one-cell slot leading to the closed door, so the baited
    # agent stalls (stasis) instead of dancing along the open wall face
    for depth in (1, 2):
        walls.add(GridCoord(divider - depth, door_row - 1, 0))
        walls.add(GridCoord(divider - depth, door_row + 1, 0))
    # stub: occludes the near-gap cells from the bait zone (passage on the west)
    walls |= {GridCoord(c, stub_row, 0) for c in range(4, divider)}
    doors = {
        GridCoord(divider, door_row, 0): Door(0, divider, door_row, open=False),
        GridCoord(divider, gap_row, 0): Door(0, divider, gap_row, open=True),
    }
    rooms = [
        Room("bait", 0, 1, 1, divider - 1, stub_row - 1),
        Room("passage", 0, 1, stub_row, 3, stub_row),
        Room("lower", 0, 1, stub_row + 1, divider - 1, height - 2),
        Room("far", 0, divider + 1, 1, width - 2, height - 2),
    ]
    objects = [SceneObject(params.goal, 0, divider + 1, door_row + 4)]
    scene = SceneSpec(
        resolution=params.resolution,
        floors=[floor],
        walls=walls,
        doors=doors,
        rooms=rooms,
        objects=objects,
    )
    scene.validate()
    start_col = rng.randint(2, 4)
    sx, sy = scene.cell_center(GridCoord(start_col, door_row, 0))
    start = Pose(sx, sy, 0, heading=0.0)
    gx, gy = scene.cell_center(objects[0].cell)
    if geodesic_shortest_path(scene, start, (gx, gy, 0)) is None:
        raise GenerationError("trap layout lost its detour route")
    return GeneratedEpisode(scene=scene, start=start, goal=params.goal)


def generate_suite(seed: int, count: int, params: GenParams) -> list[GeneratedEpisode]:
    """Generate ``count`` episodes with per-scene seeds derived from ``seed``."""
    if count < 1:
        raise GenerationError(f"count must be >= 1, got {count}")
    return [generate_scene(seed * 100003 + i, params) for i in range(count)]
