"""Deterministic 2.5D multi-room, multi-floor gridworld.

Floors are uniform grids of cells (``resolution`` meters per side) with a
per-cell surface height. Walls and closed doors always block rays and
motion; other surfaces block when they rise more than ``obstacle_height``
above the height at the ray/motion origin. Stairs are linked cell pairs
joining two floors.

Scene files are JSON with a ``format`` tag (see :data:`SCENE_FORMAT`).
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneError
from .geometry import (
    CameraModel,
    GridCoord,
    PolarAction,
    Pose,
    normalize_heading,
    wrap_angle,
)

SCENE_FORMAT = "goalnav-scene/1"
WALL_HEIGHT = 2.0
DEFAULT_MAX_RANGE = 10.0

# Six panoramic view directions, degrees counterclockwise from the heading.
DIRECTIONS = (0, 60, 120, 180, 240, 300)


@dataclass(frozen=True)
class Door:
    floor: int
    col: int
    row: int
    open: bool = True

    @property
    def cell(self) -> GridCoord:
        return GridCoord(self.col, self.row, self.floor)


@dataclass(frozen=True)
class StairLink:
    a: GridCoord
    b: GridCoord


@dataclass(frozen=True)
class SceneObject:
    category: str
    floor: int
    col: int
    row: int

    @property
    def cell(self) -> GridCoord:
        return GridCoord(self.col, self.row, self.floor)


@dataclass(frozen=True)
class Room:
    name: str
    floor: int
    col_min: int
    row_min: int
    col_max: int
    row_max: int

    def contains(self, col: int, row: int) -> bool:
        return self.col_min <= col <= self.col_max and self.row_min <= row <= self.row_max

    def cells(self):
        for row in range(self.row_min, self.row_max + 1):
            for col in range(self.col_min, self.col_max + 1):
                yield GridCoord(col, row, self.floor)


@dataclass
class FloorGrid:
    width: int
    height: int
    surface: np.ndarray  # [row, col] float64, meters above ground

    @classmethod
    def flat(cls, width: int, height: int) -> "FloorGrid":
        return cls(width, height, np.zeros((height, width), dtype=np.float64))


@dataclass
class SceneSpec:
    resolution: float
    floors: list[FloorGrid]
    walls: set[GridCoord] = field(default_factory=set)
    doors: dict[GridCoord, Door] = field(default_factory=dict)
    stairs: list[StairLink] = field(default_factory=list)
    rooms: list[Room] = field(default_factory=list)
    objects: list[SceneObject] = field(default_factory=list)
    obstacle_height: float = 0.2

    def __post_init__(self):
        self._stair_map = {}
        for link in self.stairs:
            self._stair_map[link.a] = link.b
            self._stair_map[link.b] = link.a

    # -- cell queries ------------------------------------------------------

    def in_bounds(self, floor: int, col: int, row: int) -> bool:
        if not 0 <= floor < len(self.floors):
            return False
        grid = self.floors[floor]
        return 0 <= col < grid.width and 0 <= row < grid.height

    def is_wall(self, floor: int, col: int, row: int) -> bool:
        return GridCoord(col, row, floor) in self.walls

    def door_at(self, floor: int, col: int, row: int) -> Door | None:
        return self.doors.get(GridCoord(col, row, floor))

    def surface(self, floor: int, col: int, row: int) -> float:
        return float(self.floors[floor].surface[row, col])

    def is_traversable(self, floor: int, col: int, row: int) -> bool:
        """Standalone cell passability: in bounds, not a wall, not a closed door."""
        if not self.in_bounds(floor, col, row):
            return False
        if self.is_wall(floor, col, row):
            return False
        door = self.door_at(floor, col, row)
        return door is None or door.open

    def blocks_ray(self, floor: int, col: int, row: int, origin_surface: float) -> bool:
        """Ray blocking from an origin standing at ``origin_surface``."""
        if not self.in_bounds(floor, col, row):
            return True
        if self.is_wall(floor, col, row):
            return True
        door = self.door_at(floor, col, row)
        if door is not None and not door.open:
            return True
        return self.surface(floor, col, row) - origin_surface > self.obstacle_height

    def hit_height(self, floor: int, col: int, row: int, origin_surface: float) -> float:
        """Surface height relative to the ray origin at a blocked cell."""
        if not self.in_bounds(floor, col, row) or self.is_wall(floor, col, row):
            return WALL_HEIGHT
        door = self.door_at(floor, col, row)
        if door is not None and not door.open:
            return WALL_HEIGHT
        return self.surface(floor, col, row) - origin_surface

    def can_step(self, floor: int, c0: int, r0: int, c1: int, r1: int) -> bool:
        """Motion edge rule between adjacent cells: both open, small height delta."""
        if not (self.is_traversable(floor, c0, r0) and self.is_traversable(floor, c1, r1)):
            return False
        return abs(self.surface(floor, c1, r1) - self.surface(floor, c0, r0)) <= self.obstacle_height

    def stair_link(self, cell: GridCoord) -> GridCoord | None:
        return self._stair_map.get(cell)

    def cell_of(self, x: float, y: float, floor: int = 0) -> GridCoord:
        res = self.resolution
        return GridCoord(int(math.floor(x / res)), int(math.floor(y / res)), floor)

    def cell_center(self, cell: GridCoord) -> tuple[float, float]:
        res = self.resolution
        return ((cell.col + 0.5) * res, (cell.row + 0.5) * res)

    def object_position(self, obj: SceneObject) -> tuple[float, float]:
        return self.cell_center(obj.cell)

    def room_of(self, floor: int, col: int, row: int) -> Room | None:
        for room in self.rooms:
            if room.floor == floor and room.contains(col, row):
                return room
        return None

    def rooms_on(self, floor: int) -> list[Room]:
        return [r for r in self.rooms if r.floor == floor]

    def goal_cells(self, category: str) -> list[GridCoord]:
        return [o.cell for o in self.objects if o.category == category]

    def stairs_cells_on(self, floor: int) -> list[GridCoord]:
        return sorted({c for c in self._stair_map if c.floor == floor})

    def diameter(self) -> float:
        return max(
            math.hypot(g.width, g.height) * self.resolution for g in self.floors
        )

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        if self.resolution <= 0:
            raise SceneError(f"resolution must be positive, got {self.resolution}")
        if not self.floors:
            raise SceneError("scene has no floors")
        for cell in sorted(self.walls):
            if not self.in_bounds(cell.floor, cell.col, cell.row):
                raise SceneError(f"wall {tuple(cell)} is out of bounds")
        for cell, door in sorted(self.doors.items()):
            if not self.in_bounds(door.floor, door.col, door.row):
                raise SceneError(f"door at {tuple(cell)} is out of bounds")
            if cell in self.walls:
                raise SceneError(f"door at {tuple(cell)} overlaps a wall cell")
        for i, link in enumerate(self.stairs):
            for end in (link.a, link.b):
                if not self.in_bounds(end.floor, end.col, end.row):
                    raise SceneError(f"stairs[{i}] endpoint {tuple(end)} is out of bounds")
                if not self.is_traversable(end.floor, end.col, end.row):
                    raise SceneError(f"stairs[{i}] endpoint {tuple(end)} is not traversable")
            if link.a.floor == link.b.floor:
                raise SceneError(f"stairs[{i}] links cells on the same floor {link.a.floor}")
        for i, obj in enumerate(self.objects):
            if not self.is_traversable(obj.floor, obj.col, obj.row):
                raise SceneError(
                    f"object[{i}] {obj.category!r} at {(obj.floor, obj.col, obj.row)} "
                    "is not on a traversable cell"
                )
        self._validate_room_tiling()

    def _validate_room_tiling(self) -> None:
        for floor_idx, grid in enumerate(self.floors):
            rooms = self.rooms_on(floor_idx)
            for row in range(grid.height):
                for col in range(grid.width):
                    cell = GridCoord(col, row, floor_idx)
                    if cell in self.walls or cell in self.doors:
                        continue
                    owners = sum(1 for r in rooms if r.contains(col, row))
                    if owners != 1:
                        raise SceneError(
                            f"cell {(floor_idx, col, row)} belongs to {owners} rooms; "
                            "rooms must tile the non-wall, non-door area"
                        )


# -- serialization ---------------------------------------------------------


def scene_to_dict(scene: SceneSpec) -> dict:
    floors = []
    for grid in scene.floors:
        cells = []
        rows, cols = np.nonzero(grid.surface)
        for row, col in sorted(zip(rows.tolist(), cols.tolist())):
            cells.append([int(col), int(row), float(grid.surface[row, col])])
        floors.append({"width": grid.width, "height": grid.height, "surface": cells})
    return {
        "format": SCENE_FORMAT,
        "resolution": scene.resolution,
        "obstacle_height": scene.obstacle_height,
        "floors": floors,
        "walls": [[c.floor, c.col, c.row] for c in sorted(scene.walls)],
        "doors": [
            {"floor": d.floor, "col": d.col, "row": d.row, "open": d.open}
            for _, d in sorted(scene.doors.items())
        ],
        "stairs": [
            {"from": [l.a.floor, l.a.col, l.a.row], "to": [l.b.floor, l.b.col, l.b.row]}
            for l in scene.stairs
        ],
        "rooms": [
            {
                "name": r.name,
                "floor": r.floor,
                "col_min": r.col_min,
                "row_min": r.row_min,
                "col_max": r.col_max,
                "row_max": r.row_max,
            }
            for r in scene.rooms
        ],
        "objects": [
            {"category": o.category, "floor": o.floor, "col": o.col, "row": o.row}
            for o in scene.objects
        ],
    }


def scene_from_dict(data: dict) -> SceneSpec:
    try:
        fmt = data["format"]
        if fmt != SCENE_FORMAT:
            raise SceneError(f"unsupported scene format {fmt!r}, expected {SCENE_FORMAT!r}")
        floors = []
        for i, f in enumerate(data["floors"]):
            grid = FloorGrid.flat(int(f["width"]), int(f["height"]))
            for col, row, h in f.get("surface", []):
                if not (0 <= int(col) < grid.width and 0 <= int(row) < grid.height):
                    raise SceneError(f"floors[{i}] surface cell {(col, row)} out of bounds")
                grid.surface[int(row), int(col)] = float(h)
            floors.append(grid)
        walls = {GridCoord(c, r, f) for f, c, r in data.get("walls", [])}
        doors = {}
        for d in data.get("doors", []):
            door = Door(int(d["floor"]), int(d["col"]), int(d["row"]), bool(d["open"]))
            doors[door.cell] = door
        stairs = [
            StairLink(GridCoord(s["from"][1], s["from"][2], s["from"][0]),
                      GridCoord(s["to"][1], s["to"][2], s["to"][0]))
            for s in data.get("stairs", [])
        ]
        rooms = [
            Room(r["name"], int(r["floor"]), int(r["col_min"]), int(r["row_min"]),
                 int(r["col_max"]), int(r["row_max"]))
            for r in data.get("rooms", [])
        ]
        objects = [
            SceneObject(o["category"], int(o["floor"]), int(o["col"]), int(o["row"]))
            for o in data.get("objects", [])
        ]
        scene = SceneSpec(
            resolution=float(data["resolution"]),
            floors=floors,
            walls=walls,
            doors=doors,
            stairs=stairs,
            rooms=rooms,
            objects=objects,
            obstacle_height=float(data.get("obstacle_height", 0.2)),
        )
    except SceneError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SceneError(f"malformed scene data: {exc}") from exc
    scene.validate()
    return scene


def load_scene(path) -> SceneSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise SceneError(f"cannot read scene file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene file {path} is not valid JSON: {exc}") from exc
    return scene_from_dict(data)


def save_scene(scene: SceneSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- raycasting ------------------------------------------------------------


def raycast(
    scene: SceneSpec,
    floor: int,
    x: float,
    y: float,
    azimuth: float,
    max_dist: float,
    origin_surface: float,
) -> tuple[float, float, GridCoord | None]:
    """March a planar ray through the grid (Amanatides-Woo traversal).

    Returns ``(distance, relative hit height, hit cell)``. When nothing
    blocks within ``max_dist`` the distance is ``max_dist``, the height is
    the surface delta at the endpoint cell and the hit cell is None.
    """
    res = scene.resolution
    dx, dy = math.cos(azimuth), math.sin(azimuth)
    col = int(math.floor(x / res))
    row = int(math.floor(y / res))

    if dx > 0:
        step_c, t_max_c, t_delta_c = 1, ((col + 1) * res - x) / dx, res / dx
    elif dx < 0:
        step_c, t_max_c, t_delta_c = -1, (col * res - x) / dx, -res / dx
    else:
        step_c, t_max_c, t_delta_c = 0, math.inf, math.inf
    if dy > 0:
        step_r, t_max_r, t_delta_r = 1, ((row + 1) * res - y) / dy, res / dy
    elif dy < 0:
        step_r, t_max_r, t_delta_r = -1, (row * res - y) / dy, -res / dy
    else:
        step_r, t_max_r, t_delta_r = 0, math.inf, math.inf

    while True:
        if t_max_c <= t_max_r:
            t_entry = t_max_c
            col += step_c
            t_max_c += t_delta_c
        else:
            t_entry = t_max_r
            row += step_r
            t_max_r += t_delta_r
        if t_entry >= max_dist:
            end = GridCoord(
                int(math.floor((x + max_dist * dx) / res)),
                int(math.floor((y + max_dist * dy) / res)),
                floor,
            )
            height = 0.0
            if scene.in_bounds(floor, end.col, end.row) and not scene.is_wall(floor, end.col, end.row):
                height = scene.surface(floor, end.col, end.row) - origin_surface
            return max_dist, height, None
        if scene.blocks_ray(floor, col, row, origin_surface):
            return t_entry, scene.hit_height(floor, col, row, origin_surface), GridCoord(col, row, floor)


# -- observations ----------------------------------------------------------


@dataclass(frozen=True)
class SemanticHit:
    """An unoccluded entity in the frustum: category, bearing relative to the
    agent's heading, and planar range."""

    category: str
    bearing: float
    range_m: float


@dataclass(frozen=True)
class SimObservation:
    """One rendered view: per-column depth readings plus semantic hits.

    ``depth`` readings are ranges along the pitched optical ray (planar
    distance divided by cos(pitch)); ``hit_heights`` are the surface heights
    of the first blocker relative to the agent's standing surface, parallel
    to ``depth``.
    """

    direction: int
    pose: Pose
    camera: CameraModel
    depth: np.ndarray
    hit_heights: np.ndarray
    semantics: tuple[SemanticHit, ...]
    max_range: float

    def column_azimuths(self) -> list[float]:
        center = self.pose.heading + math.radians(self.direction)
        return [center + off for off in self.camera.column_offsets()]

    def planar_depths(self) -> np.ndarray:
        return self.depth * math.cos(self.camera.pitch)


def render_observation(
    scene: SceneSpec,
    pose: Pose,
    camera: CameraModel,
    direction: int,
    max_range: float = DEFAULT_MAX_RANGE,
) -> SimObservation:
    """Raycast one view at ``direction`` degrees CCW from the heading.

    Per-column depth is the distance to the first blocking surface (walls,
    closed doors, and height steps above ``scene.obstacle_height``); the
    semantic list holds exactly the unoccluded objects and stairs markers
    inside the frustum.
    """
    if not scene.in_bounds(pose.floor, *scene.cell_of(pose.x, pose.y)[:2]):
        raise SceneError(f"pose {(pose.x, pose.y, pose.floor)} is outside the scene")
    yaw = pose.heading + math.radians(direction)
    origin_surface = pose.height_z
    cos_p = math.cos(camera.pitch)

    depths = np.empty(camera.columns, dtype=np.float64)
    heights = np.empty(camera.columns, dtype=np.float64)
    for i, off in enumerate(camera.column_offsets()):
        dist, height, _ = raycast(
            scene, pose.floor, pose.x, pose.y, yaw + off, max_range, origin_surface
        )
        depths[i] = dist / cos_p
        heights[i] = height

    half = camera.horizontal_fov / 2.0
    hits = []
    entries = [(o.category, scene.object_position(o)) for o in scene.objects if o.floor == pose.floor]
    entries += [("stairs", scene.cell_center(c)) for c in scene.stairs_cells_on(pose.floor)]
    for category, (ox, oy) in entries:
        rng = math.hypot(ox - pose.x, oy - pose.y)
        if rng > max_range or rng == 0.0:
            continue
        az = math.atan2(oy - pose.y, ox - pose.x)
        if abs(wrap_angle(az - yaw)) > half + 1e-12:
            continue
        dist, _, _ = raycast(scene, pose.floor, pose.x, pose.y, az, max_range, origin_surface)
        if dist + 1e-9 >= rng:
            hits.append(SemanticHit(category, wrap_angle(az - pose.heading), rng))
    # closed doors read as semantic surfaces at their visible face
    for cell, door in sorted(scene.doors.items()):
        if door.open or door.floor != pose.floor:
            continue
        dx, dy = scene.cell_center(cell)
        rng = math.hypot(dx - pose.x, dy - pose.y)
        if rng > max_range or rng == 0.0:
            continue
        az = math.atan2(dy - pose.y, dx - pose.x)
        if abs(wrap_angle(az - yaw)) > half + 1e-12:
            continue
        dist, _, hit_cell = raycast(scene, pose.floor, pose.x, pose.y, az, max_range, origin_surface)
        if hit_cell == cell:
            hits.append(SemanticHit("closed_door", wrap_angle(az - pose.heading), dist))
    hits.sort(key=lambda h: (h.range_m, h.bearing, h.category))
    return SimObservation(
        direction=direction,
        pose=pose,
        camera=camera,
        depth=depths,
        hit_heights=heights,
        semantics=tuple(hits),
        max_range=max_range,
    )


def render_panorama(
    scene: SceneSpec, pose: Pose, camera: CameraModel, max_range: float = DEFAULT_MAX_RANGE
) -> dict[int, SimObservation]:
    return {d: render_observation(scene, pose, camera, d, max_range) for d in DIRECTIONS}


def sweep_observation(
    obs: SimObservation, step: float
) -> tuple[list[tuple[float, float]], list[tuple[tuple[float, float], float]]]:
    """Free interior points plus per-column endpoints of one observation.

    Interior points (assumed at ground height) are sampled every ``step``
    meters along each column's planar ray; endpoints carry the observed
    relative surface height of the blocker (or endpoint ground).
    """
    from .geometry import points_along_ray

    interior: list[tuple[float, float]] = []
    endpoints: list[tuple[tuple[float, float], float]] = []
    planar = obs.planar_depths()
    pose = obs.pose
    for az, d, h in zip(obs.column_azimuths(), planar.tolist(), obs.hit_heights.tolist()):
        interior.extend(points_along_ray(pose.x, pose.y, az, d, step))
        endpoints.append(((pose.x + d * math.cos(az), pose.y + d * math.sin(az)), h))
    return interior, endpoints


# -- actions ---------------------------------------------------------------


@dataclass(frozen=True)
class ActionOutcome:
    new_pose: Pose
    moved: bool
    collided: bool
    floor_changed: bool


def apply_action(
    scene: SceneSpec,
    pose: Pose,
    action: PolarAction,
    allow_stairs: bool = True,
    step: float | None = None,
) -> ActionOutcome:
    """Advance the agent along the action's bearing, truncating at blockers.

    The heading always updates to the motion azimuth. Motion stops at the
    last passable position before a blocking surface (``collided=True``).
    Entering a stairs cell with ``allow_stairs`` transfers the agent to the
    linked cell on the other floor (``floor_changed=True``).
    """
    az = normalize_heading(pose.heading + action.bearing)
    if step is None:
        step = scene.resolution / 8.0
    ux, uy = math.cos(az), math.sin(az)
    floor = pose.floor
    cur = scene.cell_of(pose.x, pose.y, floor)
    good_x, good_y = pose.x, pose.y
    collided = False
    floor_changed = False
    new_floor = floor
    t = 0.0
    while t < action.range_m:
        t = min(t + step, action.range_m)
        px, py = pose.x + t * ux, pose.y + t * uy
        cell = scene.cell_of(px, py, floor)
        if cell != cur:
            if not scene.can_step(floor, cur.col, cur.row, cell.col, cell.row):
                collided = True
                break
            cur = cell
            if allow_stairs:
                linked = scene.stair_link(cell)
                if linked is not None:
                    cx, cy = scene.cell_center(linked)
                    new_floor = linked.floor
                    good_x, good_y = cx, cy
                    floor_changed = True
                    break
        good_x, good_y = px, py

    if floor_changed:
        height = scene.surface(new_floor, *scene.cell_of(good_x, good_y, new_floor)[:2])
        new_pose = Pose(good_x, good_y, new_floor, height, az)
        moved = True
    else:
        end_cell = scene.cell_of(good_x, good_y, floor)
        height = scene.surface(floor, end_cell.col, end_cell.row)
        new_pose = Pose(good_x, good_y, floor, height, az)
        moved = math.hypot(good_x - pose.x, good_y - pose.y) > 1e-12
    return ActionOutcome(new_pose=new_pose, moved=moved, collided=collided, floor_changed=floor_changed)


# -- geodesics -------------------------------------------------------------


def geodesic_shortest_path(
    scene: SceneSpec,
    a: Pose | tuple[float, float, int],
    b: tuple[float, float, int],
) -> float | None:
    """Shortest traversable path length in meters, or None when unreachable.

    Breadth-first search over the 4-connected grid (uniform cell cost equal
    to the resolution) with stairs links traversed at one cell cost.
    """
    if isinstance(a, Pose):
        start = scene.cell_of(a.x, a.y, a.floor)
    else:
        start = scene.cell_of(a[0], a[1], a[2])
    goal = scene.cell_of(b[0], b[1], b[2])
    for name, cell in (("start", start), ("goal", goal)):
        if not scene.in_bounds(cell.floor, cell.col, cell.row):
            raise ValueError(f"{name} cell {tuple(cell)} is off the grid")
        if not scene.is_traversable(cell.floor, cell.col, cell.row):
            raise ValueError(f"{name} cell {tuple(cell)} is not traversable")
    if start == goal:
        return 0.0
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        cell, steps = queue.popleft()
        neighbors = []
        for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = GridCoord(cell.col + dc, cell.row + dr, cell.floor)
            if scene.in_bounds(nxt.floor, nxt.col, nxt.row) and scene.can_step(
                cell.floor, cell.col, cell.row, nxt.col, nxt.row
            ):
                neighbors.append(nxt)
        linked = scene.stair_link(cell)
        if linked is not None:
            neighbors.append(linked)
        for nxt in neighbors:
            if nxt in seen:
                continue
            if nxt == goal:
                return (steps + 1) * scene.resolution
            seen.add(nxt)
            queue.append((nxt, steps + 1))
    return None


def reachable_cells(scene: SceneSpec, start: GridCoord) -> set[GridCoord]:
    """Flood fill over motion edges and stairs links from a start cell."""
    seen = {start}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = GridCoord(cell.col + dc, cell.row + dr, cell.floor)
            if (
                nxt not in seen
                and scene.in_bounds(nxt.floor, nxt.col, nxt.row)
                and scene.can_step(cell.floor, cell.col, cell.row, nxt.col, nxt.row)
            ):
                seen.add(nxt)
                queue.append(nxt)
        linked = scene.stair_link(cell)
        if linked is not None and linked not in seen:
            seen.add(linked)
            queue.append(linked)
    return seen
