"""Per-episode hierarchical memory: exploration area map, EMA value map,
sliding observation window, and the cross-episode common-sense rule store.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ConfigError
from .geometry import GridCoord, Pose, planar_distance, wrap_angle
from .simworld import DIRECTIONS, SceneSpec

SCORE_MIN = 0
SCORE_MAX = 10
SECTOR_HALF_WIDTH = math.radians(30.0)


class CellState(IntEnum):
    UNKNOWN = 0
    EXPLORED = 1
    FRONTIER = 2
    UNREACHABLE = 3


# Rendering palette (RGB). Visited positions get a dot overlay.
COLOR_UNKNOWN = (255, 255, 255)
COLOR_EXPLORED = (160, 160, 160)
COLOR_FRONTIER = (80, 200, 80)
COLOR_UNREACHABLE = (0, 0, 0)
COLOR_VISITED = (200, 40, 40)

_PALETTE = np.array(
    [COLOR_UNKNOWN, COLOR_EXPLORED, COLOR_FRONTIER, COLOR_UNREACHABLE], dtype=np.uint8
)


@dataclass
class ExplorationAreaMap:
    """BEV record of cell exploration states plus the visited trail.

    Explored and Unreachable are absorbing: a cell never reverts to Unknown
    or Frontier once promoted, so exploration progress accumulates.
    """

    resolution: float
    grids: list[np.ndarray]
    visited: list[GridCoord] = field(default_factory=list)

    @classmethod
    def for_scene(cls, scene: SceneSpec) -> "ExplorationAreaMap":
        grids = [
            np.zeros((g.height, g.width), dtype=np.uint8) for g in scene.floors
        ]
        return cls(resolution=scene.resolution, grids=grids)

    def state_at(self, cell: GridCoord) -> CellState:
        return CellState(int(self.grids[cell.floor][cell.row, cell.col]))

    def cell_of(self, x: float, y: float, floor: int) -> GridCoord:
        res = self.resolution
        return GridCoord(int(math.floor(x / res)), int(math.floor(y / res)), floor)

    def in_bounds(self, floor: int, col: int, row: int) -> bool:
        if not 0 <= floor < len(self.grids):
            return False
        grid = self.grids[floor]
        return 0 <= col < grid.shape[1] and 0 <= row < grid.shape[0]


def mark_observation(
    area: ExplorationAreaMap,
    pose: Pose,
    bev_points,
    t_o: float,
    obstacle_height: float = 0.2,
) -> ExplorationAreaMap:
    """Fold one step's BEV points into the area map.

    ``bev_points`` is an iterable of ((x, y), relative surface height).
    Free points within ``t_o`` of the pose become Explored; free points
    beyond ``t_o`` become Frontier if currently Unknown; points whose height
    exceeds ``obstacle_height`` become Unreachable. Out-of-bounds points are
    dropped. The pose's own cell is marked Explored and appended to the
    visited trail.
    """
    grid = area.grids[pose.floor]
    h, w = grid.shape
    res = area.resolution
    for (px, py), height in bev_points:
        col = int(math.floor(px / res))
        row = int(math.floor(py / res))
        if not (0 <= col < w and 0 <= row < h):
            continue
        state = grid[row, col]
        if state == CellState.UNREACHABLE:
            continue
        if abs(height) > obstacle_height:
            grid[row, col] = CellState.UNREACHABLE
        elif planar_distance(pose, (px, py)) <= t_o:
            grid[row, col] = CellState.EXPLORED
        elif state == CellState.UNKNOWN:
            grid[row, col] = CellState.FRONTIER
    here = area.cell_of(pose.x, pose.y, pose.floor)
    if area.in_bounds(here.floor, here.col, here.row):
        if grid[here.row, here.col] != CellState.UNREACHABLE:
            grid[here.row, here.col] = CellState.EXPLORED
    area.visited.append(here)
    return area


def explored_fraction(area: ExplorationAreaMap, region) -> float:
    """Explored share of a region: |Explored| / |non-Unreachable| cells."""
    cells = list(region)
    if not cells:
        raise ValueError("explored_fraction over an empty region")
    explored = 0
    reachable = 0
    for cell in cells:
        if not area.in_bounds(cell.floor, cell.col, cell.row):
            continue
        state = area.grids[cell.floor][cell.row, cell.col]
        if state == CellState.UNREACHABLE:
            continue
        reachable += 1
        if state == CellState.EXPLORED:
            explored += 1
    if reachable == 0:
        return 1.0
    return explored / reachable


@dataclass
class ExplorationValueMap:
    """BEV grid of EMA-fused direction scores (one value per cell)."""

    resolution: float
    values: list[np.ndarray]
    initialized: list[np.ndarray]

    @classmethod
    def for_scene(cls, scene: SceneSpec) -> "ExplorationValueMap":
        values = [np.zeros((g.height, g.width), dtype=np.float64) for g in scene.floors]
        init = [np.zeros((g.height, g.width), dtype=bool) for g in scene.floors]
        return cls(resolution=scene.resolution, values=values, initialized=init)


def _sector_masks(vmap: ExplorationValueMap, pose: Pose, sector_radius: float):
    """Boolean cell masks for the six 60-degree sectors around the pose."""
    values = vmap.values[pose.floor]
    h, w = values.shape
    res = vmap.resolution
    r_cells = int(math.ceil(sector_radius / res)) + 1
    pc = int(math.floor(pose.x / res))
    pr = int(math.floor(pose.y / res))
    c0, c1 = max(0, pc - r_cells), min(w, pc + r_cells + 1)
    r0, r1 = max(0, pr - r_cells), min(h, pr + r_cells + 1)
    cols, rows = np.meshgrid(np.arange(c0, c1), np.arange(r0, r1))
    cx = (cols + 0.5) * res - pose.x
    cy = (rows + 0.5) * res - pose.y
    dist = np.hypot(cx, cy)
    azim = np.arctan2(cy, cx)
    out = {}
    for d in DIRECTIONS:
        center = pose.heading + math.radians(d)
        delta = np.remainder(azim - center + math.pi, 2.0 * math.pi) - math.pi
        sector = (dist <= sector_radius) & (dist > 0.0) & (np.abs(delta) <= SECTOR_HALF_WIDTH)
        out[d] = (slice(r0, r1), slice(c0, c1), sector)
    return out


def fuse_value(
    vmap: ExplorationValueMap,
    pose: Pose,
    direction_scores,
    alpha: float,
    sector_radius: float,
) -> ExplorationValueMap:
    """EMA-fuse the six current direction scores into their BEV sectors.

    Every cell in a direction's 60-degree sector of ``sector_radius`` takes
    ``alpha*current + (1-alpha)*old``; cells never written before take the
    current score directly.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    for d in DIRECTIONS:
        s = float(direction_scores[d])
        if not SCORE_MIN <= s <= SCORE_MAX:
            raise ValueError(f"score {s} for direction {d} outside [{SCORE_MIN}, {SCORE_MAX}]")
    values = vmap.values[pose.floor]
    init = vmap.initialized[pose.floor]
    for d, (rsl, csl, sector) in _sector_masks(vmap, pose, sector_radius).items():
        s = float(direction_scores[d])
        vals = values[rsl, csl]
        ini = init[rsl, csl]
        fresh = sector & ~ini
        old = sector & ini
        vals[fresh] = s
        vals[old] = alpha * s + (1.0 - alpha) * vals[old]
        ini[sector] = True
        values[rsl, csl] = vals
        init[rsl, csl] = ini
    return vmap


def read_direction_scores(
    vmap: ExplorationValueMap,
    pose: Pose,
    read_radius: float,
    fallback,
) -> dict[int, float]:
    """Mean fused value per direction over a probe sector near the pose.

    ``read_radius`` should be small compared to the fused sector radius so
    the read tracks recent scores; directions whose probe holds no
    initialized cell fall back to the caller-provided current score.
    """
    values = vmap.values[pose.floor]
    init = vmap.initialized[pose.floor]
    out = {}
    for d, (rsl, csl, sector) in _sector_masks(vmap, pose, read_radius).items():
        mask = sector & init[rsl, csl]
        if mask.any():
            out[d] = float(values[rsl, csl][mask].mean())
        else:
            out[d] = float(fallback[d])
    return out


@dataclass(frozen=True)
class Frame:
    """One buffered observation: surround signature raster plus pose."""

    raster: np.ndarray
    pose: Pose
    step: int


class SlidingWindow:
    """FIFO buffer of the last ``capacity`` frames (uncompressed memory)."""

    def __init__(self, capacity: int = 1):
        if capacity < 1:
            raise ValueError(f"window capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._frames: deque = deque(maxlen=capacity)

    @property
    def frames(self) -> list:
        return list(self._frames)

    def latest(self):
        return self._frames[-1] if self._frames else None

    def __len__(self) -> int:
        return len(self._frames)


def push_frame(window: SlidingWindow, frame) -> SlidingWindow:
    """Append a frame, evicting the oldest when over capacity."""
    window._frames.append(frame)
    return window


CS_CATEGORIES = ("self", "goal", "environment")

# Default rules injected verbatim into analysis prompts.
DEFAULT_COMMON_SENSE = (
    ("self", "Your body width is approximately 0.4 meters; do not attempt gaps narrower than your body."),
    ("goal", "Match the goal category itself, not visually similar furniture (a couch is not a bed)."),
    ("environment", "You cannot pass through a closed door; prefer open doorways and clear floor."),
)


@dataclass(frozen=True)
class CommonSenseStore:
    """Cross-episode rule store, read-only during an episode."""

    rules: tuple[tuple[str, str], ...] = DEFAULT_COMMON_SENSE

    def __post_init__(self):
        for category, text in self.rules:
            if category not in CS_CATEGORIES:
                raise ConfigError(f"unknown common-sense category {category!r}")
            if not text.strip():
                raise ConfigError("empty common-sense rule text")

    def prompt_lines(self) -> list[str]:
        return [f"[{category}] {text}" for category, text in self.rules]

    @classmethod
    def from_file(cls, path) -> "CommonSenseStore":
        """Load rules from a plain-text file of ``category: text`` lines.

        Blank lines and ``#`` comments are ignored.
        """
        rules = []
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    if ":" not in line:
                        raise ConfigError(f"{path}:{lineno}: expected 'category: rule text'")
                    category, text = line.split(":", 1)
                    rules.append((category.strip(), text.strip()))
        except OSError as exc:
            raise ConfigError(f"cannot read common-sense file {path}: {exc}") from exc
        return cls(rules=tuple(rules))


def render_area_map(area: ExplorationAreaMap, floor: int, scale: int = 4) -> np.ndarray:
    """Deterministic RGB raster of one floor of the area map.

    White=Unknown, gray=Explored, green=Frontier, black=Unreachable; visited
    cells carry a centered dot. Identical maps produce byte-identical
    rasters.
    """
    if not 0 <= floor < len(area.grids):
        raise ValueError(f"floor {floor} not in map (has {len(area.grids)})")
    if scale < 1:
        raise ValueError("scale must be >= 1")
    grid = area.grids[floor]
    img = _PALETTE[grid]
    img = np.kron(img, np.ones((scale, scale, 1), dtype=np.uint8))
    dot = max(1, scale // 2)
    off = (scale - dot) // 2
    for cell in area.visited:
        if cell.floor != floor:
            continue
        r0 = cell.row * scale + off
        c0 = cell.col * scale + off
        img[r0 : r0 + dot, c0 : c0 + dot] = COLOR_VISITED
    return img
