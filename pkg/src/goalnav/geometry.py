"""Planar pose arithmetic, polar action conversion, and depth-to-BEV projection.

Conventions used everywhere in the package:

* world coordinates are meters in the floor plane, one plane per floor;
* headings are absolute azimuths in [0, 2*pi), measured counterclockwise
  from the +x axis;
* bearings are relative to the current heading, wrapped to (-pi, pi],
  positive counterclockwise;
* a depth reading is the range along the (possibly pitched) optical ray to
  the first blocking surface; its floor-plane distance is range*cos(pitch).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import CrossFloorError

TAU = math.tau


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.remainder(angle, TAU)
    if r <= -math.pi:
        r += TAU
    return r


def normalize_heading(angle: float) -> float:
    """Normalize an absolute heading to [0, 2*pi)."""
    return angle % TAU


@dataclass(frozen=True)
class Pose:
    """Agent position and orientation on one floor.

    ``height_z`` is the surface height under the agent, relative to the
    floor's ground level (0.0 on flat ground).
    """

    x: float
    y: float
    floor: int = 0
    height_z: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class CameraModel:
    """Single-row panoramic-column camera: N columns spread over the fov."""

    horizontal_fov: float = math.radians(60.0)
    columns: int = 31
    pitch: float = math.radians(-30.0)

    def __post_init__(self):
        if not 0.0 < self.horizontal_fov < math.pi:
            raise ValueError(f"horizontal_fov must be in (0, pi), got {self.horizontal_fov}")
        if self.columns < 1:
            raise ValueError(f"columns must be >= 1, got {self.columns}")

    def column_offsets(self) -> list[float]:
        """Bearing offset of each column center, leftmost (most CCW) first."""
        fov, n = self.horizontal_fov, self.columns
        return [fov / 2.0 - (i + 0.5) * fov / n for i in range(n)]


@dataclass(frozen=True)
class PolarAction:
    """Expected action: move ``range_m`` meters along ``bearing`` (relative)."""

    range_m: float
    bearing: float

    def __post_init__(self):
        if self.range_m < 0.0:
            raise ValueError(f"action range must be >= 0, got {self.range_m}")
        object.__setattr__(self, "bearing", wrap_angle(self.bearing))


class GridCoord(tuple):
    """(col, row, floor) cell address on a BEV grid."""

    __slots__ = ()

    def __new__(cls, col: int, row: int, floor: int = 0):
        return super().__new__(cls, (int(col), int(row), int(floor)))

    @property
    def col(self) -> int:
        return self[0]

    @property
    def row(self) -> int:
        return self[1]

    @property
    def floor(self) -> int:
        return self[2]


def polar_from_point(pose: Pose, point: tuple[float, float], floor: int | None = None) -> PolarAction:
    """Polar action (range, bearing) that points from ``pose`` at ``point``.

    ``floor`` defaults to the pose's floor; a differing floor raises
    :class:`CrossFloorError` since planar polar coordinates are undefined
    across floors.
    """
    if floor is not None and floor != pose.floor:
        raise CrossFloorError(f"point on floor {floor}, pose on floor {pose.floor}")
    dx = point[0] - pose.x
    dy = point[1] - pose.y
    rng = math.hypot(dx, dy)
    if rng == 0.0:
        return PolarAction(0.0, 0.0)
    return PolarAction(rng, wrap_angle(math.atan2(dy, dx) - pose.heading))


def point_from_polar(pose: Pose, action: PolarAction) -> tuple[float, float]:
    """Inverse of :func:`polar_from_point` (same floor as the pose)."""
    az = pose.heading + action.bearing
    return (pose.x + action.range_m * math.cos(az), pose.y + action.range_m * math.sin(az))


def project_depth_to_bev(
    pose: Pose, camera: CameraModel, depth_columns
) -> list[tuple[tuple[float, float], float]]:
    """Project per-column depth readings onto the floor plane.

    Each valid (positive) reading maps to one point along the column's
    azimuth at floor-plane distance ``reading * cos(pitch)``, paired with
    the surface height ``pose.height_z + reading * sin(pitch)`` implied by
    the pitched-ray model. Non-positive readings mean "no return" and are
    skipped.
    """
    if len(depth_columns) != camera.columns:
        raise ValueError(
            f"expected {camera.columns} depth columns, got {len(depth_columns)}"
        )
    cos_p = math.cos(camera.pitch)
    sin_p = math.sin(camera.pitch)
    out = []
    for offset, reading in zip(camera.column_offsets(), depth_columns):
        r = float(reading)
        if r <= 0.0:
            continue
        az = pose.heading + offset
        d = r * cos_p
        point = (pose.x + d * math.cos(az), pose.y + d * math.sin(az))
        out.append((point, pose.height_z + r * sin_p))
    return out


def points_along_ray(
    x: float, y: float, azimuth: float, dist: float, step: float
) -> list[tuple[float, float]]:
    """Sample points every ``step`` meters along a ray, excluding both ends."""
    if dist <= step:
        return []
    ux, uy = math.cos(azimuth), math.sin(azimuth)
    n = int(dist / step)
    pts = []
    for i in range(1, n + 1):
        t = i * step
        if t >= dist:
            break
        pts.append((x + t * ux, y + t * uy))
    return pts


def planar_distance(a: Pose | tuple[float, float], b: Pose | tuple[float, float]) -> float:
    ax, ay = (a.x, a.y) if isinstance(a, Pose) else (a[0], a[1])
    bx, by = (b.x, b.y) if isinstance(b, Pose) else (b[0], b[1])
    return math.hypot(ax - bx, ay - by)
