import math

import pytest

from goalnav.geometry import GridCoord, Pose
from goalnav.simworld import Door, FloorGrid, Room, SceneObject, SceneSpec, StairLink


def box_scene(
    width=12,
    height=10,
    resolution=0.25,
    objects=(),
    clutter=(),
    doors=(),
    floors=1,
    stairs=(),
):
    """Single- or multi-floor box: perimeter walls, one room per floor."""
    walls = set()
    grids = []
    rooms = []
    for f in range(floors):
        grids.append(FloorGrid.flat(width, height))
        for c in range(width):
            walls.add(GridCoord(c, 0, f))
            walls.add(GridCoord(c, height - 1, f))
        for r in range(height):
            walls.add(GridCoord(0, r, f))
            walls.add(GridCoord(width - 1, r, f))
        rooms.append(Room(f"room{f}", f, 1, 1, width - 2, height - 2))
    scene = SceneSpec(
        resolution=resolution,
        floors=grids,
        walls=walls,
        doors={d.cell: d for d in doors},
        stairs=list(stairs),
        rooms=rooms,
        objects=list(objects),
    )
    for f, col, row, h in clutter:
        scene.floors[f].surface[row, col] = h
    scene.validate()
    return scene


def center_pose(scene, col, row, floor=0, heading=0.0):
    x, y = scene.cell_center(GridCoord(col, row, floor))
    return Pose(x, y, floor, scene.surface(floor, col, row), heading)


@pytest.fixture
def small_scene():
    return box_scene()


@pytest.fixture
def flat_camera():
    from goalnav.geometry import CameraModel

    return CameraModel(horizontal_fov=math.radians(60.0), columns=31, pitch=0.0)
