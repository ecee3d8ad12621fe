import heapq
import json
import math
import random

import pytest

from goalnav.errors import GenerationError, SceneError
from goalnav.geometry import CameraModel, GridCoord, PolarAction, Pose
from goalnav.scenegen import GenParams, generate_scene
from goalnav.simworld import (
    Door,
    FloorGrid,
    SceneObject,
    SceneSpec,
    StairLink,
    apply_action,
    geodesic_shortest_path,
    load_scene,
    raycast,
    reachable_cells,
    render_observation,
    save_scene,
    scene_from_dict,
    scene_to_dict,
)

from conftest import box_scene, center_pose


# -- loading and validation --------------------------------------------------

def test_minimal_scene_roundtrip(tmp_path):
    scene = box_scene(objects=[SceneObject("bed", 0, 5, 5)])
    path = tmp_path / "scene.json"
    save_scene(scene, path)
    loaded = load_scene(path)
    assert len(loaded.floors) == 1
    assert len(loaded.rooms) == 1
    assert scene_to_dict(loaded) == scene_to_dict(scene)


def test_stairs_missing_floor_rejected():
    data = scene_to_dict(box_scene())
    data["stairs"] = [{"from": [0, 5, 5], "to": [3, 5, 5]}]
    with pytest.raises(SceneError, match="stairs"):
        scene_from_dict(data)


def test_object_on_wall_rejected():
    data = scene_to_dict(box_scene())
    data["objects"] = [{"category": "bed", "floor": 0, "col": 0, "row": 0}]
    with pytest.raises(SceneError, match="object"):
        scene_from_dict(data)


def test_room_tiling_enforced():
    data = scene_to_dict(box_scene())
    data["rooms"] = []
    with pytest.raises(SceneError, match="rooms"):
        scene_from_dict(data)


def test_bad_format_tag():
    data = scene_to_dict(box_scene())
    data["format"] = "something-else/9"
    with pytest.raises(SceneError, match="format"):
        scene_from_dict(data)


def test_three_floor_fixture_matches_golden():
    fixture = "tests/data/three_floor.json"
    golden = "tests/data/three_floor.canonical.json"
    scene = load_scene(fixture)
    assert len(scene.floors) == 3
    with open(golden, "r", encoding="utf-8") as fh:
        assert scene_to_dict(scene) == json.load(fh)


# -- raycasting and observations ---------------------------------------------

def test_wall_ahead_center_column_depth(flat_camera):
    scene = box_scene(width=16, height=9)
    # pose 3.0 m west of the east wall's inner face (wall cell col 15, face at 3.75)
    pose = Pose(0.75, scene.cell_center(GridCoord(0, 4, 0))[1], 0, 0.0, 0.0)
    obs = render_observation(scene, pose, flat_camera, 0)
    center = flat_camera.columns // 2
    assert obs.depth[center] == pytest.approx(3.0)


def test_closed_door_blocks_sight():
    doors = [Door(0, 6, 4, open=False)]
    scene = box_scene(width=12, height=9, doors=doors, objects=[SceneObject("bed", 0, 9, 4)])
    # straight line pose -> door -> object; the closed door hides the object
    pose = center_pose(scene, 2, 4)
    cam = CameraModel(horizontal_fov=math.radians(60), columns=15, pitch=0.0)
    obs = render_observation(scene, pose, cam, 0)
    assert not any(h.category == "bed" for h in obs.semantics)
    assert any(h.category == "closed_door" for h in obs.semantics)
    # with the door open the object is visible
    scene2 = box_scene(width=12, height=9, doors=[Door(0, 6, 4, open=True)], objects=[SceneObject("bed", 0, 9, 4)])
    obs2 = render_observation(scene2, center_pose(scene2, 2, 4), cam, 0)
    assert any(h.category == "bed" for h in obs2.semantics)


def _blocking_segments(scene, floor, origin_surface):
    """All edges of blocking cells as segments (brute-force oracle geometry)."""
    res = scene.resolution
    grid = scene.floors[floor]
    segs = []
    for row in range(grid.height):
        for col in range(grid.width):
            if not scene.blocks_ray(floor, col, row, origin_surface):
                continue
            x0, y0 = col * res, row * res
            x1, y1 = x0 + res, y0 + res
            segs.extend(
                [
                    ((x0, y0), (x1, y0)),
                    ((x1, y0), (x1, y1)),
                    ((x1, y1), (x0, y1)),
                    ((x0, y1), (x0, y0)),
                ]
            )
    return segs


def _segment_raycast(origin, azimuth, segments, max_dist):
    ox, oy = origin
    dx, dy = math.cos(azimuth), math.sin(azimuth)
    best = max_dist
    for (ax, ay), (bx, by) in segments:
        ex, ey = bx - ax, by - ay
        denom = dx * ey - dy * ex
        if abs(denom) < 1e-15:
            continue
        t = ((ax - ox) * ey - (ay - oy) * ex) / denom
        u = ((ax - ox) * dy - (ay - oy) * dx) / denom
        if t > 1e-12 and -1e-12 <= u <= 1 + 1e-12:
            best = min(best, t)
    return best


def test_cluttered_scene_depths_match_segment_oracle(flat_camera):
    scene = box_scene(
        width=14,
        height=12,
        clutter=[(0, 5, 4, 0.5), (0, 8, 7, 0.5), (0, 3, 8, 0.5), (0, 10, 3, 0.5)],
    )
    pose = Pose(1.62, 1.41, 0, 0.0, 0.7)
    segments = _blocking_segments(scene, 0, 0.0)
    for direction in (0, 120, 240):
        obs = render_observation(scene, pose, flat_camera, direction, max_range=8.0)
        for az, depth in zip(obs.column_azimuths(), obs.depth.tolist()):
            expected = _segment_raycast((pose.x, pose.y), az, segments, 8.0)
            assert depth == pytest.approx(expected, abs=1e-9)


def test_semantic_range_never_exceeds_depth_along_bearing():
    scene = box_scene(width=14, height=12, objects=[SceneObject("bed", 0, 10, 5)],
                      clutter=[(0, 6, 5, 0.5)])
    cam = CameraModel(horizontal_fov=math.radians(60), columns=21, pitch=0.0)
    for col, row, heading in [(2, 5, 0.0), (2, 2, 0.5), (11, 9, 2.0)]:
        pose = center_pose(scene, col, row, heading=heading)
        for d in (0, 60, 120, 180, 240, 300):
            obs = render_observation(scene, pose, cam, d)
            for hit in obs.semantics:
                along, _, _ = raycast(
                    scene, 0, pose.x, pose.y, pose.heading + hit.bearing, obs.max_range, 0.0
                )
                assert hit.range_m <= along + 1e-9


def test_pitch_scales_reported_depth():
    scene = box_scene(width=16, height=9)
    pose = Pose(0.75, scene.cell_center(GridCoord(0, 4, 0))[1], 0, 0.0, 0.0)
    cam = CameraModel(horizontal_fov=math.radians(60), columns=1, pitch=math.radians(-30))
    obs = render_observation(scene, pose, cam, 0)
    assert obs.depth[0] == pytest.approx(3.0 / math.cos(math.radians(30)))
    assert obs.planar_depths()[0] == pytest.approx(3.0)


# -- actions -------------------------------------------------------------------

def test_open_space_move(small_scene):
    pose = center_pose(small_scene, 2, 4)
    out = apply_action(small_scene, pose, PolarAction(1.0, 0.0))
    assert out.moved and not out.collided and not out.floor_changed
    assert out.new_pose.x == pytest.approx(pose.x + 1.0)
    assert out.new_pose.y == pytest.approx(pose.y)


def test_wall_truncates_motion():
    scene = box_scene(width=8, height=8)
    # east wall inner face at 1.75 when standing at x=1.375
    pose = Pose(1.375, scene.cell_center(GridCoord(0, 3, 0))[1], 0, 0.0, 0.0)
    out = apply_action(scene, pose, PolarAction(1.0, 0.0))
    assert out.collided
    assert out.new_pose.x < 1.75
    dist = math.hypot(out.new_pose.x - pose.x, out.new_pose.y - pose.y)
    assert dist < 1.0


def test_rotation_only():
    scene = box_scene()
    pose = center_pose(scene, 4, 4, heading=0.0)
    out = apply_action(scene, pose, PolarAction(0.0, math.pi / 2))
    assert not out.moved and not out.collided
    assert out.new_pose.heading == pytest.approx(math.pi / 2)


def test_stairs_transfer():
    link = StairLink(GridCoord(5, 4, 0), GridCoord(5, 4, 1))
    scene = box_scene(floors=2, stairs=[link])
    pose = center_pose(scene, 2, 4, floor=0)
    out = apply_action(scene, pose, PolarAction(2.0, 0.0), allow_stairs=True)
    assert out.floor_changed
    assert out.new_pose.floor == 1
    blocked = apply_action(scene, pose, PolarAction(2.0, 0.0), allow_stairs=False)
    assert not blocked.floor_changed and blocked.new_pose.floor == 0


def test_apply_action_deterministic(small_scene):
    pose = center_pose(small_scene, 2, 2, heading=0.4)
    a = apply_action(small_scene, pose, PolarAction(1.3, 0.2))
    b = apply_action(small_scene, pose, PolarAction(1.3, 0.2))
    assert a == b


# -- geodesics ------------------------------------------------------------------

def test_geodesic_open_grid_corners():
    scene = box_scene(width=7, height=7)  # interior 5x5
    a = scene.cell_center(GridCoord(1, 1, 0))
    b = scene.cell_center(GridCoord(5, 5, 0))
    d = geodesic_shortest_path(scene, (a[0], a[1], 0), (b[0], b[1], 0))
    assert d == pytest.approx(8 * scene.resolution)


def test_geodesic_sealed_room_unreachable():
    # wall off a pocket in the corner
    scene = box_scene(width=10, height=10)
    for cell in [(7, 1), (7, 2), (8, 3), (7, 3)]:
        scene.walls.add(GridCoord(cell[0], cell[1], 0))
    scene.walls.add(GridCoord(8, 3, 0))
    a = scene.cell_center(GridCoord(2, 2, 0))
    b = scene.cell_center(GridCoord(8, 1, 0))
    assert geodesic_shortest_path(scene, (a[0], a[1], 0), (b[0], b[1], 0)) is None


def test_geodesic_off_grid_rejected(small_scene):
    with pytest.raises(ValueError):
        geodesic_shortest_path(small_scene, (-5.0, -5.0, 0), (1.0, 1.0, 0))


def _dijkstra_oracle(scene, start, goal):
    """Independent Dijkstra over the same motion edges."""
    dist = {start: 0}
    heap = [(0, tuple(start))]
    while heap:
        d, cur = heapq.heappop(heap)
        cur = GridCoord(*cur)
        if cur == goal:
            return d * scene.resolution
        if d > dist.get(cur, math.inf):
            continue
        neighbors = []
        for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = GridCoord(cur.col + dc, cur.row + dr, cur.floor)
            if scene.in_bounds(nxt.floor, nxt.col, nxt.row) and scene.can_step(
                cur.floor, cur.col, cur.row, nxt.col, nxt.row
            ):
                neighbors.append(nxt)
        linked = scene.stair_link(cur)
        if linked is not None:
            neighbors.append(linked)
        for nxt in neighbors:
            nd = d + 1
            if nd < dist.get(nxt, math.inf):
                dist[nxt] = nd
                heapq.heappush(heap, (nd, tuple(nxt)))
    return None


def test_geodesic_matches_dijkstra_on_wall_with_gap():
    scene = box_scene(width=12, height=10)
    for r in range(1, 9):
        if r != 6:
            scene.walls.add(GridCoord(6, r, 0))
    a = scene.cell_center(GridCoord(2, 2, 0))
    b = scene.cell_center(GridCoord(9, 2, 0))
    got = geodesic_shortest_path(scene, (a[0], a[1], 0), (b[0], b[1], 0))
    oracle = _dijkstra_oracle(scene, GridCoord(2, 2, 0), GridCoord(9, 2, 0))
    assert got == oracle


def test_geodesic_symmetry_and_triangle():
    scene = box_scene(width=12, height=12, clutter=[(0, 5, 5, 0.5), (0, 6, 6, 0.5)])
    rng = random.Random(5)
    cells = [c for c in reachable_cells(scene, GridCoord(2, 2, 0))]
    cells.sort()
    for _ in range(15):
        a, b, c = rng.sample(cells, 3)
        pa = (*scene.cell_center(a), 0)
        pb = (*scene.cell_center(b), 0)
        pc = (*scene.cell_center(c), 0)
        dab = geodesic_shortest_path(scene, pa, pb)
        dba = geodesic_shortest_path(scene, pb, pa)
        dac = geodesic_shortest_path(scene, pa, pc)
        dcb = geodesic_shortest_path(scene, pc, pb)
        assert dab == dba
        assert dab <= dac + dcb + 1e-12


# -- generation ------------------------------------------------------------------

def test_generate_deterministic():
    a = generate_scene(99, GenParams())
    b = generate_scene(99, GenParams())
    assert scene_to_dict(a.scene) == scene_to_dict(b.scene)
    assert a.start == b.start


def test_generate_two_floors_linked():
    ep = generate_scene(5, GenParams(floors=2))
    assert len(ep.scene.floors) == 2
    assert len(ep.scene.stairs) == 1
    link = ep.scene.stairs[0]
    assert {link.a.floor, link.b.floor} == {0, 1}


def test_generate_invalid_params():
    with pytest.raises(GenerationError):
        GenParams(floors=9).validate()
    with pytest.raises(GenerationError):
        GenParams(width=5).validate()
    with pytest.raises(GenerationError):
        generate_scene(1, GenParams(clutter=0.9))


def test_generate_connectivity_audit_100_seeds():
    for i in range(100):
        ep = generate_scene(7000 + i, GenParams())
        start = ep.scene.cell_of(ep.start.x, ep.start.y, ep.start.floor)
        reached = reachable_cells(ep.scene, start)
        for obj in ep.scene.objects:
            assert obj.cell in reached, f"seed {7000 + i}: goal {tuple(obj.cell)} unreachable"
