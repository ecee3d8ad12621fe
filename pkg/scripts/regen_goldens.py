#!/usr/bin/env python3
"""Regenerate committed test fixtures and golden files (deterministic).

Run from the repository root: python3 scripts/regen_goldens.py
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from goalnav.episode import EpisodeRunner, EpisodeSpec, RunConfig
from goalnav.geometry import GridCoord
from goalnav.memory import render_area_map
from goalnav.perception import ScriptedOracle
from goalnav.render import encode_ppm
from goalnav.simworld import (
    SceneObject,
    StairLink,
    load_scene,
    save_scene,
    scene_to_dict,
)

from conftest import box_scene, center_pose

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"


def make_three_floor_fixture():
    scene = box_scene(
        width=14,
        height=11,
        floors=3,
        stairs=[
            StairLink(GridCoord(3, 3, 0), GridCoord(3, 3, 1)),
            StairLink(GridCoord(10, 7, 1), GridCoord(10, 7, 2)),
        ],
        objects=[SceneObject("bed", 2, 7, 2)],
        clutter=[(0, 6, 6, 0.5), (1, 4, 8, 0.5)],
    )
    save_scene(scene, DATA / "three_floor.json")
    with open(DATA / "three_floor.canonical.json", "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=1, sort_keys=True)
        fh.write("\n")


def make_map_golden():
    """Area-map raster after a scripted 10-step run on a fixed scene."""
    scene = box_scene(width=16, height=12, objects=[SceneObject("bed", 0, 13, 9)],
                      clutter=[(0, 7, 5, 0.5), (0, 8, 5, 0.5)])
    save_scene(scene, DATA / "map_golden_scene.json")
    spec = EpisodeSpec(start=center_pose(scene, 2, 2, heading=0.0), goal="bed")
    config = RunConfig()
    runner = EpisodeRunner(scene, spec, ScriptedOracle(scene, stop_fix_radius=config.t_s), config)
    for _ in range(10):
        if runner.stop_reason is not None:
            break
        runner.step()
    raster = render_area_map(runner.area_map, 0)
    (DATA / "map_after_10_steps.ppm").write_bytes(encode_ppm(raster))


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    make_three_floor_fixture()
    make_map_golden()
    print(f"fixtures written to {DATA}")


if __name__ == "__main__":
    main()
