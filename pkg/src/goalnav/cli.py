"""Command-line entry points: run, batch, ablate, render-map, gen-scenes.

Exit codes: 0 success, 2 config error, 3 scene error, 4 oracle error,
5 other domain/IO error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from pathlib import Path

from .episode import (
    EpisodeSpec,
    RunConfig,
    compute_spl,
    compute_sr,
    run_ablation,
    run_episode,
)
from .errors import ConfigError, GoalnavError, OracleError, SceneError
from .memory import CommonSenseStore, render_area_map
from .perception import ScriptedOracle
from .remote import RemoteConfig, RemoteOracle
from .scenegen import GenParams, generate_suite
from .simworld import load_scene, save_scene
from .render import write_png, write_ppm

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCENE = 3
EXIT_ORACLE = 4
EXIT_OTHER = 5

ABLATION_VARIANTS = {
    "full": {},
    "no_two_step": {"review_two_step": False},
    "no_room": {"review_room": False},
    "no_floor": {"review_floor": False},
    "no_common_sense": {"common_sense": False},
    "no_value_map": {"value_map": False},
}


def load_cli_config(path: str | None) -> dict:
    """Strictly validated CLI config: run settings, oracle choice, outputs."""
    if path is None:
        return {"run": RunConfig(), "oracle": "scripted", "remote": None, "common_sense_file": None}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"run", "oracle", "remote", "common_sense_file"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    oracle = data.get("oracle", "scripted")
    if oracle not in ("scripted", "remote"):
        raise ConfigError(f"oracle must be 'scripted' or 'remote', got {oracle!r}")
    return {
        "run": RunConfig.from_dict(data.get("run", {})),
        "oracle": oracle,
        "remote": data.get("remote"),
        "common_sense_file": data.get("common_sense_file"),
    }


def make_oracle_factory(cli_cfg: dict):
    if cli_cfg["oracle"] == "remote":
        remote_cfg = RemoteConfig.from_env(cli_cfg.get("remote") or {})
        store = CommonSenseStore()
        if cli_cfg.get("common_sense_file"):
            store = CommonSenseStore.from_file(cli_cfg["common_sense_file"])
        oracle = RemoteOracle(remote_cfg, store)
        return lambda scene, cfg: oracle

    def factory(scene, cfg):
        return ScriptedOracle(
            scene, door_aware=cfg.toggles.common_sense, stop_fix_radius=cfg.t_s
        )

    return factory


def _episode_record(index: int, scene_path: str, spec, result) -> dict:
    record = {"episode": index, "scene": scene_path, "goal": spec.goal}
    record.update(result.to_record())
    return record


def _write_summary_csv(path: Path, results) -> None:
    sr = compute_sr(results)
    spl = compute_spl(results)
    mean_steps = sum(r.steps for r in results) / len(results)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("episodes,sr,spl,mean_steps\n")
        fh.write(f"{len(results)},{sr!r},{spl!r},{mean_steps!r}\n")


def cmd_run(args) -> int:
    cli_cfg = load_cli_config(args.config)
    config: RunConfig = cli_cfg["run"]
    scene = load_scene(args.scene)
    spec = EpisodeSpec.from_dict(
        {
            "start": {"x": args.start_x, "y": args.start_y, "floor": args.start_floor, "heading": args.heading},
            "goal": args.goal,
            "scene_id": str(args.scene),
        }
    )
    oracle = make_oracle_factory(cli_cfg)(scene, config)
    result = run_episode(scene, spec, oracle, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "scene": str(args.scene),
        "spec": spec.to_dict(),
        "config": config.to_dict(),
        "oracle": cli_cfg["oracle"],
        "result": result.to_record(),
        "trace": [r.to_dict() for r in result.trace],
    }
    out_path = out_dir / "result.json"
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(
        f"success={result.success} steps={result.steps} spl={result.spl:.4f} "
        f"stop={result.stop_reason} -> {out_path}"
    )
    return EXIT_OK


def _load_suite(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read suite {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"suite {path} is not valid JSON: {exc}") from exc
    episodes = data.get("episodes", [])
    if not episodes:
        raise ConfigError(f"suite {path} lists no episodes")
    base = Path(path).parent
    out = []
    for entry in episodes:
        scene_path = str(entry["scene"])
        resolved = scene_path if Path(scene_path).is_absolute() else str(base / scene_path)
        out.append((scene_path, load_scene(resolved), EpisodeSpec.from_dict(entry)))
    return out


def _run_batch_episode(task):
    scene_path, scene, spec, config, oracle_kind, cli_cfg = task
    if oracle_kind == "scripted":
        oracle = ScriptedOracle(scene, door_aware=config.toggles.common_sense, stop_fix_radius=config.t_s)
    else:  # pragma: no cover - exercised only with a live endpoint
        oracle = RemoteOracle(RemoteConfig.from_env(cli_cfg.get("remote") or {}))
    return run_episode(scene, spec, oracle, config)


def cmd_batch(args) -> int:
    cli_cfg = load_cli_config(args.config)
    config: RunConfig = cli_cfg["run"]
    suite = _load_suite(args.suite)
    tasks = [
        (scene_path, scene, spec, config, cli_cfg["oracle"], cli_cfg)
        for scene_path, scene, spec in suite
    ]
    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_batch_episode, tasks))
    else:
        results = [_run_batch_episode(t) for t in tasks]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonl_path = out_dir / "results.jsonl"
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for i, ((scene_path, _, spec), result) in enumerate(zip(suite, results)):
            fh.write(json.dumps(_episode_record(i, scene_path, spec, result), sort_keys=True))
            fh.write("\n")
    csv_path = out_dir / "summary.csv"
    _write_summary_csv(csv_path, results)
    print(
        f"episodes={len(results)} sr={compute_sr(results):.2f} spl={compute_spl(results):.4f} "
        f"-> {jsonl_path}, {csv_path}"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    cli_cfg = load_cli_config(args.config)
    config: RunConfig = cli_cfg["run"]
    suite = _load_suite(args.suite)
    episodes = [(scene, spec) for _, scene, spec in suite]
    factory = make_oracle_factory(cli_cfg)
    rows = run_ablation(episodes, factory, config, ABLATION_VARIANTS)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("variant,sr,spl,episodes\n")
        for row in rows:
            fh.write(f"{row.label},{row.sr!r},{row.spl!r},{row.episodes}\n")
    for row in rows:
        print(f"{row.label}: SR={row.sr:.2f} SPL={row.spl:.4f} (n={row.episodes})")
    print(f"-> {csv_path}")
    return EXIT_OK


def cmd_render_map(args) -> int:
    try:
        with open(args.trace, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise GoalnavError(f"cannot read trace {args.trace}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GoalnavError(f"trace {args.trace} is not valid JSON: {exc}") from exc
    n_steps = len(payload.get("trace", []))
    if not 0 <= args.step < n_steps:
        raise GoalnavError(f"step {args.step} out of range (trace has {n_steps} steps)")
    if payload.get("oracle", "scripted") != "scripted":
        raise GoalnavError("render-map replays deterministically and needs a scripted-oracle trace")
    scene = load_scene(payload["scene"])
    spec = EpisodeSpec.from_dict(payload["spec"])
    config = RunConfig.from_dict(payload["config"])
    oracle = ScriptedOracle(scene, door_aware=config.toggles.common_sense, stop_fix_radius=config.t_s)
    from .episode import EpisodeRunner

    runner = EpisodeRunner(scene, spec, oracle, config)
    for _ in range(args.step + 1):
        runner.step()
    raster = render_area_map(runner.area_map, runner.pose.floor)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(raster, out)
    if args.png:
        write_png(raster, out.with_suffix(".png"))
    print(f"step {args.step} map -> {out}")
    return EXIT_OK


def cmd_gen_scenes(args) -> int:
    params = GenParams(
        floors=args.floors,
        width=args.width,
        height=args.height,
        rooms_per_floor=args.rooms,
        clutter=args.clutter,
        goal=args.goal,
        goal_floor=args.goal_floor,
        trap=args.trap,
    )
    episodes = generate_suite(args.seed, args.count, params)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    suite = []
    for i, ep in enumerate(episodes):
        name = f"scene_{i:03d}.json"
        save_scene(ep.scene, out_dir / name)
        suite.append(
            {
                "scene": name,
                "start": {
                    "x": ep.start.x,
                    "y": ep.start.y,
                    "floor": ep.start.floor,
                    "heading": ep.start.heading,
                },
                "goal": ep.goal,
                "scene_id": name,
            }
        )
    with open(out_dir / "suite.json", "w", encoding="utf-8") as fh:
        json.dump({"episodes": suite}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(episodes)} scenes + suite.json -> {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="goalnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one episode")
    p.add_argument("scene")
    p.add_argument("--goal", required=True)
    p.add_argument("--start-x", type=float, required=True)
    p.add_argument("--start-y", type=float, required=True)
    p.add_argument("--start-floor", type=int, default=0)
    p.add_argument("--heading", type=float, default=0.0)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run an episode suite")
    p.add_argument("suite")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("ablate", help="run the suite per toggle variant")
    p.add_argument("suite")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render-map", help="render the exploration map at a trace step")
    p.add_argument("trace")
    p.add_argument("--step", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--png", action="store_true")
    p.set_defaults(func=cmd_render_map)

    p = sub.add_parser("gen-scenes", help="generate seeded scenes + suite file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--floors", type=int, default=1)
    p.add_argument("--width", type=int, default=26)
    p.add_argument("--height", type=int, default=20)
    p.add_argument("--rooms", type=int, default=3)
    p.add_argument("--clutter", type=float, default=0.04)
    p.add_argument("--goal", default="bed")
    p.add_argument("--goal-floor", type=int, default=None)
    p.add_argument("--trap", action="store_true")
    p.set_defaults(func=cmd_gen_scenes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SceneError as exc:
        print(f"scene error: {exc}", file=sys.stderr)
        return EXIT_SCENE
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (GoalnavError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
