"""Command-line entry points: train, render, bench, verify, edit, serve.

Exit codes: 0 success, 1 validation error (arguments, files, preconditions),
2 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_VERIFICATION = 2


class CliError(Exception):
    pass


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    text = p.read_bytes()
    if p.suffix == ".json":
        return json.loads(text)
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode())
    raise CliError(f"config must be .json or .toml, got {p.suffix!r}")


def _pose_from_dict(d: dict):
    from .server import pose_from_json

    return pose_from_json(d)


def _load_scene(path: str):
    from .scene_io import SceneFormatError, load

    p = Path(path)
    if not p.exists():
        raise CliError(f"scene file not found: {path}")
    try:
        return load(p)
    except SceneFormatError as e:
        raise CliError(f"cannot load {path}: {e}") from e


def _toy_train_set(dataset_cfg: dict):
    from .toy import ToySpec, toy_train_set

    return toy_train_set(ToySpec(), n_views=int(dataset_cfg.get("views", 8)),
                         width=int(dataset_cfg.get("width", 64)),
                         height=int(dataset_cfg.get("height", 64)))


def cmd_train(args) -> int:
    from .grid import GridDims
    from .scene_io import save
    from .trainer import ImplicitInitConfig, TrainConfig, coarse_to_fine, evaluate_psnr

    cfg = load_config(args.config)
    dataset = cfg.get("dataset", {"kind": "toy"})
    if dataset.get("kind", "toy") != "toy":
        raise CliError("only the built-in 'toy' dataset is supported by the CLI")
    train_set = _toy_train_set(dataset)

    grid_cfg = cfg.get("grid", {})
    n = int(grid_cfg.get("size", 16))
    dims = GridDims(int(grid_cfg.get("nx", n)), int(grid_cfg.get("ny", n)),
                    int(grid_cfg.get("nz", n)))
    tc = cfg.get("train", {})
    config = TrainConfig(**{k: v for k, v in tc.items() if k in TrainConfig.__dataclass_fields__})
    icfg = None
    if "implicit" in cfg:
        icfg = ImplicitInitConfig(**cfg["implicit"])

    t0 = time.time()
    scene, history = coarse_to_fine(
        train_set, config, dims=dims,
        origin=tuple(grid_cfg.get("origin", (0.0, 0.0, 0.0))),
        voxel_size=float(grid_cfg.get("voxel_size", 1.0 / dims.nx)),
        feature_dim=int(grid_cfg.get("feature_dim", 32)),
        hidden=int(grid_cfg.get("hidden", 32)),
        implicit_config=icfg,
    )
    psnr_val = evaluate_psnr(scene, train_set.views)
    save(scene, args.out, encoding="u8tanh" if config.tanh_mode else "f32")
    if args.history:
        with open(args.history, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "step", "loss", "photometric", "sparsity", "mlp_calls"])
            for stage, rows in history.items():
                for r in rows:
                    writer.writerow([stage, r["step"], r["loss"], r["photometric"],
                                     r["sparsity"], r["mlp_calls"]])
    print(json.dumps({"scene": str(args.out), "train_psnr": psnr_val,
                      "occupied_voxels": scene.grid.n_occupied,
                      "seconds": round(time.time() - t0, 1)}))
    return EXIT_OK


def cmd_render(args) -> int:
    from PIL import Image

    from .metrics import psnr, ssim
    from .renderer import RenderConfig, render_image

    scene = _load_scene(args.scene)
    poses = json.loads(Path(args.poses).read_text()) if args.poses else None
    if poses is None:
        raise CliError("--poses is required (JSON list of pose objects)")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = RenderConfig(tau_t=args.tau_t, white_background=not args.black_background)

    report = []
    for i, pd in enumerate(poses):
        pose = _pose_from_dict(pd)
        result = render_image(scene, pose, config)
        img8 = (np.clip(result.rgb, 0, 1) * 255).round().astype(np.uint8)
        path = out_dir / f"render_{i:03d}.png"
        Image.fromarray(img8).save(path)
        entry = {"index": i, "png": str(path), "mlp_calls": result.mlp_calls}
        if args.transmittance:
            tpath = out_dir / f"transmittance_{i:03d}.f32"
            result.transmittance.astype("<f4").tofile(tpath)
            entry["transmittance"] = str(tpath)
        if args.gt:
            gt = np.asarray(Image.open(Path(args.gt) / f"render_{i:03d}.png"),
                            dtype=np.float64) / 255.0
            entry["psnr"] = psnr(result.rgb, gt)
            entry["ssim"] = ssim(result.rgb, gt)
        report.append(entry)
    print(json.dumps({"renders": report}))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .renderer import RenderConfig, render_image
    from .toy import ring_pose

    if args.scene:
        scene = _load_scene(args.scene)
        lo, hi = scene.world_aabb()
        target = 0.5 * (lo + hi)
        radius = 1.6 * float(np.max(hi - lo))
    else:
        scene = _demo_scene()
        target, radius = np.array([0.5, 0.5, 0.55]), 1.6
    config = RenderConfig(tau_t=args.tau_t, white_background=True)
    pose = ring_pose(0.6, 0.25, args.width, args.height, target=target, radius=radius)
    render_image(scene, pose, config)  # warm-up
    t0 = time.perf_counter()
    calls = 0
    for i in range(args.frames):
        pose = ring_pose(0.6 + 0.2 * i, 0.25, args.width, args.height,
                         target=target, radius=radius)
        calls += render_image(scene, pose, config).mlp_calls
    dt = time.perf_counter() - t0
    rays = args.frames * args.width * args.height
    print(json.dumps({
        "frames": args.frames, "width": args.width, "height": args.height,
        "seconds": round(dt, 3), "fps": round(args.frames / dt, 2),
        "rays_per_s": round(rays / dt, 1), "mlp_calls_per_s": round(calls / dt, 1),
    }))
    return EXIT_OK


def _demo_scene():
    """Small random scene for benchmarks without a file."""
    from .decoder import init_decoder
    from .grid import GridDims, build_grid
    from .mc_reference import philox
    from .scene import Scene

    rng = philox(42)
    occ = rng.random((16, 16, 16)) < 0.25
    grid = build_grid(GridDims(16, 16, 16), 32, occ,
                      init=lambda n, f: (0.3 * rng.normal(size=(n, f))).astype(np.float32))
    return Scene(grid, init_decoder(32, hidden=32, seed=42), origin=np.zeros(3),
                 voxel_size=1.0 / 16.0)


def cmd_verify(args) -> int:
    from .verify import SUITES, verify_all

    if args.suite == "all":
        report = verify_all(seed=args.seed)
    elif args.suite in SUITES:
        r = SUITES[args.suite](seed=args.seed)
        report = {"suites": {args.suite: r}, "pass": r["pass"]}
    else:
        raise CliError(f"unknown suite {args.suite!r}; choose from "
                       f"{['all'] + sorted(SUITES)}")
    text = json.dumps(report, indent=2, default=float)
    if args.json:
        Path(args.json).write_text(text)
    print(text)
    return EXIT_OK if report["pass"] else EXIT_VERIFICATION


def cmd_edit(args) -> int:
    from .editor import Cuboid, swap_objects
    from .scene_io import save

    if args.action == "swap":
        scene = _load_scene(args.scene)
        try:
            ca = Cuboid(tuple(args.cuboid_a[:3]), tuple(args.cuboid_a[3:]))
            cb = Cuboid(tuple(args.cuboid_b[:3]), tuple(args.cuboid_b[3:]))
            edited = swap_objects(scene, ca, cb, k=args.k, seed=args.seed)
        except ValueError as e:
            raise CliError(str(e)) from e
        save(edited, args.out, "f32")
        print(json.dumps({"out": str(args.out)}))
        return EXIT_OK
    raise CliError("blend requires the HTTP service (composites are not serializable); "
                   "use `diver serve` and POST /edit/blend")


def cmd_serve(args) -> int:
    from .scene_io import load
    from .server import SceneRegistry, serve

    registry = SceneRegistry()
    for path in args.scenes:
        scene = _load_scene(path)
        sid = registry.add(scene, name=Path(path).stem)
        print(f"loaded {path} as scene id {sid!r}", file=sys.stderr)
    if args.demo or not args.scenes:
        sid = registry.add(_demo_scene(), name="demo")
        print(f"registered built-in demo scene as {sid!r}", file=sys.stderr)
    server = serve(registry, host=args.host, port=args.port,
                   max_pixels=args.max_pixels, static_dir=args.static)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}/ (Ctrl-C to stop)", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diver",
                                description="Deterministic-integration voxel radiance "
                                            "field renderer")
    p.add_argument("--version", action="version", version=f"diver {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the coarse-to-fine trainer from a config file")
    t.add_argument("--config", required=True, help="JSON or TOML training config")
    t.add_argument("--out", required=True, help="output scene file")
    t.add_argument("--history", help="write per-step loss history CSV here")
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("render", help="render a pose list to PNG files")
    r.add_argument("--scene", required=True)
    r.add_argument("--poses", required=True, help="JSON list of pose objects")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--gt", help="directory of ground-truth PNGs for PSNR/SSIM")
    r.add_argument("--tau-t", type=float, default=0.01)
    r.add_argument("--black-background", action="store_true")
    r.add_argument("--transmittance", action="store_true",
                   help="also write per-pixel transmittance as raw float32")
    r.set_defaults(fn=cmd_render)

    b = sub.add_parser("bench", help="measure rays/s, MLP calls/s, FPS")
    b.add_argument("--scene")
    b.add_argument("--width", type=int, default=64)
    b.add_argument("--height", type=int, default=64)
    b.add_argument("--frames", type=int, default=5)
    b.add_argument("--tau-t", type=float, default=0.01)
    b.set_defaults(fn=cmd_bench)

    v = sub.add_parser("verify", help="run self-check suites; exit 2 on failure")
    v.add_argument("suite", nargs="?", default="all",
                   help="all | integrator | gradients | fusion | mc")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--json", help="also write the report to this file")
    v.set_defaults(fn=cmd_verify)

    e = sub.add_parser("edit", help="object swap on a scene file")
    e.add_argument("action", choices=["swap", "blend"])
    e.add_argument("--scene")
    e.add_argument("--cuboid-a", type=int, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
    e.add_argument("--cuboid-b", type=int, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
    e.add_argument("--k", type=int, default=12)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_edit)

    s = sub.add_parser("serve", help="start the HTTP render/edit service")
    s.add_argument("--scenes", nargs="*", default=[], help="scene files to register")
    s.add_argument("--demo", action="store_true", help="also register a built-in demo scene")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--max-pixels", type=int, default=512 * 512)
    s.add_argument("--static", help="directory of viewer assets to serve at /")
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
