"""Command-line pipeline driver.

    splatmakeup synth-head --config run.cfg
    splatmakeup bake       --config run.cfg
    splatmakeup coarse     --config run.cfg
    splatmakeup refine     --config run.cfg
    splatmakeup render     --config run.cfg
    splatmakeup animate    --config run.cfg
    splatmakeup eval       --config run.cfg

Every command reads the same configuration file, honors --seed/--out/
--stage-overrides, writes its artifacts plus a reproducibility stamp,
and is byte-identical given identical inputs and seed.  Exit codes:
0 ok, 2 configuration error, 3 missing asset, 4 numerical failure.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .avatar import pose_kernels
from .config import DEFAULT_CONFIG, RunConfig
from .errors import (
    ConfigError,
    MissingAsset,
    MissingGuidance,
    NumericalError,
    SplatMakeupError,
)
from .guidance import GuidanceRequest, FileGuidanceProvider, ProceduralProvider
from .meshraster import rasterize_mesh
from .metrics import evaluate
from .splat import project_gaussians, render
from .synth import synth_cameras, synth_head
from .training import run_coarse, run_refine
from .uvbake import bake, query

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERICAL = 4

THREADS_ENV = "SPLATMAKEUP_THREADS"


def _load_assets(cfg: RunConfig):
    model = fileio.load_avatar(cfg.require_path("avatar"))
    poses = fileio.load_pose_dir(cfg.require_path("poses"))
    cameras = fileio.load_camera_rig(cfg.require_path("cameras"))
    res = cfg.render_resolution
    cameras = [c.scaled(res, res) for c in cameras]
    return model, poses, cameras


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"{name} contains non-finite values")


def _provider(cfg: RunConfig, model, poses, cameras):
    source = cfg.get("guidance", "source", "procedural")
    if source == "manifest":
        manifest = cfg.require_path("manifest")
        res = cfg.render_resolution
        return FileGuidanceProvider(manifest, expected_size=(res, res))
    if source == "procedural":
        return ProceduralProvider(
            cfg.makeup_spec(),
            model,
            {p.pose_id: p for p in poses},
            {c.camera_id: c for c in cameras},
            background=cfg.background,
        )
    raise ConfigError(f"[guidance] source = {source!r} is not recognized")


def _stamp(cfg: RunConfig, out: Path, seed: int, command: str) -> None:
    fileio.write_stamp(out / f"stamp_{command}.txt", cfg.text, seed, command)


def _texture_stem(cfg: RunConfig, out: Path) -> Path:
    stem = cfg.path("texture") or out / "texture"
    if not stem.with_suffix(".pfm").exists():
        raise MissingAsset(f"baked texture {stem}.pfm does not exist")
    return stem


def cmd_synth_head(cfg: RunConfig, seed: int, out: Path) -> None:
    lat = cfg.get("synth", "lat", 32, int)
    lon = cfg.get("synth", "lon", 32, int)
    density = cfg.get("synth", "density", 5, int)
    n_poses = cfg.get("synth", "n_poses", 4, int)
    n_ring = cfg.get("synth", "ring_cameras", 16, int)
    res = cfg.render_resolution

    model, poses = synth_head(
        n_lat=lat, n_lon=lon, kernels_per_triangle=density, n_poses=n_poses, seed=seed
    )
    ring, evals = synth_cameras(n_ring=n_ring, resolution=res)

    assets = out / "assets"
    (assets / "poses").mkdir(parents=True, exist_ok=True)
    fileio.save_avatar(assets / "head.avatar", model)
    for i, pose in enumerate(poses):
        fileio.save_pose(assets / "poses" / f"{i:02d}_{pose.pose_id}.pose", pose)
    fileio.save_camera_rig(assets / "cameras.rig", ring + evals)
    print(
        f"synth-head: {model.mesh.num_triangles} triangles, "
        f"{len(model.kernels)} kernels, {len(poses)} poses, "
        f"{len(ring) + len(evals)} cameras -> {assets}"
    )


def _canonical(poses, pose_id):
    for p in poses:
        if p.pose_id == pose_id:
            return p
    raise MissingAsset(f"pose {pose_id!r} not found")


def cmd_bake(cfg: RunConfig, seed: int, out: Path) -> None:
    model, poses, cameras = _load_assets(cfg)
    ring = [c for c in cameras if c.camera_id.startswith("ring")]
    bake_cfg = cfg.bake_config(camera_ids=[c.camera_id for c in ring])
    if len(ring) != bake_cfg.num_views:
        raise ConfigError(
            f"[bake] num_views = {bake_cfg.num_views} but rig has {len(ring)} ring cameras"
        )
    canonical = _canonical(poses, bake_cfg.canonical_pose_id)
    provider = _provider(cfg, model, poses, cameras)

    world = pose_kernels(model, canonical)
    images, gbuffers = [], []
    for cam in ring:
        gb = rasterize_mesh(model.mesh, canonical, cam)
        req = GuidanceRequest(canonical.pose_id, cam.camera_id, "coarse")
        img = provider.provide(req)
        _check_finite(f"guidance {cam.camera_id}", img)
        images.append(img)
        gbuffers.append(gb)
    texture = bake(images, gbuffers, bake_cfg)
    _check_finite("texture", texture.finalized)

    fileio.save_texture(out / "texture", texture)
    fileio.write_png(out / "texture_preview.png", texture.finalized)
    img, _ = query(texture, model.mesh, canonical, ring[len(ring) // 2], cfg.background)
    fileio.write_png(out / "texture_query_preview.png", img)
    print(
        f"bake: {int(texture.observed.sum())} observed texels, "
        f"{int(texture.filled.sum())} filled -> {out / 'texture.pfm'}"
    )


def _train_loggers(cfg: RunConfig, out: Path, stage: str):
    interval = cfg.get("train", "checkpoint_interval", 0, int)

    def on_iteration(rec, model):
        if interval > 0 and (rec.iteration + 1) % interval == 0:
            fileio.save_avatar(out / f"{stage}_{rec.iteration + 1:06d}.avatar", model)

    return on_iteration


def cmd_coarse(cfg: RunConfig, seed: int, out: Path) -> None:
    model, poses, cameras = _load_assets(cfg)
    texture = fileio.load_texture(_texture_stem(cfg, out))
    train_cfg = cfg.train_config(seed=seed)
    train_cams = [c for c in cameras if c.camera_id.startswith("ring")] or cameras
    model, records = run_coarse(
        model,
        texture,
        poses,
        train_cams,
        train_cfg,
        cfg.mask_spec(),
        background=cfg.background,
        on_iteration=_train_loggers(cfg, out, "coarse"),
    )
    fileio.save_avatar(out / "avatar_coarse.avatar", model)
    fileio.save_train_log(out / "log_coarse.txt", records)
    last = records[-1].total if records else 0.0
    print(f"coarse: {len(records)} iterations, final total loss {last:.6f}")


def cmd_refine(cfg: RunConfig, seed: int, out: Path) -> None:
    cfg_avatar = cfg.path("coarse_avatar") or out / "avatar_coarse.avatar"
    if not Path(cfg_avatar).exists():
        raise MissingAsset(f"coarse checkpoint {cfg_avatar} does not exist")
    model = fileio.load_avatar(cfg_avatar)
    _, poses, cameras = _load_assets(cfg)
    original = fileio.load_avatar(cfg.require_path("avatar"))
    train_cfg = cfg.train_config(seed=seed)
    train_cams = [c for c in cameras if c.camera_id.startswith("ring")] or cameras
    provider = _provider(cfg, original, poses, cameras)
    model, records = run_refine(
        model,
        provider,
        poses,
        train_cams,
        train_cfg,
        cfg.mask_spec(),
        background=cfg.background,
        on_iteration=_train_loggers(cfg, out, "refine"),
    )
    fileio.save_avatar(out / "avatar_refined.avatar", model)
    fileio.save_train_log(out / "log_refine.txt", records)
    last = records[-1].total if records else 0.0
    print(f"refine: {len(records)} iterations, final total loss {last:.6f}")


def _render_model(cfg: RunConfig, out: Path, which: str):
    candidates = {
        "refined": out / "avatar_refined.avatar",
        "coarse": out / "avatar_coarse.avatar",
    }
    if which in candidates and candidates[which].exists():
        return fileio.load_avatar(candidates[which])
    if which == "auto":
        for p in candidates.values():
            if p.exists():
                return fileio.load_avatar(p)
        return fileio.load_avatar(cfg.require_path("avatar"))
    if which == "original":
        return fileio.load_avatar(cfg.require_path("avatar"))
    raise MissingAsset(f"no avatar for render source {which!r}")


def cmd_render(cfg: RunConfig, seed: int, out: Path) -> None:
    model, poses, cameras = _load_assets(cfg)
    model = _render_model(cfg, out, cfg.get("render", "source", "auto"))
    pose_id = cfg.get("render", "pose", "canonical")
    cam_ids = cfg.get("render", "cameras", "eval_0").split()
    pose = _canonical(poses, pose_id)
    world = pose_kernels(model, pose)
    cam_map = {c.camera_id: c for c in cameras}
    for cid in cam_ids:
        if cid not in cam_map:
            raise MissingAsset(f"camera {cid!r} not in rig")
        cam = cam_map[cid]
        img = render(project_gaussians(world, cam), cam, cfg.background)
        _check_finite(f"render {cid}", img)
        fileio.write_png(out / f"render_{pose_id}_{cid}.png", img)
    print(f"render: {len(cam_ids)} view(s) of pose {pose_id} -> {out}")


def cmd_animate(cfg: RunConfig, seed: int, out: Path) -> None:
    model, poses, cameras = _load_assets(cfg)
    model = _render_model(cfg, out, cfg.get("render", "source", "auto"))
    cam_id = cfg.get("animate", "camera", "eval_0")
    pose_ids = cfg.get("animate", "poses", " ".join(p.pose_id for p in poses)).split()
    cam_map = {c.camera_id: c for c in cameras}
    if cam_id not in cam_map:
        raise MissingAsset(f"camera {cam_id!r} not in rig")
    cam = cam_map[cam_id]
    frames = out / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    for i, pid in enumerate(pose_ids):
        pose = _canonical(poses, pid)
        world = pose_kernels(model, pose)
        img = render(project_gaussians(world, cam), cam, cfg.background)
        _check_finite(f"frame {i}", img)
        fileio.write_png(frames / f"frame_{i:04d}.png", img)
    print(f"animate: {len(pose_ids)} frame(s) -> {frames}")


def cmd_eval(cfg: RunConfig, seed: int, out: Path) -> None:
    model, poses, cameras = _load_assets(cfg)
    edited = _render_model(cfg, out, cfg.get("render", "source", "auto"))
    original = fileio.load_avatar(cfg.require_path("avatar"))
    texture = fileio.load_texture(_texture_stem(cfg, out))
    pose_ids = cfg.get("eval", "poses", "canonical").split()
    cam_ids = cfg.get("eval", "cameras", "eval_p45 eval_0 eval_m45").split()
    cam_map = {c.camera_id: c for c in cameras}
    eval_poses = [_canonical(poses, pid) for pid in pose_ids]
    eval_cams = [cam_map[cid] for cid in cam_ids if cid in cam_map]
    if len(eval_cams) != len(cam_ids):
        missing = set(cam_ids) - set(cam_map)
        raise MissingAsset(f"cameras missing from rig: {sorted(missing)}")
    report = evaluate(
        edited,
        original,
        texture,
        eval_poses,
        eval_cams,
        cfg.mask_spec(),
        uv_resolution=cfg.get("eval", "uv_resolution", 64, int),
        background=cfg.background,
    )
    (out / "eval_report.txt").write_text(report.to_text())
    (out / "eval_report.kv").write_text(report.to_kv())
    print(report.to_text(), end="")


COMMANDS = {
    "synth-head": cmd_synth_head,
    "bake": cmd_bake,
    "coarse": cmd_coarse,
    "refine": cmd_refine,
    "render": cmd_render,
    "animate": cmd_animate,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatmakeup",
        description="coarse-to-fine makeup transfer for rigged Gaussian avatars",
    )
    parser.add_argument("command", choices=sorted(COMMANDS) + ["init-config"])
    parser.add_argument("--config", default="run.cfg", help="configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override [seed]")
    parser.add_argument("--out", default=None, help="override [paths] out")
    parser.add_argument(
        "--stage-overrides",
        nargs="*",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="ad-hoc config overrides, e.g. train.coarse_iters=100",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get(THREADS_ENV)
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)

    if args.command == "init-config":
        target = Path(args.config)
        if target.exists():
            print(f"{target} already exists", file=sys.stderr)
            return EXIT_CONFIG
        target.write_text(DEFAULT_CONFIG)
        print(f"wrote {target}")
        return 0

    try:
        cfg = RunConfig.load(args.config)
        cfg.apply_overrides(args.stage_overrides)
        seed = args.seed if args.seed is not None else cfg.seed
        out = cfg.out_dir(args.out)
        COMMANDS[args.command](cfg, seed, out)
        _stamp(cfg, out, seed, args.command)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingAsset, MissingGuidance, FileNotFoundError) as exc:
        print(f"missing asset: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SplatMakeupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
