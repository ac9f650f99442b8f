"""Command-line entry points tying the modules into runnable experiments.

Subcommands: gen-data, train, sample, evaluate, export. Every command
honors --seed and records provenance (config hash, package version,
checkpoint hash) next to its outputs, so any artifact can be traced to
the exact inputs that produced it. Exit codes: 0 success, 2 schema or
argument error, 3 infeasible input, 4 numeric failure.
"""

import argparse
import hashlib
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .config import apply_config, parse_config_text, serialize_config
from .dataset import (
    WINDOW_STRIDE,
    Window,
    generate_dataset,
    inject_noise,
    load_meta,
    load_motion_dir,
    load_scene,
    sample_keyframe_mask,
    save_window,
    scene_for_window,
)
from .errors import (
    EmptySceneError,
    InfeasibleSceneError,
    MotionfillError,
    NumericError,
    SchemaError,
)
from .kinematics import forward_kinematics, pose_unpack
from .metrics import (
    COLLISION_EPS,
    COLLISION_POINTS,
    CONTACT_HEIGHT,
    accel,
    aggregate_report,
    collision_metrics,
    fid,
    foot_skating,
    jerk,
    mjpe,
    report_to_text,
)
from .nn.extractor import load_extractor
from .sampling import SamplerConfig, autoregressive_sample, sample_inbetween, sample_noisy
from .skeleton import canonical_skeleton
from .training import TrainConfig, Trainer, WindowBank, load_checkpoint, train_config


@dataclass(frozen=True)
class DataConfig:
    n_scenes: int = 12
    train_windows: int = 2000
    test_windows: int = 200
    test_scenes: int = 2
    stride: int = WINDOW_STRIDE
    difficulty: tuple = (0.25, 0.85)
    fps: int = 30


@dataclass(frozen=True)
class MetricConfig:
    collision_eps: float = COLLISION_EPS
    surface_points: int = COLLISION_POINTS
    contact_height: float = CONTACT_HEIGHT


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a full experiment needs; every field has a default."""

    profile: str = "desk"
    seed: int = 0
    out_dir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=lambda: train_config("desk"))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)


def experiment_config(path=None, sets=None, profile=None, seed=None):
    """Assemble an ExperimentConfig from file + overrides + flags.

    Precedence (low to high): profile defaults, config file, repeated
    --set pairs, the --profile and --seed flags. --seed propagates into
    the train and sampler seeds so one flag pins a whole run.
    """
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = parse_config_text(fh.read())
    for key, value in sets or []:
        raw[key] = value
    if profile is not None:
        raw["profile"] = profile
    prof = raw.get("profile", "desk")
    base = ExperimentConfig(profile=prof, train=train_config(prof))
    cfg = apply_config(base, raw)
    if seed is not None:
        cfg = replace(
            cfg,
            seed=seed,
            train=replace(cfg.train, seed=seed),
            sampler=replace(cfg.sampler, seed=seed),
        )
    return cfg


def _hash_bytes(data):
    return hashlib.sha256(data).hexdigest()[:16]


def config_hash(cfg):
    return _hash_bytes(serialize_config(cfg).encode())


def file_hash(path):
    with open(path, "rb") as fh:
        return _hash_bytes(fh.read())


def _write_provenance(path, fields):
    lines = [f"generator motionfill-{__version__}\n"]
    for key, value in fields.items():
        lines.append(f"{key} {value}\n")
    with open(path, "w") as fh:
        fh.writelines(lines)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    cfg = experiment_config(args.config, args.set, seed=args.seed)
    d = cfg.data
    generate_dataset(
        args.out,
        seed=cfg.seed,
        n_scenes=d.n_scenes,
        train_windows=d.train_windows,
        test_windows=d.test_windows,
        test_scenes=d.test_scenes,
        stride=d.stride,
        difficulty=tuple(d.difficulty),
        fps=d.fps,
    )
    _write_provenance(
        os.path.join(args.out, "provenance.txt"),
        {"seed": cfg.seed, "config": config_hash(cfg)},
    )
    print(f"dataset written to {args.out}")
    return 0


def cmd_train(args):
    cfg = experiment_config(args.config, args.set, profile=args.profile, seed=args.seed)
    tcfg = cfg.train
    if args.noisy:
        tcfg = replace(tcfg, noisy_mode=True)
    if args.steps is not None:
        tcfg = replace(tcfg, train_steps=args.steps)
    bank = WindowBank(args.data, "train")
    trainer = Trainer(tcfg, bank, args.out, resume=args.resume)
    base = trainer.train()
    _write_provenance(
        os.path.join(args.out, "provenance.txt"),
        {
            "seed": tcfg.seed,
            "config": config_hash(tcfg),
            "checkpoint": file_hash(base + ".bin"),
            "data": args.data,
        },
    )
    print(f"checkpoint {base}")
    return 0


def _build_mask(n, args, seed):
    if args.interval is not None:
        return sample_keyframe_mask(n, "uniform", spacing=args.interval)
    if args.random is not None:
        return sample_keyframe_mask(n, "random", p=args.random, seed=seed)
    return sample_keyframe_mask(n, "count", seed=seed)


def cmd_sample(args):
    cfg = experiment_config(args.config, args.set, seed=args.seed)
    scfg = replace(cfg.sampler, t_star=args.tstar if args.noisy else cfg.sampler.t_star)
    if args.guidance is not None:
        scfg = replace(scfg, guidance_weight=args.guidance)
    if not args.keyframes and not args.window:
        raise SchemaError("either --window or --keyframes is required")
    if args.long is not None and args.noisy:
        raise SchemaError("--long and --noisy cannot be combined")

    bundle = load_checkpoint(args.checkpoint)
    model, schedule = bundle.build_model(), bundle.schedule
    if not bundle.cfg.scene_conditioning:
        scfg = replace(scfg, scene_conditioning=False)
    skel = canonical_skeleton()
    folder = args.keyframes or os.path.join(args.data, "motions", args.window)
    window, scene_id = load_motion_dir(folder, skel)
    scene = scene_for_window(load_scene(args.data, scene_id), window)
    motion = window.motion
    if args.noise_level > 0.0:
        motion = inject_noise(motion, args.noise_level, seed=cfg.seed)
    s = motion.frames
    shape = np.asarray(motion.shape)

    if args.long is not None:
        if len(s) < args.long:
            raise SchemaError(
                f"--long {args.long} needs at least that many keyframe rows, "
                f"got {len(s)}"
            )
        s = s[: args.long]
        m = _build_mask(args.long, args, cfg.seed)
        out = autoregressive_sample(
            s, m, scene, shape, skel, model, schedule, scfg, overlap=args.overlap
        )
    else:
        m = _build_mask(len(s), args, cfg.seed)
        sampler = sample_noisy if args.noisy else sample_inbetween
        out = sampler(s, m, scene, shape, skel, model, schedule, scfg)

    out_id = args.name or os.path.basename(os.path.normpath(folder))
    save_window(args.out, out_id, Window(out, origin=window.origin, yaw=window.yaw), scene_id)
    dest = os.path.join(args.out, "motions", out_id)
    _write_provenance(
        os.path.join(dest, "provenance.txt"),
        {
            "seed": scfg.seed,
            "config": config_hash(cfg),
            "checkpoint": file_hash(args.checkpoint + ".bin"),
            "guidance_weight": scfg.guidance_weight,
            "t_star": scfg.t_star,
            "noisy": "true" if args.noisy else "false",
            "noise_level": args.noise_level,
            "keys": " ".join(str(i) for i in np.flatnonzero(m)),
        },
    )
    print(f"motion written to {dest}")
    return 0


def _motion_dirs(path):
    """The motions/ folder under path, or path itself if it holds containers."""
    inner = os.path.join(path, "motions")
    root = inner if os.path.isdir(inner) else path
    ids = sorted(
        d for d in os.listdir(root) if os.path.isfile(os.path.join(root, d, "meta"))
    )
    return root, ids


def cmd_evaluate(args):
    cfg = experiment_config(args.config, args.set, seed=args.seed)
    mcfg = cfg.metrics
    skel = canonical_skeleton()
    pred_root, ids = _motion_dirs(args.pred)
    ref_root, ref_ids = _motion_dirs(args.ref)
    missing = sorted(set(ids) - set(ref_ids))
    if not ids:
        raise SchemaError(f"no motion containers under {args.pred}")
    if missing:
        raise SchemaError(f"ids missing from {args.ref}: {' '.join(missing)}")
    extractor = load_extractor(args.extractor)

    rows, pred_seqs, ref_seqs = [], [], []
    for wid in ids:
        pred, _ = load_motion_dir(os.path.join(pred_root, wid), skel)
        ref, scene_id = load_motion_dir(os.path.join(ref_root, wid), skel)
        scene = scene_for_window(load_scene(args.data, scene_id), ref)
        frame_ratio, vertex_ratio, pen_max = collision_metrics(
            pred.motion, scene, eps=mcfg.collision_eps, n_points=mcfg.surface_points
        )
        row = {
            "id": wid,
            "foot_skating": foot_skating(pred.motion, mcfg.contact_height),
            "jerk": jerk(pred.motion),
            "accel": accel(pred.motion),
            "mjpe_all": mjpe(pred.motion, ref.motion),
            "collision_frame_ratio": frame_ratio,
            "collision_vertex_ratio": vertex_ratio,
            "penetration_max": pen_max,
        }
        keys = _provenance_keys(os.path.join(pred_root, wid))
        if keys is not None:
            mask = np.zeros(len(pred.motion), dtype=bool)
            mask[keys] = True
            row["mjpe_key"] = mjpe(pred.motion, ref.motion, mask)
        rows.append(row)
        pred_seqs.append(pred.motion)
        ref_seqs.append(ref.motion)

    fid_value = float("nan")
    if len(pred_seqs) >= 2:
        fid_value = fid(extractor.features(pred_seqs), extractor.features(ref_seqs))
    report = aggregate_report(rows, fid_value, extractor.hash)
    with open(args.out, "w") as fh:
        fh.write(report_to_text(report))
    print(f"report written to {args.out}")
    return 0


def _provenance_keys(folder):
    path = os.path.join(folder, "provenance.txt")
    if not os.path.exists(path):
        return None
    raw = load_meta(path).get("keys")
    if raw is None:
        return None
    return [int(v) for v in str(raw).split()]


def cmd_export(args):
    if args.format not in ("text", "plot", "both"):
        raise SchemaError(f"unknown export format {args.format!r}")
    skel = canonical_skeleton()
    window, _ = load_motion_dir(args.motion, skel)
    pose, _ = pose_unpack(window.motion.frames)
    joints = forward_kinematics(pose, skel)  # (N, 22, 3)
    os.makedirs(args.out, exist_ok=True)

    if args.format in ("text", "both"):
        path = os.path.join(args.out, "joints.txt")
        with open(path, "w") as fh:
            for i, frame in enumerate(joints.reshape(len(joints), -1)):
                fh.write(" ".join([str(i)] + [repr(float(v)) for v in frame]) + "\n")
        print(f"joint table written to {path}")

    if args.format in ("plot", "both"):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        keys = _provenance_keys(args.motion)
        root = joints[:, 0]  # pelvis path
        fig, ax = plt.subplots(figsize=(6, 6))
        ax.plot(root[:, 0], root[:, 2], "-", lw=1.5, label="root path")
        if keys:
            ax.plot(root[keys, 0], root[keys, 2], "o", ms=6, label="keyframes")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("z (m)")
        ax.set_aspect("equal")
        ax.legend()
        path = os.path.join(args.out, "trajectory.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        print(f"trajectory plot written to {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _common(parser):
    parser.add_argument("--config", help="experiment config file (dotted key value)")
    parser.add_argument(
        "--set", nargs=2, action="append", metavar=("KEY", "VALUE"),
        help="override one config key (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="global seed; recorded in provenance")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="motionfill",
        description="Scene-aware motion in-betweening: data, training, sampling, metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory to create")
    _common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the denoiser")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="run directory for checkpoints/logs")
    p.add_argument("--profile", choices=("desk", "paper", "cpu"), help="model scale")
    p.add_argument("--noisy", action="store_true", help="train the noisy-keyframe mode")
    p.add_argument("--steps", type=int, help="override train.train_steps")
    p.add_argument("--resume", help="checkpoint base to resume from")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="in-between keyframes with a trained model")
    p.add_argument("--checkpoint", required=True, help="checkpoint base path")
    p.add_argument("--data", required=True, help="dataset root (scenes + windows)")
    p.add_argument("--window", help="window id to take keyframes from")
    p.add_argument("--keyframes", help="motion container folder (overrides --window)")
    p.add_argument("--out", required=True, help="output root (motions/ written inside)")
    p.add_argument("--name", help="output container id (defaults to the input id)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--interval", type=int, help="uniform keyframe spacing r")
    group.add_argument("--random", type=float, help="random keyframe probability p")
    p.add_argument("--noisy", action="store_true", help="two-range noisy-keyframe sampling")
    p.add_argument("--tstar", type=int, default=20, help="imputation stop step (with --noisy)")
    p.add_argument("--noise-level", type=float, default=0.0, help="perturb input keyframes first")
    p.add_argument("--guidance", type=float, help="guidance weight override")
    p.add_argument("--long", type=int, help="autoregressive total frame count M")
    p.add_argument("--overlap", type=int, default=60, help="stitching overlap v")
    _common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="score predictions against references")
    p.add_argument("--pred", required=True, help="predicted motions dir")
    p.add_argument("--ref", required=True, help="reference motions dir")
    p.add_argument("--data", required=True, help="dataset root (scene lookup)")
    p.add_argument("--extractor", required=True, help="feature extractor base path")
    p.add_argument("--out", required=True, help="report file to write")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="export joints and a trajectory plot")
    p.add_argument("--motion", required=True, help="motion container folder")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", default="both", help="text | plot | both")
    _common(p)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except SchemaError as err:
        print(f"schema error: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"argument error: {err}", file=sys.stderr)
        return 2
    except (InfeasibleSceneError, EmptySceneError) as err:
        print(f"infeasible input: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 4
    except MotionfillError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"cannot read input: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
