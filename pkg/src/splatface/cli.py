"""Command-line interface: data generation, training, rendering, evaluation,
and artifact inspection.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig, default_config_toml, load_config
from .io_format import FormatError, read_array, read_checkpoint, write_array, write_png
from .losses import aue, lmd, perceptual_proxy, psnr, ssim_value
from .model import HeadModel, load_model_checkpoint, model_hash
from .renderer import blend_head
from .synth import (SceneConfig, audio_recovery_mae, gen_scene, load_bundle,
                    project_points, save_bundle)
from .train import NumericalError, Trainer, final_psnr


class DataError(RuntimeError):
    pass


def _set_threads(n):
    if n and n > 0:
        import numba
        cap = numba.config.NUMBA_NUM_THREADS
        if int(n) > cap:
            print(f"requested {n} threads, but only {cap} available; using {cap}",
                  file=sys.stderr)
        numba.set_num_threads(min(int(n), cap))


def _load_bundle(path):
    try:
        return load_bundle(path)
    except (FileNotFoundError, NotADirectoryError):
        raise DataError(f"scene bundle not found at {path}") from None
    except (FormatError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise DataError(f"bad scene bundle at {path}: {e}") from None


def _parse_frame_range(spec, n_total):
    """"A:B" half-open range, "A" single frame, default all frames."""
    if spec is None:
        return list(range(n_total))
    try:
        if ":" in spec:
            a, b = spec.split(":", 1)
            lo = int(a) if a else 0
            hi = int(b) if b else n_total
        else:
            lo = int(spec)
            hi = lo + 1
    except ValueError:
        raise ConfigError(f"bad frame range {spec!r}") from None
    if lo < 0 or hi > n_total:
        raise DataError(f"frame range {spec!r} outside 0..{n_total}")
    return list(range(lo, hi))


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args):
    cfg = SceneConfig(t_frames=args.frames, width=args.width, height=args.height,
                      n_face=args.n_face, n_mouth=args.n_mouth,
                      blend_mode=args.blend, noise_sigma=args.noise_sigma)
    _set_threads(args.threads)
    bundle = gen_scene(args.seed, cfg)
    save_bundle(bundle, args.out, write_pngs=not args.no_pngs)
    oracle = audio_recovery_mae(bundle.audio, bundle.au_traj)
    print(f"wrote bundle to {args.out}: {cfg.t_frames} frames, "
          f"{cfg.n_face}+{cfg.n_mouth} primitives, {cfg.width}x{cfg.height}")
    print(f"audio-to-AU recovery oracle MAE (held-out ridge): {oracle:.4f}")
    return 0


def _config_from_args(args):
    overrides = {
        "bundle_dir": args.bundle,
        "out_dir": args.out,
        "seed": args.seed,
        "threads": args.threads,
        "gate_mode": getattr(args, "gate_mode", None),
        "fusion_mode": getattr(args, "fusion_mode", None),
        "blend_mode": getattr(args, "blend", None),
        "static_iters": getattr(args, "static_iters", None),
        "motion_iters": getattr(args, "motion_iters", None),
        "finetune_iters": getattr(args, "finetune_iters", None),
        "train_frames": getattr(args, "train_frames", None),
        "log_every": getattr(args, "log_every", None),
    }
    cfg = load_config(args.config, overrides)
    if getattr(args, "paper_scale", False):
        cfg.apply_paper_scale()
    return cfg.validate()


def cmd_train(args):
    cfg = _config_from_args(args)
    if not cfg.bundle_dir:
        raise ConfigError("train requires a bundle directory (--bundle)")
    bundle = _load_bundle(cfg.bundle_dir)
    _set_threads(cfg.threads)
    os.makedirs(cfg.out_dir, exist_ok=True)
    log_path = os.path.join(cfg.out_dir, "train_log.jsonl")
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.ckpt")
    trainer = Trainer(bundle, cfg, log_path=log_path)
    if args.resume:
        trainer.load(args.resume)
        print(f"resumed from {args.resume} at global step {trainer.global_step()}")
    elif os.path.exists(log_path):
        os.remove(log_path)
    steps = trainer.train()
    trainer.save(ckpt_path)
    train_psnr = final_psnr(trainer, frames=range(min(trainer.n_train, 10)))
    print(f"ran {steps} steps; checkpoint at {ckpt_path}; loss log at {log_path}")
    print(f"image-driven PSNR on first training frames: {train_psnr:.2f} dB")
    return 0


def _load_model_for_render(ckpt_path, bundle):
    try:
        header, _ = read_checkpoint(ckpt_path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found at {ckpt_path}") from None
    cfg_dict = dict(header.get("config", {}))
    cfg_dict.pop("extra", None)
    cfg = RunConfig(**{k: tuple(v) if isinstance(v, list) else v
                       for k, v in cfg_dict.items()}).validate()
    model = HeadModel(bundle, cfg)
    manifest = {"seed": bundle.seed, "config": bundle.config.to_dict()}
    try:
        load_model_checkpoint(ckpt_path, model, manifest)
    except FormatError as e:
        raise DataError(str(e)) from None
    return model, cfg


def cmd_render(args):
    bundle = _load_bundle(args.bundle)
    _set_threads(args.threads)
    model, cfg = _load_model_for_render(args.checkpoint, bundle)
    blend_mode = args.blend or cfg.blend_mode
    frames = _parse_frame_range(args.frames, bundle.t_frames)
    if not frames:
        print("empty frame range; nothing to render")
        return 0
    os.makedirs(args.out, exist_ok=True)
    path = "audio" if args.drive == "audio" else "vanilla"
    lm_idx = bundle.landmark_idx
    pred_landmarks = np.zeros((len(frames), lm_idx.size, 2))
    lm_disp = np.zeros((len(frames), lm_idx.size, 3))
    for k, t in enumerate(frames):
        feats = model.frame_features(bundle.au_traj[t], bundle.audio, t)
        c_fused = model.fuse(path, feats)
        cf, af, _, d_mu_f = model.render_branch("face", c_fused, feats["c_e_vu"])
        cm, am, _, _ = model.render_branch("mouth", c_fused, feats["c_e_vu"])
        img = blend_head(cf, af, cm, am, mode=blend_mode).data
        write_png(os.path.join(args.out, f"frame_{t:05d}.png"), img)
        write_array(os.path.join(args.out, f"frame_{t:05d}.hmtk"), img)
        disp = d_mu_f.data[lm_idx]
        lm_disp[k] = disp
        pred_landmarks[k] = project_points(
            model.fields["face"].mu.data[lm_idx] + disp, bundle.camera)
    pred_aus = bundle.estimate_aus_from_displacement(lm_disp)
    write_array(os.path.join(args.out, "pred_landmarks.hmtk"), pred_landmarks)
    write_array(os.path.join(args.out, "pred_aus.hmtk"), pred_aus)
    with open(os.path.join(args.out, "render_manifest.json"), "w") as f:
        json.dump({"frames": frames, "drive": args.drive, "blend": blend_mode},
                  f, sort_keys=True)
    print(f"rendered {len(frames)} frames ({args.drive}-driven) to {args.out}")
    return 0


def cmd_eval(args):
    bundle = _load_bundle(args.bundle)
    man_path = os.path.join(args.rendered, "render_manifest.json")
    try:
        with open(man_path) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise DataError(f"no render manifest at {man_path}") from None
    frames = manifest["frames"]
    missing = [t for t in frames
               if not os.path.exists(os.path.join(args.rendered, f"frame_{t:05d}.hmtk"))]
    if missing:
        raise DataError("missing rendered frames: " + ", ".join(map(str, missing)))
    bad = [t for t in frames if not 0 <= t < bundle.t_frames]
    if bad:
        raise DataError("rendered frame indices outside bundle: "
                        + ", ".join(map(str, bad)))
    pred_landmarks = read_array(os.path.join(args.rendered, "pred_landmarks.hmtk"))
    pred_aus = read_array(os.path.join(args.rendered, "pred_aus.hmtk"))
    if pred_landmarks.shape[0] != len(frames) or pred_aus.shape[0] != len(frames):
        raise DataError("landmark/AU track length does not match rendered frames")

    per_frame = []
    for k, t in enumerate(frames):
        img = read_array(os.path.join(args.rendered, f"frame_{t:05d}.hmtk"))
        gt = bundle.gt_frames[t]
        if img.shape != gt.shape:
            raise DataError(f"frame {t}: rendered shape {img.shape} != {gt.shape}")
        au_l, au_u = aue(pred_aus[k:k + 1], bundle.au_traj[t:t + 1])
        per_frame.append({
            "frame": t,
            "psnr": psnr(img, gt),
            "ssim": ssim_value(img, gt),
            "perceptual": float(perceptual_proxy(img, gt).data),
            "lmd": lmd(pred_landmarks[k], bundle.landmarks[t]),
            "aue_l": au_l,
            "aue_u": au_u,
        })
    agg = {"frames": len(frames)}
    for key in ("psnr", "ssim", "perceptual", "lmd", "aue_l", "aue_u"):
        agg[key] = float(np.mean([r[key] for r in per_frame]))
    if args.report:
        with open(args.report, "w") as f:
            for r in per_frame:
                f.write(json.dumps({"kind": "frame", **r}, sort_keys=True) + "\n")
            f.write(json.dumps({"kind": "aggregate", **agg}, sort_keys=True) + "\n")
    print(f"evaluated {agg['frames']} frames:")
    print(f"  PSNR {agg['psnr']:.2f} dB   SSIM {agg['ssim']:.4f}   "
          f"perceptual {agg['perceptual']:.4f}")
    print(f"  LMD {agg['lmd']:.3f} px   AUE-L {agg['aue_l']:.3f}   "
          f"AUE-U {agg['aue_u']:.3f}")
    return 0


def cmd_inspect(args):
    if args.default_config:
        sys.stdout.write(default_config_toml())
        return 0
    path = args.path
    if path is None:
        raise ConfigError("inspect needs a path or --default-config")
    if os.path.isdir(path):
        bundle = _load_bundle(path)
        print(f"scene bundle: seed {bundle.seed}, {bundle.t_frames} frames, "
              f"{bundle.config.width}x{bundle.config.height}, "
              f"{bundle.face_geom.mu.shape[0]} face + "
              f"{bundle.mouth_geom.mu.shape[0]} mouth primitives")
        oracle = audio_recovery_mae(bundle.audio, bundle.au_traj)
        print(f"audio-to-AU recovery oracle MAE: {oracle:.4f}")
        return 0
    try:
        with open(path, "rb") as f:
            magic = f.read(8)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    if magic == b"HMTKCKPT":
        header, arrays = read_checkpoint(path)
        n_param = sum(v.size for k, v in arrays.items() if k.startswith("param."))
        print(f"checkpoint: stage {header['stage']}, iteration {header['iteration']}, "
              f"config hash {header['config_hash']}")
        print(f"  {len(arrays)} arrays, {n_param} model parameters")
        return 0
    if magic[:4] == b"HMTK":
        arr = read_array(path)
        print(f"array: shape {arr.shape}, min {arr.min():.6g}, "
              f"max {arr.max():.6g}, mean {arr.mean():.6g}")
        return 0
    raise DataError(f"unrecognized file format: {path}")


# -- argument parsing ----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="splatface",
                                description="audio-driven deformable Gaussian "
                                            "head renderer")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic scene bundle")
    g.add_argument("out")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=500)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--n-face", type=int, default=2000)
    g.add_argument("--n-mouth", type=int, default=200)
    g.add_argument("--blend", choices=("as-written", "face-complement"),
                   default="as-written")
    g.add_argument("--noise-sigma", type=float, default=0.01)
    g.add_argument("--threads", type=int, default=0)
    g.add_argument("--no-pngs", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run the three-stage training loop")
    t.add_argument("--bundle", default=None)
    t.add_argument("--out", default=None)
    t.add_argument("--config", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--threads", type=int, default=None)
    t.add_argument("--paper-scale", action="store_true",
                   help="use full-scale iteration counts (50000/15000)")
    t.add_argument("--resume", default=None)
    t.add_argument("--gate-mode", default=None)
    t.add_argument("--fusion-mode", default=None)
    t.add_argument("--blend", default=None)
    t.add_argument("--static-iters", type=int, default=None)
    t.add_argument("--motion-iters", type=int, default=None)
    t.add_argument("--finetune-iters", type=int, default=None)
    t.add_argument("--train-frames", type=int, default=None)
    t.add_argument("--log-every", type=int, default=None)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render frames from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--bundle", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--frames", default=None, help="A:B half-open range")
    r.add_argument("--drive", choices=("audio", "image"), default="image")
    r.add_argument("--blend", choices=("as-written", "face-complement"),
                   default=None)
    r.add_argument("--threads", type=int, default=0)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="score rendered frames against a bundle")
    e.add_argument("--rendered", required=True)
    e.add_argument("--bundle", required=True)
    e.add_argument("--report", default=None)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="describe a bundle, checkpoint, or array")
    i.add_argument("path", nargs="?", default=None)
    i.add_argument("--default-config", action="store_true")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, FormatError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (NumericalError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
