"""Command-line entry point.

Data goes to stdout, diagnostics to stderr. Any library error ends the run
with exit code 2 and a one-line JSON object ``{"error": category, "message": ...}``
on stderr.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ImuPoseError, ValidationError

log = logging.getLogger("imupose")

EXIT_ERROR = 2

# config-file keys accepted by ``train --config`` (key = value, '#' comments)
_TRAIN_KEYS = {
    "epochs": int, "batch": int, "lr": float, "lr_min": float, "hidden": int, "glb": int,
    "init_hidden": int, "layers": int, "window": int, "seed": int, "clip": float, "val_every": int,
    "deterministic": "bool", "teacher_forcing": "bool", "yaw_canon": "bool", "detach_glb": "bool",
}


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


def read_config(path):
    """Parse a ``key = value`` training config into a dict of typed values."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TRAIN_KEYS:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        kind = _TRAIN_KEYS[key]
        try:
            out[key] = _parse_bool(value) if kind == "bool" else kind(value)
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def _format_row(values):
    return " ".join("%.17g" % v for v in values)


def _parse_row(line, width, lineno):
    parts = line.split()
    if len(parts) != width:
        raise ValidationError(f"line {lineno}: expected {width} values, got {len(parts)}")
    try:
        row = np.array([float(p) for p in parts])
    except ValueError:
        raise ValidationError(f"line {lineno}: not a number") from None
    if not np.all(np.isfinite(row)):
        raise ValidationError(f"line {lineno}: non-finite value")
    return row


def read_feature_text(path):
    """Whitespace-separated text, one 72-value frame per line -> (T, 72)."""
    from .synth import N_FEATURES

    rows = []
    with open(path) as fh:
        for k, line in enumerate(fh, 1):
            if line.strip():
                rows.append(_parse_row(line, N_FEATURES, k))
    if not rows:
        raise ValidationError(f"{path}: no frames")
    return np.stack(rows)


def write_feature_text(path, features):
    with open(path, "w") as fh:
        for row in features:
            fh.write(_format_row(row) + "\n")


# -- subcommands ------------------------------------------------------------

def cmd_synth(args):
    from .data import read_sequence_file, write_sequence_file
    from .synth import normalize_imu, synthesize_imu

    pose, _ = read_sequence_file(args.input)
    imu = synthesize_imu(pose, radius=args.radius)
    write_sequence_file(args.output, pose, imu)
    if args.features:
        write_feature_text(args.features, normalize_imu(imu, args.yaw_canon))
    log.info("wrote %s (%d frames)", args.output, pose.n_frames)


def cmd_convert(args):
    from .data import read_sequence_file, write_sequence_file
    from .skeleton import builtin_mapping, map_pose

    pose, imu = read_sequence_file(args.input)
    if args.src and args.src != pose.skeleton.name:
        raise ValidationError(f"{args.input} holds a {pose.skeleton.name} pose, not {args.src}")
    out = map_pose(pose, builtin_mapping(pose.skeleton.name, args.dst), args.dst)
    write_sequence_file(args.output, out, imu)


def _train_config(args):
    from .model import ModelConfig
    from .trainer import TrainConfig

    model = ModelConfig(hidden=args.hidden, glb_hidden=args.glb, init_hidden=args.init_hidden,
                        n_layers=args.layers, detach_glb=args.detach_glb, canonical_yaw=args.yaw_canon)
    try:
        return TrainConfig(epochs=args.epochs, batch=args.batch, lr0=args.lr, lr_min=args.lr_min,
                           window=args.window, seed=args.seed, clip_norm=args.clip,
                           teacher_forcing=args.teacher_forcing, val_every=args.val_every,
                           deterministic=args.deterministic, model=model)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def cmd_train(args):
    from .data import load_chunks, read_manifest
    from .trainer import train

    if args.resume:
        # the stored configuration keeps the schedule and shuffling identical
        from .nncore import load_checkpoint
        from .trainer import TrainConfig

        config = TrainConfig.from_dict(load_checkpoint(args.resume)[2]["train"])
    else:
        config = _train_config(args)
    manifest = read_manifest(args.manifest)
    chunks = load_chunks(manifest["train"], config.window, config.model.canonical_yaw)
    if not chunks:
        raise ValidationError(f"no {config.window}-frame training chunks in {args.manifest}")
    val_paths = {"test": manifest["test"], "train": manifest["train"], "none": []}[args.val]
    val = load_chunks(val_paths, config.window, config.model.canonical_yaw) if val_paths else []

    def progress(row):
        extra = f" val_sip {row['val_sip_deg']:.3f}" if "val_sip_deg" in row else ""
        print(f"epoch {row['epoch']} step {row['step']} loss {row['loss']:.6f}{extra}", file=sys.stderr)

    t0 = time.perf_counter()
    result = train(config, chunks, val, out_dir=args.out, resume_from=args.resume,
                   stop_after_epoch=args.stop_after, progress=progress)
    log.info("trained %d chunks in %.1f s", len(chunks), time.perf_counter() - t0)
    print(json.dumps({"checkpoint": str(result.checkpoint), "final_loss": result.log[-1]["loss"],
                      "epochs": result.log[-1]["epoch"]}))


def cmd_eval(args):
    from .evaluation import evaluate_dataset, format_table

    report = evaluate_dataset(args.checkpoint, args.manifest, args.split, args.csv, args.sip_dump)
    print(format_table([(args.label, report)]))


def _load_inputs(path, canonical_yaw):
    """Sequence file (IMU synthesized if absent) or 72-column text -> (T, 72)."""
    from .data import read_sequence_file
    from .synth import normalize_imu, synthesize_imu

    p = Path(path)
    if p.suffix in (".txt", ".tsv", ".dat"):
        return read_feature_text(p), 60.0
    pose, imu = read_sequence_file(p)
    if imu is None:
        imu = synthesize_imu(pose)
    return normalize_imu(imu, canonical_yaw), imu.fps


def cmd_infer(args):
    from .evaluation import run_inference
    from .trainer import load_model

    params, cfg = load_model(args.checkpoint)
    if args.stream:
        return _infer_stream(params, cfg)
    if not args.input:
        raise ValidationError("infer needs an input file unless --stream is given")
    feats, fps = _load_inputs(args.input, cfg.canonical_yaw)
    pred = run_inference(params, cfg, feats)
    out = args.output
    if out is None or Path(out).suffix == ".txt":
        fh = sys.stdout if out is None else open(out, "w")
        try:
            for frame in pred:
                fh.write(_format_row(frame.ravel()) + "\n")
        finally:
            if fh is not sys.stdout:
                fh.close()
    else:
        from .data import write_sequence_file
        from .skeleton import PoseSequence, builtin_skeleton

        write_sequence_file(out, PoseSequence(builtin_skeleton("xsens23"), fps, pred))


def _infer_stream(params, cfg):
    from .model import assemble_from_features, concat_pose, init_states, step_realtime
    from .synth import N_FEATURES

    state = init_states(params, cfg)
    out = sys.stdout
    for k, line in enumerate(sys.stdin, 1):
        if not line.strip():
            continue
        frame = _parse_row(line, N_FEATURES, k)
        _, pose, state = step_realtime(params, cfg, state, frame)
        full = assemble_from_features(concat_pose(pose), frame, on_degenerate="identity")
        out.write(_format_row(full.ravel()) + "\n")
        out.flush()


def cmd_gen_demo(args):
    from .demo import gen_demo_corpus

    manifest = gen_demo_corpus(args.out, n_seqs=args.seqs, n_frames=args.frames, n_test=args.test_seqs,
                               seed=args.seed, fps=args.fps, binary=args.binary)
    print(str(manifest))


def cmd_bench(args):
    from ._kernels import backend
    from .model import ModelConfig, init_params, init_states, step_realtime

    if args.checkpoint:
        from .trainer import load_model

        params, cfg = load_model(args.checkpoint)
    else:
        cfg = ModelConfig(hidden=args.hidden, glb_hidden=args.glb, init_hidden=args.init_hidden)
        params = init_params(cfg, args.seed)
    rng = np.random.default_rng(args.seed)
    frames = rng.standard_normal((args.warmup + args.frames, 72)) * 0.1
    state = init_states(params, cfg)
    times = []
    for k, f in enumerate(frames):
        t0 = time.perf_counter()
        _, _, state = step_realtime(params, cfg, state, f)
        if k >= args.warmup:
            times.append(time.perf_counter() - t0)
    ms = np.array(times) * 1e3
    print(json.dumps({"backend": backend(), "hidden": cfg.hidden, "frames": len(ms),
                      "mean_ms": float(ms.mean()), "median_ms": float(np.median(ms)),
                      "p95_ms": float(np.percentile(ms, 95)), "fps": float(1e3 / ms.mean())}))


# -- parser -----------------------------------------------------------------

def build_parser(train_defaults=None):
    """``train_defaults`` (from a config file) replace the built-in defaults of ``train``."""
    p = argparse.ArgumentParser(prog="imupose", description="Sparse-IMU full-body pose estimation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="add virtual IMU readings to a pose file")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--radius", type=int, default=4, help="finite-difference half width in frames")
    s.add_argument("--features", help="also write normalized 72-value input frames as text")
    s.add_argument("--yaw-canon", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("convert", help="map global orientations between skeletons")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--from", dest="src", choices=("xsens23", "smpl24"))
    s.add_argument("--to", dest="dst", required=True, choices=("xsens23", "smpl24"))
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("train", help="train a model on a manifest's training split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="run directory (checkpoint, metrics.csv)")
    s.add_argument("--config", help="key = value file; explicit flags take precedence")
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--lr-min", type=float, default=0.0)
    s.add_argument("--hidden", type=int, default=256)
    s.add_argument("--glb", type=int, default=64, help="global context width (0 disables it)")
    s.add_argument("--init-hidden", type=int, default=256)
    s.add_argument("--layers", type=int, default=2)
    s.add_argument("--window", type=int, default=300)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--clip", type=float, default=10.0)
    s.add_argument("--val", choices=("test", "train", "none"), default="test")
    s.add_argument("--val-every", type=int, default=1)
    s.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--teacher-forcing", action="store_true")
    s.add_argument("--yaw-canon", action="store_true")
    s.add_argument("--detach-glb", action="store_true")
    s.add_argument("--resume", help="checkpoint directory to continue from; its stored hyperparameters are used")
    s.add_argument("--stop-after", type=int, help="end after this many epochs; resume later with --resume")
    s.set_defaults(func=cmd_train, **(train_defaults or {}))

    s = sub.add_parser("eval", help="score a checkpoint on a manifest split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--csv", help="per-sequence report")
    s.add_argument("--sip-dump", help="per-frame SIP errors")
    s.add_argument("--label", default="model")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="estimate full-body poses")
    s.add_argument("input", nargs="?", help="sequence file or 72-column text")
    s.add_argument("-o", "--output", help="pose file (.json/.seqb) or .txt; stdout text if omitted")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--stream", action="store_true", help="read frames from stdin, one per line")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("gen-demo", help="write a procedural motion corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--seqs", type=int, default=3)
    s.add_argument("--frames", type=int, default=900)
    s.add_argument("--test-seqs", type=int, default=0)
    s.add_argument("--fps", type=float, default=60.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--binary", action="store_true", help="write .seqb instead of JSON")
    s.add_argument("--deterministic", action="store_true", help="accepted for symmetry; generation is always seeded")
    s.set_defaults(func=cmd_gen_demo)

    s = sub.add_parser("bench", help="per-frame latency of real-time stepping")
    s.add_argument("--checkpoint")
    s.add_argument("--frames", type=int, default=300)
    s.add_argument("--warmup", type=int, default=20)
    s.add_argument("--hidden", type=int, default=256)
    s.add_argument("--glb", type=int, default=64)
    s.add_argument("--init-hidden", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)
    return p


def _check_positive(args):
    for name in ("epochs", "batch", "window", "hidden", "init_hidden", "layers", "frames", "seqs", "val_every",
                 "stop_after"):
        v = getattr(args, name, None)
        if v is not None and v <= 0:
            raise ValidationError(f"--{name.replace('_', '-')} must be positive")
    for name in ("glb", "test_seqs", "warmup"):
        v = getattr(args, name, None)
        if v is not None and v < 0:
            raise ValidationError(f"--{name.replace('_', '-')} must be non-negative")


def _fail(category, message):
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_ERROR


def run(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if getattr(args, "config", None):
            # explicit flags still win over config values
            args = build_parser(read_config(args.config)).parse_args(argv)
        _check_positive(args)
        args.func(args)
    except ImuPoseError as exc:
        return _fail(exc.category, str(exc))
    except FileNotFoundError as exc:
        return _fail("file_not_found", str(exc))
    except OSError as exc:
        return _fail("io_error", str(exc))
    return 0


def main():
    sys.exit(run())
