"""Training objective, optimisation loop and checkpoint handling."""
import contextlib
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nncore as nn
from .data import stack_chunks
from .errors import NonFiniteGradient, ShapeMismatch, ValidationError
from .evaluation import per_frame_ang, per_frame_pos, per_frame_sip
from .model import ModelConfig, assemble_from_features, concat_pose, init_params, train_forward
from .model import train_backward
from .regions import REGIONS

log = logging.getLogger(__name__)

TERM_NAMES = tuple(f"{r.name}.{kind}" for r in REGIONS for kind in ("pose", "vel"))
LOG_COLUMNS = ("epoch", "step", "lr", "loss") + tuple(t.replace(".", "_") for t in TERM_NAMES) + (
    "val_sip_deg", "val_ang_deg", "val_pos_cm")


@dataclass
class TrainConfig:
    epochs: int = 200
    batch: int = 256
    lr0: float = 1e-3
    lr_min: float = 0.0
    window: int = 300
    seed: int = 0
    clip_norm: float = 10.0
    teacher_forcing: bool = False
    val_every: int = 1
    deterministic: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        for name in ("epochs", "batch", "window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class LossResult:
    total: float
    terms: dict
    dvel: dict
    dpose: dict


def _norm_term(pred, target):
    """Mean over frames (and batch) of the per-frame L2 norm, with its gradient."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    r = pred - target
    n = np.sqrt(np.sum(r * r, axis=-1, keepdims=True))
    count = n.size
    safe = np.where(n > 0, n, 1.0)
    grad = np.where(n > 0, r / safe, 0.0) / count
    return float(np.sum(n) / count), grad


def compute_loss(vel, pose, batch):
    """Unweighted sum of per-region pose and velocity terms.

    ``vel``/``pose``: dicts of region predictions (..., T, width);
    ``batch``: dict with ``gt_vel`` (..., T, 18) and ``gt_pose`` (..., T, 66).
    """
    terms, dvel, dpose = {}, {}, {}
    for r in REGIONS:
        t, dpose[r.name] = _norm_term(pose[r.name], batch["gt_pose"][..., r.pose_idx()])
        terms[f"{r.name}.pose"] = t
        t, dvel[r.name] = _norm_term(vel[r.name], batch["gt_vel"][..., r.velocity_idx()])
        terms[f"{r.name}.vel"] = t
    total = 0.0
    for name in TERM_NAMES:
        total += terms[name]
    return LossResult(total, terms, dvel, dpose)


def loss_and_grads(params, cfg, batch, teacher_forcing=False):
    vel, pose, cache = train_forward(params, cfg, batch, teacher_forcing)
    res = compute_loss(vel, pose, batch)
    grads = train_backward(params, cfg, cache, res.dvel, res.dpose)
    return res, grads


def chunk_metrics(params, cfg, batch):
    """SIP/Ang/Pos on stacked chunks, run from each chunk's ground-truth initial state."""
    _, pose, _ = train_forward(params, cfg, batch)
    pred = assemble_from_features(concat_pose(pose), batch["inputs"], on_degenerate="identity")
    gt = batch["gt_rot"]
    if cfg.canonical_yaw:
        from .synth import features_to_orientations

        root_c = features_to_orientations(batch["inputs"])[..., 0, :, :]
        root = gt[..., 0, :, :]
        gt = (root_c @ np.swapaxes(root, -1, -2))[..., None, :, :] @ gt
    return (float(np.mean(per_frame_sip(pred, gt))), float(np.mean(per_frame_ang(pred, gt))),
            float(np.mean(per_frame_pos(pred, gt))))


@contextlib.contextmanager
def _single_thread(enabled):
    if not enabled:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=1):
        yield


@dataclass
class TrainResult:
    params: dict
    adam: nn.Adam
    log: list
    checkpoint: Path = None


def _meta(config, epoch, step, rng, rows):
    return {
        "model": config.model.to_dict(),
        "train": config.to_dict(),
        "epoch": epoch,
        "step": step,
        "rng": rng.bit_generator.state,
        "log": rows,
    }


def write_log_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in LOG_COLUMNS])


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def train(config, train_chunks, val_chunks=(), out_dir=None, resume_from=None, stop_after_epoch=None, progress=None):
    """Optimise a fresh (or resumed) model.

    Writes ``out_dir/checkpoint`` after every epoch and appends to
    ``out_dir/metrics.csv``. ``stop_after_epoch`` ends the run early (the
    checkpoint then resumes to the configured epoch count).
    """
    if not train_chunks:
        raise ValueError("need at least one training chunk")
    cfg = config.model
    n = len(train_chunks)
    per_epoch = math.ceil(n / config.batch)
    total_steps = config.epochs * per_epoch
    if resume_from is not None:
        params, adam, meta = nn.load_checkpoint(resume_from)
        if ModelConfig.from_dict(meta.get("model", {})) != cfg:
            raise ValidationError(f"{resume_from}: checkpoint model config differs from the requested one")
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
        start_epoch, step, rows = meta["epoch"], meta["step"], list(meta["log"])
    else:
        params = init_params(cfg, config.seed)
        adam = nn.Adam(params)
        rng = np.random.default_rng(config.seed + 1)
        start_epoch, step, rows = 0, 0, []
    stacked = [stack_chunks([c]) for c in train_chunks]
    val_batch = stack_chunks(list(val_chunks)) if val_chunks else None
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt = out_dir / "checkpoint" if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    last_epoch = config.epochs if stop_after_epoch is None else min(stop_after_epoch, config.epochs)
    with _single_thread(config.deterministic):
        for epoch in range(start_epoch, last_epoch):
            order = rng.permutation(n)
            sums = dict.fromkeys(TERM_NAMES, 0.0)
            total = 0.0
            lr = config.lr0
            for b in range(per_epoch):
                idx = order[b * config.batch:(b + 1) * config.batch]
                batch = {k: np.concatenate([stacked[i][k] for i in idx]) for k in stacked[0]}
                res, grads = loss_and_grads(params, cfg, batch, config.teacher_forcing)
                if not np.isfinite(res.total):
                    raise NonFiniteGradient(f"loss became {res.total} at step {step}; last good checkpoint: {ckpt}")
                try:
                    nn.clip_grad_norm(grads, config.clip_norm)
                    lr = nn.cosine_lr(step, total_steps, config.lr0, config.lr_min)
                    adam.step(params, grads, lr)
                except NonFiniteGradient as exc:
                    raise NonFiniteGradient(f"{exc} at step {step}; last good checkpoint: {ckpt}") from None
                step += 1
                w = len(idx) / n
                total += res.total * w
                for k in TERM_NAMES:
                    sums[k] += res.terms[k] * w
            row = {"epoch": epoch + 1, "step": step, "lr": float(lr), "loss": total}
            row.update({k.replace(".", "_"): v for k, v in sums.items()})
            if val_batch is not None and ((epoch + 1) % config.val_every == 0 or epoch + 1 == config.epochs):
                row["val_sip_deg"], row["val_ang_deg"], row["val_pos_cm"] = chunk_metrics(params, cfg, val_batch)
            rows.append(row)
            if progress is not None:
                progress(row)
            log.info("epoch %d loss %.6f lr %.3g", epoch + 1, total, lr)
            if ckpt is not None:
                nn.save_checkpoint(ckpt, params, adam, _meta(config, epoch + 1, step, rng, rows))
                write_log_csv(rows, out_dir / "metrics.csv")
    return TrainResult(params, adam, rows, ckpt)


def load_model(path):
    """Checkpoint directory -> (params, ModelConfig)."""
    params, _, meta = nn.load_checkpoint(path)
    return params, ModelConfig.from_dict(meta.get("model", {}))
