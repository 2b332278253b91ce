"""A small reverse-mode toolkit: dense layers, MLPs, stacked LSTMs, Adam.

Parameters live in a plain ``dict[str, ndarray]`` keyed by dotted names;
gradients use the same keys. Forward functions return a cache that the
matching backward function consumes; backward functions *accumulate*
into the ``grads`` dict. Sequences are time-major: ``(T, B, features)``.
"""
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import NonFiniteGradient, ParseError, ShapeMismatch


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 0.0
    return rng.uniform(-bound, bound, size=shape)


def zeros_like_params(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------- dense / MLP

def init_linear(params, prefix, n_in, n_out, rng):
    params[f"{prefix}.W"] = uniform_init(rng, (n_out, n_in), n_in)
    params[f"{prefix}.b"] = uniform_init(rng, (n_out,), n_in)


def linear_forward(params, prefix, x):
    W = params[f"{prefix}.W"]
    if x.shape[-1] != W.shape[1]:
        raise ShapeMismatch(f"{prefix}: input width {x.shape[-1]} != {W.shape[1]}")
    return x @ W.T + params[f"{prefix}.b"]


def linear_backward(params, prefix, x, dy, grads):
    W = params[f"{prefix}.W"]
    dy2 = dy.reshape(-1, W.shape[0])
    grads[f"{prefix}.W"] += dy2.T @ x.reshape(-1, W.shape[1])
    grads[f"{prefix}.b"] += dy2.sum(axis=0)
    return dy @ W


def init_mlp(params, prefix, n_in, n_hidden, n_out, rng):
    init_linear(params, f"{prefix}.fc0", n_in, n_hidden, rng)
    init_linear(params, f"{prefix}.fc1", n_hidden, n_out, rng)


def mlp_forward(params, prefix, x):
    """``fc1(relu(fc0(x)))`` -> (y, cache)."""
    pre = linear_forward(params, f"{prefix}.fc0", x)
    hid = np.maximum(pre, 0.0)
    return linear_forward(params, f"{prefix}.fc1", hid), (x, pre, hid)


def mlp_backward(params, prefix, cache, dy, grads):
    x, pre, hid = cache
    dhid = linear_backward(params, f"{prefix}.fc1", hid, dy, grads)
    dpre = dhid * (pre > 0)
    return linear_backward(params, f"{prefix}.fc0", x, dpre, grads)


# ---------------------------------------------------------------------- LSTM

@dataclass
class LstmState:
    h: list = field(default_factory=list)  # per layer (B, H)
    c: list = field(default_factory=list)

    @classmethod
    def zeros(cls, n_layers, batch, hidden):
        return cls([np.zeros((batch, hidden)) for _ in range(n_layers)],
                   [np.zeros((batch, hidden)) for _ in range(n_layers)])

    def copy(self):
        return LstmState([a.copy() for a in self.h], [a.copy() for a in self.c])


def init_lstm(params, prefix, n_in, hidden, n_layers, rng, forget_bias=1.0):
    for k in range(n_layers):
        d = n_in if k == 0 else hidden
        params[f"{prefix}.l{k}.W_ih"] = uniform_init(rng, (4 * hidden, d), d)
        params[f"{prefix}.l{k}.W_hh"] = uniform_init(rng, (4 * hidden, hidden), hidden)
        b = uniform_init(rng, (4 * hidden,), hidden)
        b[hidden:2 * hidden] += forget_bias
        params[f"{prefix}.l{k}.b"] = b


def lstm_layers(params, prefix):
    k = 0
    while f"{prefix}.l{k}.W_ih" in params:
        k += 1
    return k


def lstm_forward(params, prefix, x, state=None):
    """Stacked LSTM over ``x`` (T, B, d) -> (outputs (T, B, H), final LstmState, cache).

    Gate order is (input, forget, candidate, output).
    """
    n_layers = lstm_layers(params, prefix)
    T, B, d = x.shape
    hidden = params[f"{prefix}.l0.W_hh"].shape[1]
    if d != params[f"{prefix}.l0.W_ih"].shape[1]:
        raise ShapeMismatch(f"{prefix}: input width {d} != {params[f'{prefix}.l0.W_ih'].shape[1]}")
    if state is None:
        state = LstmState.zeros(n_layers, B, hidden)
    if len(state.h) != n_layers or any(h.shape != (B, hidden) for h in state.h + state.c):
        raise ShapeMismatch(f"{prefix}: initial state does not match {n_layers} layers x ({B}, {hidden})")
    caches = []
    final = LstmState()
    inp = x
    for k in range(n_layers):
        W_ih = params[f"{prefix}.l{k}.W_ih"]
        W_hh = params[f"{prefix}.l{k}.W_hh"]
        xproj = np.ascontiguousarray(inp @ W_ih.T + params[f"{prefix}.l{k}.b"])
        h0 = np.ascontiguousarray(state.h[k], dtype=np.float64)
        c0 = np.ascontiguousarray(state.c[k], dtype=np.float64)
        hs, cs, acts = _kernels.lstm_recurrence(xproj, W_hh, h0, c0)
        caches.append((inp, h0, c0, hs, cs, acts))
        final.h.append(hs[-1].copy())
        final.c.append(cs[-1].copy())
        inp = hs
    return inp, final, caches


def lstm_backward(params, prefix, caches, dout, grads, dfinal=None):
    """Backprop through time. Returns (dx, LstmState of initial-state gradients)."""
    dstate0 = LstmState([None] * len(caches), [None] * len(caches))
    dhs = dout
    for k in range(len(caches) - 1, -1, -1):
        inp, h0, c0, hs, cs, acts = caches[k]
        T, B, H = hs.shape
        W_ih = params[f"{prefix}.l{k}.W_ih"]
        W_hh = params[f"{prefix}.l{k}.W_hh"]
        dh_last = np.zeros((B, H)) if dfinal is None else np.ascontiguousarray(dfinal.h[k])
        dc_last = np.zeros((B, H)) if dfinal is None else np.ascontiguousarray(dfinal.c[k])
        dz, dh0, dc0 = _kernels.lstm_recurrence_backward(
            np.ascontiguousarray(dhs), acts, cs, c0, np.ascontiguousarray(W_hh), dh_last, dc_last)
        dz2 = dz.reshape(-1, 4 * H)
        hprev = np.concatenate([h0[None], hs[:-1]], axis=0).reshape(-1, H)
        grads[f"{prefix}.l{k}.W_ih"] += dz2.T @ inp.reshape(-1, inp.shape[-1])
        grads[f"{prefix}.l{k}.W_hh"] += dz2.T @ hprev
        grads[f"{prefix}.l{k}.b"] += dz2.sum(axis=0)
        dstate0.h[k] = dh0
        dstate0.c[k] = dc0
        dhs = dz @ W_ih
    return dhs, dstate0


# ----------------------------------------------------------------- optimizer

def cosine_lr(step, total_steps, lr0=1e-3, lr_min=0.0):
    if total_steps <= 0:
        return lr0
    frac = min(max(step / total_steps, 0.0), 1.0)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + np.cos(np.pi * frac))


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NonFiniteGradient(f"gradient norm is {norm}")
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)
        self.t = 0

    def step(self, params, grads, lr):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, adam, lr):
    adam.step(params, grads, lr)
    return params


# ------------------------------------------------------------ gradient check

@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    tol: float
    worst: tuple  # (param name, flat index, analytic, numeric)

    @property
    def passed(self):
        return self.max_rel_err <= self.tol


def grad_check(model_fn, params, inputs, tol=1e-6, n_coords=200, h=1e-5, seed=0, floor=1e-8, grads=None):
    """Compare analytic gradients against central differences.

    ``model_fn(params, inputs)`` returns ``(scalar_loss, grads_dict)``. At
    least ``n_coords`` coordinates are sampled uniformly over all
    parameters (every coordinate when there are fewer). Relative error per
    coordinate is ``|a - n| / max(|a|, |n|, floor)``. Pass ``grads`` to
    check a precomputed (possibly corrupted) gradient instead.
    """
    if grads is None:
        _, grads = model_fn(params, inputs)
    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat = np.arange(total) if total <= n_coords else np.sort(rng.choice(total, size=n_coords, replace=False))
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    worst = (None, -1, 0.0, 0.0)
    max_err = 0.0
    for f in flat:
        k = int(np.searchsorted(bounds, f, side="right") - 1)
        name, idx = names[k], int(f - bounds[k])
        p = params[name].reshape(-1)
        orig = p[idx]
        p[idx] = orig + h
        lp, _ = model_fn(params, inputs)
        p[idx] = orig - h
        lm, _ = model_fn(params, inputs)
        p[idx] = orig
        num = (lp - lm) / (2 * h)
        ana = float(grads[name].reshape(-1)[idx])
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        if err > max_err or worst[0] is None:
            max_err = max(max_err, err)
            worst = (name, idx, ana, num)
    return GradCheckReport(float(max_err), len(flat), tol, worst)


# --------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "imupose-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, adam=None, meta=None):
    """Write ``manifest.json`` + ``tensors.bin`` (little-endian float64) into directory ``path``.

    The manifest lists every tensor's name, shape and byte offset. Adam
    moments are stored as ``adam.m/<name>`` and ``adam.v/<name>``.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = [(f"param/{k}", v) for k, v in params.items()]
    if adam is not None:
        tensors += [(f"adam.m/{k}", adam.m[k]) for k in params]
        tensors += [(f"adam.v/{k}", adam.v[k]) for k in params]
    entries, offset = [], 0
    tmp_bin = path / "tensors.bin.tmp"
    with open(tmp_bin, "wb") as fh:
        for name, arr in tensors:
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            fh.write(data)
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += len(data)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "tensors": entries,
        "adam": None if adam is None else {
            "t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "meta": meta or {},
    }
    tmp_man = path / "manifest.json.tmp"
    with open(tmp_man, "w") as fh:
        json.dump(manifest, fh, indent=1)
    os.replace(tmp_bin, path / "tensors.bin")
    os.replace(tmp_man, path / "manifest.json")


def load_checkpoint(path):
    """-> (params, Adam | None, meta)."""
    path = Path(path)
    try:
        with open(path / "manifest.json") as fh:
            manifest = json.load(fh)
        raw = (path / "tensors.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: cannot read checkpoint ({exc})") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path}: not a checkpoint")
    params, m, v = {}, {}, {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"]))
        if e["offset"] + 8 * n > len(raw):
            raise ParseError(f"{path}: tensor {e['name']!r} out of bounds")
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=e["offset"]).reshape(e["shape"]).astype(np.float64)
        kind, name = e["name"].split("/", 1)
        {"param": params, "adam.m": m, "adam.v": v}[kind][name] = arr
    adam = None
    if manifest.get("adam"):
        a = manifest["adam"]
        adam = Adam(params, a["beta1"], a["beta2"], a["eps"])
        adam.m.update(m)
        adam.v.update(v)
        adam.t = a["t"]
    return params, adam, manifest.get("meta", {})
