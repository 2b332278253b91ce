"""Compare the numba kernels against the pure-numpy fallback.

Each backend runs in its own subprocess because the choice is made at import
time from ``IMUPOSE_DISABLE_NUMBA``. Numba timings exclude compilation (one
warm-up call per case).

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()  # warm-up / jit compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times) * 1e3


def run_cases(repeat):
    from imupose import _kernels
    from imupose.model import ModelConfig, init_params, init_states, step_realtime
    from imupose.rotmath import random_rotations
    from imupose.skeleton import builtin_skeleton

    rng = np.random.default_rng(0)
    out = {"backend": _kernels.backend()}

    for T, B, H in ((300, 9, 64), (300, 1, 256), (1, 1, 256)):
        xproj = rng.standard_normal((T, B, 4 * H)) * 0.5
        w_hh = rng.standard_normal((4 * H, H)) / np.sqrt(H)
        h0, c0 = np.zeros((B, H)), np.zeros((B, H))
        hs, cs, acts = _kernels.lstm_recurrence(xproj, w_hh, h0, c0)
        dhs = rng.standard_normal(hs.shape)
        out[f"lstm_fwd T={T} B={B} H={H}"] = _best(lambda: _kernels.lstm_recurrence(xproj, w_hh, h0, c0), repeat)
        out[f"lstm_bwd T={T} B={B} H={H}"] = _best(
            lambda: _kernels.lstm_recurrence_backward(dhs, acts, cs, c0, w_hh, h0, c0), repeat)

    spec = builtin_skeleton("xsens23")
    for F in (1, 900):
        rots = random_rotations(F * spec.n_joints, rng).reshape(F, spec.n_joints, 3, 3)
        out[f"fk frames={F}"] = _best(lambda: _kernels.fk_positions(rots, spec.parents, spec.offsets), repeat)

    for hidden in (64, 256):
        cfg = ModelConfig(hidden=hidden, glb_hidden=16 if hidden == 64 else 64, init_hidden=hidden)
        params = init_params(cfg, 0)
        frames = rng.standard_normal((50, 72)) * 0.1

        def roll():
            s = init_states(params, cfg)
            for f in frames:
                _, _, s = step_realtime(params, cfg, s, f)

        out[f"step_realtime H={hidden} (per frame)"] = _best(roll, repeat) / len(frames)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write raw timings here")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(run_cases(args.repeat)))
        return

    results = {}
    for name, disable in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, IMUPOSE_DISABLE_NUMBA=disable)
        proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        if res.pop("backend") != name:
            print(f"note: numba unavailable, '{name}' column ran the numpy path", file=sys.stderr)
        results[name] = res

    print(f"{'case':42s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for case in results["numpy"]:
        a, b = results["numba"][case], results["numpy"][case]
        print(f"{case:42s} {a:10.3f} {b:10.3f} {b / a:8.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
