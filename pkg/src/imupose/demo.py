"""Procedural xsens23 motion for self-contained experiments.

Each sequence mixes walking-style limb swings, sit-stand transitions and
arm raises with randomized amplitudes, frequencies and phases. Motion fades
in from the rest pose over the first half second so frame 0 is exactly the
rest pose with zero velocity. Hands, feet and toes carry no local rotation.
"""
from pathlib import Path

import numpy as np

from .data import write_manifest, write_sequence_file
from .rotmath import rot_x, rot_y, rot_z
from .skeleton import PoseSequence, builtin_skeleton
from .synth import synthesize_imu


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _bump_train(t, rng, duration, period_range):
    """Sum of smooth 0->1->0 plateaus at random times."""
    out = np.zeros_like(t)
    start = rng.uniform(0.5, 2.0)
    while start < duration:
        rise = rng.uniform(0.6, 1.2)
        hold = rng.uniform(0.3, 1.5)
        out = np.maximum(out, _smoothstep((t - start) / rise) * (1.0 - _smoothstep((t - start - rise - hold) / rise)))
        start += 2 * rise + hold + rng.uniform(*period_range)
    return out


def generate_motion(n_frames, fps=60.0, rng=None):
    rng = np.random.default_rng(rng)
    spec = builtin_skeleton("xsens23")
    t = np.arange(n_frames) / fps
    env = _smoothstep(t / 0.5)
    duration = n_frames / fps

    def sine(amp, freq_range, phase=None):
        f = rng.uniform(*freq_range)
        ph = rng.uniform(0, 2 * np.pi) if phase is None else phase
        return amp * np.sin(2 * np.pi * f * t + ph)

    walk_f = rng.uniform(0.6, 1.1)
    walk_ph = rng.uniform(0, 2 * np.pi)
    walk_amp = rng.uniform(0.3, 1.0)
    gait = np.sin(2 * np.pi * walk_f * t + walk_ph) * walk_amp
    gait2 = np.maximum(np.sin(2 * np.pi * walk_f * t + walk_ph + 0.6), 0) * walk_amp
    gait2r = np.maximum(-np.sin(2 * np.pi * walk_f * t + walk_ph + 0.6), 0) * walk_amp
    sit = _bump_train(t, rng, duration, (1.0, 4.0)) * rng.uniform(0.5, 1.0)
    raise_l = _bump_train(t, rng, duration, (0.5, 3.0))
    raise_r = _bump_train(t, rng, duration, (0.5, 3.0))

    yaw = sine(rng.uniform(10, 40), (0.03, 0.12)) + rng.uniform(-180, 180)
    pelvis_pitch = 25.0 * sit + sine(3.0, (0.2, 0.5))
    spine_flex = 15.0 * sit + sine(rng.uniform(3, 10), (0.1, 0.4))
    spine_lat = sine(rng.uniform(2, 8), (0.1, 0.4))
    spine_twist = sine(rng.uniform(3, 12), (0.1, 0.4)) + 6.0 * gait
    neck = sine(rng.uniform(3, 10), (0.1, 0.5))

    base_abd = rng.uniform(65, 80)
    abd_l = base_abd - 80.0 * raise_l + sine(rng.uniform(3, 10), (0.1, 0.4))
    abd_r = base_abd - 80.0 * raise_r + sine(rng.uniform(3, 10), (0.1, 0.4))
    swing_l = -30.0 * gait + sine(rng.uniform(5, 20), (0.15, 0.5))
    swing_r = 30.0 * gait + sine(rng.uniform(5, 20), (0.15, 0.5))
    elbow_l = 25.0 + 20.0 * gait2r + 40.0 * raise_l + sine(10.0, (0.1, 0.3))
    elbow_r = 25.0 + 20.0 * gait2 + 40.0 * raise_r + sine(10.0, (0.1, 0.3))
    clav_l = 8.0 * raise_l + sine(3.0, (0.1, 0.3))
    clav_r = 8.0 * raise_r + sine(3.0, (0.1, 0.3))

    hip_l = 25.0 * gait * (1 - sit) + 80.0 * sit
    hip_r = -25.0 * gait * (1 - sit) + 80.0 * sit
    knee_l = 45.0 * gait2 * (1 - sit) + 90.0 * sit + 5.0
    knee_r = 45.0 * gait2r * (1 - sit) + 90.0 * sit + 5.0
    hip_abd_l = sine(rng.uniform(2, 6), (0.1, 0.4))
    hip_abd_r = sine(rng.uniform(2, 6), (0.1, 0.4))

    def e(a):
        return a * env

    local = np.broadcast_to(np.eye(3), (n_frames, spec.n_joints, 3, 3)).copy()

    def set_local(name, R):
        local[:, spec.index(name)] = R

    set_local("Pelvis", rot_y(yaw) @ rot_x(e(pelvis_pitch)))
    for j in ("L5", "L3", "T12", "T8"):
        set_local(j, rot_x(e(spine_flex / 4)) @ rot_z(e(spine_lat / 4)) @ rot_y(e(spine_twist / 4)))
    set_local("Neck", rot_x(e(neck / 2)))
    set_local("Head", rot_x(e(neck / 2)) @ rot_y(e(sine(8.0, (0.1, 0.4)))))
    set_local("LShoulder", rot_z(e(clav_l)))
    set_local("RShoulder", rot_z(e(-clav_r)))
    set_local("LUpperArm", rot_x(e(swing_l)) @ rot_z(e(-abd_l)))
    set_local("RUpperArm", rot_x(e(swing_r)) @ rot_z(e(abd_r)))
    set_local("LForeArm", rot_y(e(-elbow_l)))
    set_local("RForeArm", rot_y(e(elbow_r)))
    set_local("LUpperLeg", rot_x(e(-hip_l)) @ rot_z(e(hip_abd_l)))
    set_local("RUpperLeg", rot_x(e(-hip_r)) @ rot_z(e(-hip_abd_r)))
    set_local("LLowerLeg", rot_x(e(knee_l)))
    set_local("RLowerLeg", rot_x(e(knee_r)))

    glob = np.empty_like(local)
    for j in range(spec.n_joints):
        p = spec.parents[j]
        glob[:, j] = local[:, j] if p < 0 else glob[:, p] @ local[:, j]

    heading = np.radians(yaw)
    speed = 0.8 * walk_amp * (1 - sit)
    trans = np.zeros((n_frames, 3))
    trans[:, 0] = np.cumsum(speed * np.sin(heading)) / fps
    trans[:, 2] = np.cumsum(speed * np.cos(heading)) / fps
    trans[:, 1] = -0.4 * sit + 0.02 * np.abs(gait) * (1 - sit)
    trans *= env[:, None]
    return PoseSequence(spec, fps, glob, trans)


def gen_demo_corpus(out_dir, n_seqs=3, n_frames=900, n_test=0, seed=0, fps=60.0, binary=False):
    """Write ``n_seqs`` training and ``n_test`` held-out sequences plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".seqb" if binary else ".json"
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k in range(n_seqs + n_test):
        pose = generate_motion(n_frames, fps, rng)
        imu = synthesize_imu(pose)
        split, lst = ("train", train) if k < n_seqs else ("test", test)
        path = out / f"{split}_{len(lst):03d}{ext}"
        write_sequence_file(path, pose, imu)
        lst.append(path)
    manifest = out / "manifest.json"
    write_manifest(manifest, train, test)
    return manifest
