import json

import numpy as np
import pytest

from conftest import haar_rotations
from imupose.data import (gt_velocity, load_chunks, make_training_chunks, pose_targets, read_manifest,
                          read_sequence_file, stack_chunks, to_xsens, write_manifest, write_sequence_file)
from imupose.demo import gen_demo_corpus, generate_motion
from imupose.errors import ParseError, TooShort, UnknownSkeleton, ValidationError
from imupose.regions import PREDICTED_JOINTS
from imupose.rotmath import r6_to_mat
from imupose.skeleton import PoseSequence, builtin_mapping, builtin_skeleton, forward_kinematics, map_pose
from imupose.synth import SENSOR_JOINTS, normalize_imu, synthesize_imu

XSENS = builtin_skeleton("xsens23")


def identity_doc(frames=1):
    return {
        "format_version": 1, "skeleton": "xsens23", "fps": 60, "joint_order": list(XSENS.joints),
        "rotations": [[[1, 0, 0, 0, 1, 0, 0, 0, 1]] * 23] * frames,
    }


def test_minimal_identity_file(tmp_path):
    p = tmp_path / "one.json"
    p.write_text(json.dumps(identity_doc()))
    pose, imu = read_sequence_file(p)
    assert imu is None and pose.n_frames == 1 and pose.fps == 60.0
    assert np.array_equal(pose.rotations, np.broadcast_to(np.eye(3), (1, 23, 3, 3)))


def test_non_orthonormal_block_rejected(tmp_path):
    doc = identity_doc()
    doc["rotations"][0] = [[1, 0, 0, 0, 1, 0, 0, 0, 1]] * 23
    doc["rotations"][0][5] = [2, 0, 0, 0, 1, 0, 0, 0, 1]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ValidationError):
        read_sequence_file(p)


@pytest.mark.parametrize("mutate, error", [
    (lambda d: d.update(skeleton="foo"), UnknownSkeleton),
    (lambda d: d.pop("fps"), ParseError),
    (lambda d: d.update(format_version=9), ParseError),
    (lambda d: d.update(joint_order=d["joint_order"][::-1]), ValidationError),
    (lambda d: d.update(rotations=[[[1, 0, 0]] * 23]), ValidationError),
    (lambda d: d.update(fps=-1), ValidationError),
    (lambda d: d.update(imu={"sensor_order": ["Root"], "orientations": [], "accelerations": []}), ValidationError),
])
def test_invalid_documents(tmp_path, mutate, error):
    doc = identity_doc()
    mutate(doc)
    p = tmp_path / "x.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(error):
        read_sequence_file(p)


def test_malformed_text(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        read_sequence_file(p)
    with pytest.raises(ParseError):
        read_sequence_file(tmp_path / "missing.json")
    p.write_bytes(b"IMUSEQB1\x05")
    with pytest.raises(ParseError):
        read_sequence_file(p)


@pytest.mark.parametrize("suffix", [".json", ".seqb"])
def test_round_trip_bitwise(tmp_path, suffix):
    pose = generate_motion(40, rng=7)
    imu = synthesize_imu(pose)
    path = tmp_path / f"s{suffix}"
    write_sequence_file(path, pose, imu)
    p2, i2 = read_sequence_file(path)
    assert p2.skeleton.name == "xsens23" and p2.fps == pose.fps
    assert np.array_equal(p2.rotations, pose.rotations)
    assert np.array_equal(p2.root_translation, pose.root_translation)
    assert np.array_equal(i2.orientations, imu.orientations)
    assert np.array_equal(i2.accelerations, imu.accelerations)


def test_round_trip_smpl_random(tmp_path, rng):
    spec = builtin_skeleton("smpl24")
    pose = PoseSequence(spec, 30.0, haar_rotations(5 * 24, rng).reshape(5, 24, 3, 3))
    write_sequence_file(tmp_path / "s.json", pose)
    back, imu = read_sequence_file(tmp_path / "s.json")
    assert imu is None and back.root_translation is None
    assert np.array_equal(back.rotations, pose.rotations)


def test_manifest_relative_paths(tmp_path):
    (tmp_path / "d").mkdir()
    write_manifest(tmp_path / "d" / "m.json", [tmp_path / "d" / "a.json"], [tmp_path / "b.json"])
    doc = json.loads((tmp_path / "d" / "m.json").read_text())
    assert doc["train"] == ["a.json"]
    m = read_manifest(tmp_path / "d" / "m.json")
    assert m["train"] == [str(tmp_path / "d" / "a.json")]
    assert m["test"] == [str(tmp_path / "b.json")]


def test_gt_velocity_static_and_translation():
    R = np.broadcast_to(np.eye(3), (10, 23, 3, 3)).copy()
    assert np.all(gt_velocity(PoseSequence(XSENS, 60.0, R)) == 0)
    trans = np.outer(np.arange(10) / 60.0, [1.0, 0.0, 0.0])
    v = gt_velocity(PoseSequence(XSENS, 60.0, R, trans))
    assert np.all(v == 0)
    trans[:, 1] = np.arange(10) / 60.0 * 0.5
    v = gt_velocity(PoseSequence(XSENS, 60.0, R, trans))
    np.testing.assert_allclose(v[1:, 0], np.broadcast_to([0, 0.5, 0], (9, 3)), atol=1e-12)
    assert np.all(v[0] == 0)


def test_gt_velocity_integrates_to_fk_displacement():
    pose = generate_motion(300, rng=11)
    v = gt_velocity(pose)
    idx = XSENS.indices(SENSOR_JOINTS["xsens23"])
    pos = forward_kinematics(XSENS, pose.rotations)[:, idx]
    world = np.einsum("fab,fsb->fsa", pose.rotations[:, 0], v)
    disp = np.cumsum(world, axis=0) / pose.fps
    np.testing.assert_allclose(disp[:, 1:], pos[:, 1:] - pos[:1, 1:], atol=1e-6)
    assert np.all(v[:, 0, [0, 2]] == 0)


def test_gt_velocity_too_short():
    with pytest.raises(TooShort):
        gt_velocity(PoseSequence(XSENS, 60.0, np.eye(3)[None, None].repeat(23, 1)))


def test_chunk_counts():
    assert len(make_training_chunks(generate_motion(600, rng=1))) == 2
    assert len(make_training_chunks(generate_motion(899, rng=1))) == 2
    with pytest.raises(TooShort):
        make_training_chunks(generate_motion(299, rng=1))


def test_chunk_bookkeeping():
    pose = generate_motion(650, rng=4)
    imu = synthesize_imu(pose)
    chunks = make_training_chunks(pose, imu)
    feats = normalize_imu(imu)
    assert np.array_equal(chunks[1].inputs[0], feats[300])
    assert np.array_equal(np.concatenate([c.inputs for c in chunks]), feats[:600])
    c = chunks[1]
    assert c.inputs.shape == (300, 72) and c.gt_pose.shape == (300, 66) and c.gt_vel.shape == (300, 18)
    assert np.array_equal(c.init_vel, c.gt_vel[0]) and np.array_equal(c.init_pose, c.gt_pose[0])
    assert np.all(c.gt_vel[:, [0, 2]] == 0)


def test_targets_decode_to_source_rotations():
    pose = generate_motion(300, rng=8)
    c = make_training_chunks(pose)[0]
    idx = XSENS.indices(PREDICTED_JOINTS)
    rel = r6_to_mat(c.gt_pose.reshape(300, 11, 6))
    np.testing.assert_allclose(pose.rotations[:, :1] @ rel, pose.rotations[:, idx], atol=1e-9)
    assert np.array_equal(pose_targets(pose), c.gt_pose)


def test_smpl_sequences_are_mapped(rng):
    pose = generate_motion(300, rng=9)
    smpl = map_pose(pose, builtin_mapping("xsens23", "smpl24"), "smpl24")
    back = to_xsens(smpl)
    assert back.skeleton.name == "xsens23"
    a = make_training_chunks(pose)[0]
    b = make_training_chunks(smpl)[0]
    # L3 is rebuilt from Spine1, so only the targets of other joints agree
    keep = [k for k, j in enumerate(PREDICTED_JOINTS) if j != "L3"]
    ga, gb = a.gt_pose.reshape(300, 11, 6), b.gt_pose.reshape(300, 11, 6)
    assert np.array_equal(ga[:, keep], gb[:, keep])


def test_load_and_stack(tmp_path):
    manifest = gen_demo_corpus(tmp_path, n_seqs=2, n_frames=320, n_test=1, seed=3, binary=True)
    m = read_manifest(manifest)
    assert len(m["train"]) == 2 and len(m["test"]) == 1 and m["train"][0].endswith(".seqb")
    chunks = load_chunks(m["train"], window=100)
    assert len(chunks) == 6
    b = stack_chunks(chunks)
    assert b["inputs"].shape == (6, 100, 72) and b["gt_rot"].shape == (6, 100, 23, 3, 3)
