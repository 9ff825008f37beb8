import numpy as np
import pytest

from ghcbc.errors import StateError
from ghcbc.geometry import (EePose, GcProjector, JointPose, ReferenceTracker,
                            arm_feature, ee_delta, ee_feature, gc_features,
                            joint_delta, maybe_update_references)
from ghcbc.tensor import Tensor


def jp(angles, grip=0.0):
    return JointPose(np.array(angles, dtype=float), grip)


def ep(pos, quat=(0.0, 0.0, 0.0, 1.0), grip=0.0):
    return EePose(np.array(pos, dtype=float), np.array(quat, dtype=float), grip)


@pytest.fixture
def tracker():
    return ReferenceTracker.start(jp([0.2, 0.0, 0.0]), ep([0.0, 0.0, 0.0]))


class TestDeltas:
    def test_zero_at_reference(self, tracker):
        assert np.array_equal(joint_delta(jp([0.2, 0.0, 0.0]), tracker), np.zeros(3))
        assert np.array_equal(ee_delta(ep([0.0, 0.0, 0.0]), tracker), np.zeros(7))

    def test_hand_subtraction(self, tracker):
        assert np.allclose(joint_delta(jp([0.5, 0.0, 0.0]), tracker), [0.3, 0.0, 0.0])

    def test_isolated_translation(self, tracker):
        d = ee_delta(ep([1.0, 0.0, 0.0]), tracker)
        assert np.array_equal(d, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])

    def test_paper_profile_concat_lengths(self):
        t = ReferenceTracker.start(jp(np.zeros(7)), ep([0.0, 0.0, 0.0]))
        assert len(joint_delta(jp(np.zeros(7)), t)) == 7
        assert arm_feature(jp(np.zeros(7)), t).shape == (15,)
        assert ee_feature(ep([0.0, 0.0, 0.0]), t).shape == (15,)

    def test_gripper_excluded_from_delta(self, tracker):
        d = joint_delta(jp([0.2, 0.0, 0.0], grip=1.0), tracker)
        assert d.shape == (3,)
        assert np.array_equal(d, np.zeros(3))


class TestReferenceUpdates:
    def test_same_state_no_update(self, tracker):
        ref_before = tracker.ref_joint
        _, flag = maybe_update_references(tracker, jp([1.0, 1.0, 1.0]), ep([1, 1, 0]), 0)
        assert not flag and tracker.ref_joint is ref_before

    def test_transition_updates(self, tracker):
        a, p = jp([1.0, 1.0, 1.0], grip=1.0), ep([1.0, 1.0, 0.0], grip=1.0)
        _, flag = maybe_update_references(tracker, a, p, 1)
        assert flag
        assert tracker.ref_joint is a and tracker.ref_ee is p
        assert tracker.ref_gripper_state == 1
        assert np.array_equal(joint_delta(a, tracker), np.zeros(3))
        assert np.array_equal(ee_delta(p, tracker), np.zeros(7))

    def test_nonbinary_state_rejected(self, tracker):
        with pytest.raises(ValueError):
            maybe_update_references(tracker, jp([0, 0, 0]), ep([0, 0, 0]), 2)

    def test_replay_log_matches_bruteforce_scan(self, rng):
        # between transitions references stay constant: replaying a pose log
        # gives deltas equal to pose - (pose at last transition)
        n = 60
        angles = rng.normal(size=(n, 3))
        grips = (rng.random(n) > 0.6).astype(float)
        tracker = ReferenceTracker.start(jp(angles[0], grips[0]), ep([0, 0, 0]))
        state = 0
        deltas = []
        for t in range(n):
            deltas.append(joint_delta(jp(angles[t], grips[t]), tracker).copy())
            new_state = int(grips[t])
            maybe_update_references(tracker, jp(angles[t], grips[t]), ep([0, 0, 0]), new_state)
            state = new_state
        # oracle: brute-force scan for the last change before each step
        state = 0
        last_ref = 0
        for t in range(n):
            assert np.allclose(deltas[t], angles[t] - angles[last_ref])
            if int(grips[t]) != state:
                state = int(grips[t])
                last_ref = t


class TestGcFeatures:
    def test_output_shape_paper_width(self, rng):
        proj = GcProjector(n_joints=7, d_model=512, rng=rng)
        t = ReferenceTracker.start(jp(np.zeros(7)), ep([0, 0, 0]))
        out = gc_features(jp(np.ones(7)), ep([1, 2, 3]), t, proj)
        assert out.shape == (2, 512)

    def test_zero_weights_give_zero_tokens(self, rng):
        proj = GcProjector(n_joints=3, d_model=16, rng=rng)
        proj.arm.weight.data[:] = 0.0
        proj.ee.weight.data[:] = 0.0
        t = ReferenceTracker.start(jp([0.4, 0.1, -0.2]), ep([0, 0, 0]))
        out = gc_features(jp([1.0, 2.0, 3.0], grip=1.0), ep([5, 6, 7], grip=1.0), t, proj)
        assert np.array_equal(out.numpy(), np.zeros((2, 16)))

    def test_linear_map_zero_input_zero_output(self, rng):
        proj = GcProjector(n_joints=3, d_model=16, rng=rng)
        out = proj(Tensor(np.zeros((1, 7))), Tensor(np.zeros((1, 15))))
        assert np.array_equal(out.numpy(), np.zeros((1, 2, 16)))

    def test_reference_change_touches_only_arm_token(self, rng):
        proj = GcProjector(n_joints=3, d_model=16, rng=rng)
        a = jp([0.5, 0.2, -0.1])
        p = ep([0.1, 0.2, 0.0])
        t1 = ReferenceTracker.start(jp([0.4, 0.2, -0.1]), p)
        t2 = ReferenceTracker.start(jp([0.3, 0.2, -0.1]), p)  # doubles the joint delta
        out1 = gc_features(a, p, t1, proj).numpy()
        out2 = gc_features(a, p, t2, proj).numpy()
        assert not np.allclose(out1[0], out2[0])
        assert np.array_equal(out1[1], out2[1])

    def test_uninitialized_tracker_raises(self, rng):
        proj = GcProjector(n_joints=3, d_model=16, rng=rng)
        with pytest.raises(StateError):
            gc_features(jp([0, 0, 0]), ep([0, 0, 0]), ReferenceTracker(), proj)
