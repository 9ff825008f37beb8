"""Geometric pose constraints: reference poses captured at gripper
transitions, pose deltas against them, and the two pose tokens fed to the
policy encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import StateError
from .nn import Linear, Module
from .tensor import Tensor


@dataclass
class JointPose:
    """Joint angles in radians plus the gripper scalar in [0, 1]."""

    angles: np.ndarray
    gripper: float

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)

    def vector(self) -> np.ndarray:
        return np.append(self.angles, self.gripper)

    @property
    def n_joints(self) -> int:
        return len(self.angles)


@dataclass
class EePose:
    """End-effector position, unit quaternion (x, y, z, w), gripper scalar."""

    position: np.ndarray
    quaternion: np.ndarray
    gripper: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.quaternion = np.asarray(self.quaternion, dtype=np.float64)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.quaternion, [self.gripper]])


class ReferenceTracker:
    """Reference joint/ee poses plus the binary gripper state they were
    captured at; refreshed on every gripper transition."""

    def __init__(self):
        self.ref_joint: JointPose | None = None
        self.ref_ee: EePose | None = None
        self.ref_gripper_state: int = 0

    @classmethod
    def start(cls, first_joint: JointPose, first_ee: EePose) -> "ReferenceTracker":
        tracker = cls()
        tracker.ref_joint = first_joint
        tracker.ref_ee = first_ee
        tracker.ref_gripper_state = 0
        return tracker

    @property
    def initialized(self) -> bool:
        return self.ref_joint is not None


def joint_delta(a_t: JointPose, tracker: ReferenceTracker) -> np.ndarray:
    """Current minus reference joint angles; the gripper scalar is excluded."""
    _require(tracker)
    return a_t.angles - tracker.ref_joint.angles


def ee_delta(p_t: EePose, tracker: ReferenceTracker) -> np.ndarray:
    """Componentwise position and quaternion displacement (length 7)."""
    _require(tracker)
    return np.concatenate([
        p_t.position - tracker.ref_ee.position,
        p_t.quaternion - tracker.ref_ee.quaternion,
    ])


def maybe_update_references(tracker: ReferenceTracker, a_t: JointPose, p_t: EePose,
                            new_gripper_state: int) -> tuple[ReferenceTracker, bool]:
    """Refresh references when the binary gripper state flips."""
    _require(tracker)
    if new_gripper_state not in (0, 1):
        raise ValueError(f"gripper state must be binary, got {new_gripper_state}")
    if new_gripper_state != tracker.ref_gripper_state:
        tracker.ref_joint = a_t
        tracker.ref_ee = p_t
        tracker.ref_gripper_state = new_gripper_state
        return tracker, True
    return tracker, False


def arm_feature(a_t: JointPose, tracker: ReferenceTracker) -> np.ndarray:
    """Concat(delta angles, full joint pose): length 2*n_joints + 1."""
    return np.concatenate([joint_delta(a_t, tracker), a_t.vector()])


def ee_feature(p_t: EePose, tracker: ReferenceTracker) -> np.ndarray:
    """Concat(delta pose, full ee pose): length 15."""
    return np.concatenate([ee_delta(p_t, tracker), p_t.vector()])


class GcProjector(Module):
    """Maps the two concatenated pose features to d_model-wide tokens.

    Bias-free so the map stays linear: zero features give zero tokens.
    The arm and ee features get separate weights.
    """

    def __init__(self, n_joints: int, d_model: int, rng: np.random.Generator):
        self.n_joints = n_joints
        self.arm = Linear(2 * n_joints + 1, d_model, rng, bias=False)
        self.ee = Linear(15, d_model, rng, bias=False)

    def __call__(self, arm_feat: Tensor, ee_feat: Tensor) -> Tensor:
        """(..., arm_in) and (..., 15) -> (..., 2, d_model)."""
        a = self.arm(arm_feat)
        e = self.ee(ee_feat)
        lead = a.shape[:-1]
        d = a.shape[-1]
        return T.concat([a.reshape(*lead, 1, d), e.reshape(*lead, 1, d)], axis=-2)


def gc_features(a_t: JointPose, p_t: EePose, tracker: ReferenceTracker,
                projector: GcProjector) -> Tensor:
    """The two geometric-constraint tokens for one observation: (2, d_model)."""
    _require(tracker)
    arm = Tensor(arm_feature(a_t, tracker).reshape(1, -1))
    ee = Tensor(ee_feature(p_t, tracker).reshape(1, -1))
    return projector(arm, ee).reshape(2, -1)


def _require(tracker: ReferenceTracker):
    if tracker is None or not tracker.initialized:
        raise StateError("reference tracker not initialized; call ReferenceTracker.start first")
