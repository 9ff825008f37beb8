"""Desk-scale sorting world: a 3-link planar arm with a snap gripper over a
tabletop of colored blocks and target boxes, a tiny orthographic wrist-camera
renderer, a scripted waypoint expert, and rollout evaluation.

Physics is kinematic and collisionless: joints move toward commanded angles
under a per-step rate limit, closing the gripper within grasp radius attaches
the nearest free block, opening releases it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import WorldConfig
from .errors import InfeasibleSpecError
from .geometry import EePose, JointPose

_MAX_PLACEMENT_TRIES = 10_000
_APPROACH_DIST = 0.05
_WRIST_MARGIN = 0.01


# -- kinematics --------------------------------------------------------------


class PlanarArm:
    """Forward and analytic inverse kinematics for a 3-link planar chain."""

    def __init__(self, link_lengths):
        self.links = tuple(float(l) for l in link_lengths)
        if len(self.links) != 3:
            raise InfeasibleSpecError("planar arm expects exactly 3 links")

    def joint_positions(self, angles) -> np.ndarray:
        """Positions of every joint plus the end effector: (4, 2)."""
        pts = np.zeros((4, 2))
        theta = 0.0
        for i, l in enumerate(self.links):
            theta += angles[i]
            pts[i + 1] = pts[i] + l * np.array([math.cos(theta), math.sin(theta)])
        return pts

    def fk(self, angles) -> tuple[float, float, float]:
        """End-effector (x, y, heading)."""
        pts = self.joint_positions(angles)
        phi = wrap_angle(float(np.sum(angles)))
        return float(pts[3, 0]), float(pts[3, 1]), phi

    def ik(self, x: float, y: float, phi: float):
        """Elbow-up solution reaching (x, y) with heading phi, or None."""
        l1, l2, l3 = self.links
        wx = x - l3 * math.cos(phi)
        wy = y - l3 * math.sin(phi)
        r2 = wx * wx + wy * wy
        c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
        if not -1.0 <= c2 <= 1.0:
            return None
        t2 = math.acos(c2)
        t1 = math.atan2(wy, wx) - math.atan2(l2 * math.sin(t2), l1 + l2 * math.cos(t2))
        t3 = phi - t1 - t2
        return np.array([wrap_angle(t1), wrap_angle(t2), wrap_angle(t3)])

    def wrist_radius_bounds(self) -> tuple[float, float]:
        l1, l2, _ = self.links
        return abs(l1 - l2) + _WRIST_MARGIN, l1 + l2 - _WRIST_MARGIN

    def clamp_target(self, x: float, y: float, phi: float) -> tuple[float, float, float]:
        """Pull an unreachable target radially into the wrist annulus."""
        l3 = self.links[2]
        lo, hi = self.wrist_radius_bounds()
        wx = x - l3 * math.cos(phi)
        wy = y - l3 * math.sin(phi)
        r = math.hypot(wx, wy)
        if lo <= r <= hi:
            return x, y, phi
        if r < 1e-12:
            wx, wy, r = lo, 0.0, lo
        scale = min(max(r, lo), hi) / r
        wx, wy = wx * scale, wy * scale
        return wx + l3 * math.cos(phi), wy + l3 * math.sin(phi), phi


def wrap_angle(a: float) -> float:
    return float(math.atan2(math.sin(a), math.cos(a)))


def planar_quaternion(phi: float) -> np.ndarray:
    """Rotation about z embedded as a unit quaternion (x, y, z, w), w >= 0."""
    half = wrap_angle(phi) / 2.0
    q = np.array([0.0, 0.0, math.sin(half), math.cos(half)])
    if q[3] < 0.0:
        q = -q
    return q


# -- world state ---------------------------------------------------------------


@dataclass
class TaskSpec:
    target_block_color: int
    target_box_color: int
    block_region_center: tuple
    block_region_extent: tuple
    box_region_center: tuple
    box_region_extent: tuple
    min_separation: float

    @classmethod
    def from_world(cls, cfg: WorldConfig) -> "TaskSpec":
        if cfg.min_separation <= 0:
            raise InfeasibleSpecError("min_separation must be positive")
        return cls(
            target_block_color=cfg.target_block_color,
            target_box_color=cfg.target_box_color,
            block_region_center=cfg.block_region_center,
            block_region_extent=cfg.block_region_extent,
            box_region_center=cfg.box_region_center,
            box_region_extent=cfg.box_region_extent,
            min_separation=cfg.min_separation,
        )


@dataclass
class Block:
    position: np.ndarray
    color_id: int
    held: bool = False


@dataclass
class Box:
    position: np.ndarray
    extent: tuple
    color_id: int


@dataclass
class WorldState:
    angles: np.ndarray
    gripper_value: float
    grip_closed: int
    held_idx: int | None
    blocks: list[Block]
    boxes: list[Box]
    t: int
    rng_seed: int
    target_block: int = 0
    target_box: int = 0


@dataclass
class Observation:
    image: np.ndarray
    joint: JointPose
    ee: EePose


def observe(state: WorldState, cfg: WorldConfig, arm: PlanarArm) -> Observation:
    x, y, phi = arm.fk(state.angles)
    return Observation(
        image=render_wrist(state, cfg, arm),
        joint=JointPose(state.angles.copy(), state.gripper_value),
        ee=EePose(np.array([x, y, 0.0]), planar_quaternion(phi), state.gripper_value),
    )


def _sample_region(rng, center, extent) -> np.ndarray:
    cx, cy = center
    ex, ey = extent
    return np.array([cx + (rng.random() - 0.5) * ex, cy + (rng.random() - 0.5) * ey])


def reset(cfg: WorldConfig, spec: TaskSpec, seed: int) -> WorldState:
    """Place blocks and boxes by rejection sampling; the arm starts at the
    canonical pose. Placements must satisfy the separation minimum and keep
    the expert's grasp/place waypoints inside the arm's reach."""
    rng = np.random.default_rng(seed)
    arm = PlanarArm(cfg.link_lengths)
    box_gap = max(spec.min_separation, max(cfg.box_extent) + 0.02)
    for _ in range(_MAX_PLACEMENT_TRIES):
        blocks = [_sample_region(rng, spec.block_region_center, spec.block_region_extent)
                  for _ in range(cfg.n_blocks)]
        boxes = [_sample_region(rng, spec.box_region_center, spec.box_region_extent)
                 for _ in range(cfg.n_boxes)]
        ok = all(np.linalg.norm(a - b) >= spec.min_separation
                 for i, a in enumerate(blocks) for b in blocks[i + 1:])
        ok = ok and all(np.linalg.norm(a - b) >= box_gap
                        for i, a in enumerate(boxes) for b in boxes[i + 1:])
        ok = ok and all(np.linalg.norm(bl - bx) >= box_gap
                        for bl in blocks for bx in boxes)
        if not ok:
            continue
        distractor_colors = [c for c in range(cfg.n_colors) if c != spec.target_block_color]
        block_colors = [spec.target_block_color] + list(
            rng.choice(distractor_colors, size=cfg.n_blocks - 1, replace=False))
        box_colors = [spec.target_box_color] + list(
            rng.choice([c for c in range(cfg.n_colors) if c != spec.target_box_color],
                       size=cfg.n_boxes - 1, replace=False))
        state = WorldState(
            angles=np.array(cfg.initial_pose, dtype=np.float64),
            gripper_value=0.0,
            grip_closed=0,
            held_idx=None,
            blocks=[Block(p, int(c)) for p, c in zip(blocks, block_colors)],
            boxes=[Box(p, cfg.box_extent, int(c)) for p, c in zip(boxes, box_colors)],
            t=0,
            rng_seed=seed,
        )
        try:
            expert_waypoints(state, arm)
        except InfeasibleSpecError:
            continue
        return state
    raise InfeasibleSpecError(
        f"no valid placement within {_MAX_PLACEMENT_TRIES} tries for seed {seed}"
    )


# -- dynamics ------------------------------------------------------------------


def gripper_binary(raw: float, prev: int, close_at: float, open_at: float) -> int:
    if raw >= close_at:
        return 1
    if raw <= open_at:
        return 0
    return prev


def step_world(state: WorldState, action, cfg: WorldConfig, arm: PlanarArm,
               action_mode: str = "joint") -> WorldState:
    """Advance one timestep. Actions are absolute targets: joint mode is
    (angles..., gripper); ee mode is (x, y, heading, gripper), solved by IK
    after clamping into reach. Actions are clipped, never rejected."""
    action = np.asarray(action, dtype=np.float64)
    if not np.all(np.isfinite(action)):
        action = np.nan_to_num(action, nan=0.0, posinf=0.0, neginf=0.0)
    if action_mode == "ee":
        x, y, phi = arm.clamp_target(float(action[0]), float(action[1]), float(action[2]))
        targets = arm.ik(x, y, phi)
        if targets is None:
            targets = state.angles.copy()
    else:
        targets = action[:len(state.angles)]
    delta = np.clip(targets - state.angles, -cfg.rate_limit, cfg.rate_limit)
    state.angles = state.angles + delta
    state.gripper_value = float(np.clip(action[-1], 0.0, 1.0))
    new_closed = gripper_binary(state.gripper_value, state.grip_closed,
                                cfg.gripper_close, cfg.gripper_open)
    ee = np.array(arm.fk(state.angles)[:2])
    if new_closed and not state.grip_closed and state.held_idx is None:
        free = [(i, np.linalg.norm(b.position - ee)) for i, b in enumerate(state.blocks)
                if not b.held]
        free = [(i, d) for i, d in free if d <= cfg.grasp_radius]
        if free:
            idx = min(free, key=lambda t: t[1])[0]
            state.held_idx = idx
            state.blocks[idx].held = True
    if not new_closed and state.grip_closed and state.held_idx is not None:
        state.blocks[state.held_idx].held = False
        state.held_idx = None
    state.grip_closed = new_closed
    if state.held_idx is not None:
        state.blocks[state.held_idx].position = ee.copy()
    state.t += 1
    return state


def is_success(state: WorldState, spec: TaskSpec) -> bool:
    """Target-colored block sits inside the target-colored box, not held."""
    boxes = [b for b in state.boxes if b.color_id == spec.target_box_color]
    blocks = [b for b in state.blocks if b.color_id == spec.target_block_color]
    for block in blocks:
        if block.held:
            continue
        for box in boxes:
            half = np.array(box.extent) / 2.0
            if np.all(np.abs(block.position - box.position) <= half):
                return True
    return False


# -- rendering -------------------------------------------------------------------

# color ids render as two-tone sprites: a body intensity plus a color-coded
# core. The last palette entry is solid and maximally bright, so it stays
# separable both by overall brightness and by the solid-versus-cored pattern.
_BLOCK_BODIES = (0.55, 0.55, 0.55, 0.60, 0.60, 0.60, 1.00)
_BLOCK_CORES = (0.05, 0.20, 0.35, 0.05, 0.20, 0.35, 1.00)
_BOX_BODIES = (0.28, 0.28, 0.28, 0.32, 0.32, 0.32, 0.45)
_BOX_CORES = (0.04, 0.10, 0.16, 0.04, 0.10, 0.16, 0.45)


def block_gray(color_id: int) -> tuple[float, float]:
    """(body, core) intensities of a block sprite."""
    return _BLOCK_BODIES[color_id], _BLOCK_CORES[color_id]


def box_gray(color_id: int) -> tuple[float, float]:
    """(body, core) intensities of a box sprite."""
    return _BOX_BODIES[color_id], _BOX_CORES[color_id]


def _draw_rect(img, wx, wy, center, half_x, half_y, value):
    mask = (np.abs(wx - center[0]) <= half_x) & (np.abs(wy - center[1]) <= half_y)
    img[mask] = value


def render_wrist(state: WorldState, cfg: WorldConfig, arm: PlanarArm) -> np.ndarray:
    """Orthographic grayscale sprite view from a camera fixed to the
    end-effector: (1, H, W) floats in [0, 1], deterministic."""
    h, w = cfg.camera_h, cfg.camera_w
    x, y, phi = arm.fk(state.angles)
    # world coordinates of every pixel center
    us = (np.arange(w) + 0.5) / w * cfg.camera_view_w - cfg.camera_view_w / 2.0
    vs = cfg.camera_view_h / 2.0 - (np.arange(h) + 0.5) / h * cfg.camera_view_h
    cam_x, cam_y = np.meshgrid(us, vs)
    c, s = math.cos(phi), math.sin(phi)
    wx = x + c * cam_x - s * cam_y
    wy = y + s * cam_x + c * cam_y
    img = np.zeros((h, w))
    for box in state.boxes:
        body, core = box_gray(box.color_id)
        half = np.array(box.extent) / 2.0
        _draw_rect(img, wx, wy, box.position, half[0], half[1], body)
        _draw_rect(img, wx, wy, box.position, half[0] / 2.0, half[1] / 2.0, core)
    half = cfg.block_size / 2.0
    for block in state.blocks:
        body, core = block_gray(block.color_id)
        _draw_rect(img, wx, wy, block.position, half, half, body)
        _draw_rect(img, wx, wy, block.position, half / 2.0, half / 2.0, core)
    return img[None, :, :]


# -- scripted expert ---------------------------------------------------------------


@dataclass
class Waypoint:
    point: np.ndarray
    heading: float
    gripper: float
    dwell: int = 0


def expert_waypoints(state: WorldState, arm: PlanarArm) -> list[Waypoint]:
    """Grasp-and-place plan: approach the target block radially, close, lift
    back, carry to the target box, open, retreat. Raises when any waypoint
    falls outside the arm's reach."""
    block = state.blocks[state.target_block].position
    box = state.boxes[state.target_box].position

    def radial(p):
        r = np.linalg.norm(p)
        if r < 1e-9:
            raise InfeasibleSpecError("object at arm base")
        return p / r, math.atan2(p[1], p[0])

    db, phib = radial(block)
    dx, phix = radial(box)
    pre_block = block - _APPROACH_DIST * db
    pre_box = box - _APPROACH_DIST * dx
    plan = [
        Waypoint(pre_block, phib, 0.0),
        Waypoint(block, phib, 0.0),
        Waypoint(block, phib, 1.0, dwell=2),
        Waypoint(pre_block, phib, 1.0),
        Waypoint(pre_box, phix, 1.0),
        Waypoint(box, phix, 1.0),
        Waypoint(box, phix, 0.0, dwell=2),
        Waypoint(pre_box, phix, 0.0),
    ]
    for wp in plan:
        if arm.ik(wp.point[0], wp.point[1], wp.heading) is None:
            raise InfeasibleSpecError(
                f"waypoint {wp.point} heading {wp.heading:.2f} out of reach"
            )
    return plan


class ScriptedExpert:
    """Emits one joint-space action per call, walking the waypoint plan with
    rate-limited absolute commands. The arrival tolerance scales with the
    demo-collection noise so perturbed rollouts still advance."""

    def __init__(self, state: WorldState, cfg: WorldConfig):
        self.arm = PlanarArm(cfg.link_lengths)
        self.cfg = cfg
        self.plan = expert_waypoints(state, self.arm)
        self.targets = [self.arm.ik(wp.point[0], wp.point[1], wp.heading)
                        for wp in self.plan]
        self.index = 0
        self.dwelled = 0
        self.arrive_tol = max(1e-9, 2.0 * cfg.demo_noise)

    @property
    def done(self) -> bool:
        return self.index >= len(self.plan)

    def action(self, state: WorldState) -> np.ndarray:
        if self.done:
            return np.append(state.angles, self.plan[-1].gripper)
        target = self.targets[self.index]
        wp = self.plan[self.index]
        if np.max(np.abs(target - state.angles)) <= self.arrive_tol:
            if self.dwelled < wp.dwell:
                self.dwelled += 1
            else:
                self.index += 1
                self.dwelled = 0
                return self.action(state)
        cmd = state.angles + np.clip(target - state.angles,
                                     -self.cfg.rate_limit, self.cfg.rate_limit)
        return np.append(cmd, wp.gripper)


# -- evaluation --------------------------------------------------------------------


def evaluate(make_agent, cfg_world: WorldConfig, spec: TaskSpec, seeds,
             action_mode: str = "joint", horizon: int | None = None):
    """Run one episode per seed; an agent is built per episode from the first
    observation and then queried step by step. Returns (success_rate, traces).
    """
    arm = PlanarArm(cfg_world.link_lengths)
    horizon = horizon or cfg_world.horizon
    seeds = list(seeds)
    successes = 0
    traces = []
    for seed in seeds:
        state = reset(cfg_world, spec, seed)
        obs = observe(state, cfg_world, arm)
        agent = make_agent(state, obs)
        records = []
        for t in range(horizon):
            action, info = agent.act(obs)
            step_world(state, action, cfg_world, arm, action_mode=action_mode)
            obs = observe(state, cfg_world, arm)
            records.append(info)
        won = is_success(state, spec)
        successes += int(won)
        traces.append({"seed": int(seed), "success": bool(won), "steps": records})
    return successes / max(1, len(seeds)), traces


class ExpertAgent:
    """Adapter running the scripted expert through the evaluate protocol.
    Emits trace records with the same schema as the policy runtime."""

    def __init__(self, state: WorldState, cfg: WorldConfig):
        self.expert = ScriptedExpert(state, cfg)
        self.cfg = cfg
        self._state = state
        self._grip = 0

    def act(self, obs: Observation):
        action = self.expert.action(self._state)
        grip = gripper_binary(float(action[-1]), self._grip,
                              self.cfg.gripper_close, self.cfg.gripper_open)
        transition = grip != self._grip
        self._grip = grip
        record = {
            "t": self._state.t,
            "raw": action.tolist(),
            "executed": action.tolist(),
            "gripper": int(grip),
            "transition": bool(transition),
            "history_len": 0,
            "chunk_slots": 0,
        }
        return action, record
