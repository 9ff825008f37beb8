"""Demonstration dataset on disk: one file per episode (JSON header line plus
binary little-endian float64 blocks in declared order) and a manifest that is
written last as the completion marker."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config
from .errors import DatasetError, InfeasibleSpecError
from .simworld import (PlanarArm, ScriptedExpert, TaskSpec, is_success, observe,
                       reset, step_world)

EPISODE_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
_BLOCK_ORDER = ("images", "joint_poses", "ee_poses", "actions")


@dataclass
class Episode:
    """In-memory episode: per-step observations and expert actions."""

    images: np.ndarray        # (T, C, H, W)
    joint_poses: np.ndarray   # (T, n_joints + 1)
    ee_poses: np.ndarray      # (T, 8)
    actions: np.ndarray       # (T, n_joints + 1), joint-space commands
    success: bool
    seed: int

    @property
    def length(self) -> int:
        return len(self.actions)

    def ee_actions(self, arm: PlanarArm) -> np.ndarray:
        """Commanded end-effector targets derived from the joint commands:
        (T, 4) rows of (x, y, heading, gripper)."""
        out = np.zeros((self.length, 4))
        for t, a in enumerate(self.actions):
            x, y, phi = arm.fk(a[:-1])
            out[t] = (x, y, phi, a[-1])
        return out


def generate_episode(cfg: Config, spec: TaskSpec, seed: int) -> Episode:
    """Roll the scripted expert once; stops when the plan completes.

    Joint commands are executed with a small seeded perturbation while the
    clean corrective command is recorded, so windows sampled from the episode
    teach recovery back toward the nominal path."""
    world = cfg.world
    arm = PlanarArm(world.link_lengths)
    state = reset(world, spec, seed)
    expert = ScriptedExpert(state, world)
    noise_rng = np.random.default_rng(seed + 777_000_001)
    images, joints, ees, actions = [], [], [], []
    for _ in range(world.horizon):
        obs = observe(state, world, arm)
        action = expert.action(state)
        images.append(obs.image)
        joints.append(obs.joint.vector())
        ees.append(obs.ee.vector())
        actions.append(action)
        executed = action.copy()
        if world.demo_noise > 0.0:
            executed[:-1] += noise_rng.normal(0.0, world.demo_noise, size=len(executed) - 1)
        step_world(state, executed, world, arm)
        if expert.done:
            break
    return Episode(
        images=np.stack(images),
        joint_poses=np.stack(joints),
        ee_poses=np.stack(ees),
        actions=np.stack(actions),
        success=is_success(state, spec),
        seed=seed,
    )


def save_episode(path, episode: Episode, profile: str, spec: TaskSpec) -> None:
    blocks = {
        "images": episode.images,
        "joint_poses": episode.joint_poses,
        "ee_poses": episode.ee_poses,
        "actions": episode.actions,
    }
    header = {
        "format_version": EPISODE_FORMAT_VERSION,
        "profile": profile,
        "seed": episode.seed,
        "length": episode.length,
        "success": episode.success,
        "spec": {
            "target_block_color": spec.target_block_color,
            "target_box_color": spec.target_box_color,
            "min_separation": spec.min_separation,
        },
        "blocks": [[name, list(blocks[name].shape)] for name in _BLOCK_ORDER],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for name in _BLOCK_ORDER:
            f.write(blocks[name].astype("<f8").tobytes())


def load_episode(path) -> Episode:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"episode file not found: {path}")
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format_version") != EPISODE_FORMAT_VERSION:
            raise DatasetError(f"unsupported episode format in {path}")
        arrays = {}
        for name, shape in header["blocks"]:
            count = int(np.prod(shape, dtype=np.int64))
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise DatasetError(f"truncated block '{name}' in {path}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    episode = Episode(
        images=arrays["images"],
        joint_poses=arrays["joint_poses"],
        ee_poses=arrays["ee_poses"],
        actions=arrays["actions"],
        success=bool(header["success"]),
        seed=int(header["seed"]),
    )
    if episode.length < 1:
        raise DatasetError(f"episode shorter than 1 step: {path}")
    return episode


def generate_dataset(cfg: Config, out_dir, n_episodes: int, seed: int) -> Path:
    """Write n seeded expert episodes plus the manifest (written last)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = TaskSpec.from_world(cfg.world)
    names = []
    ep_seed = seed
    produced = 0
    attempts = 0
    while produced < n_episodes:
        if attempts > 20 * n_episodes + 100:
            raise InfeasibleSpecError("expert keeps failing; task spec looks infeasible")
        episode = generate_episode(cfg, spec, ep_seed)
        ep_seed += 1
        attempts += 1
        if not episode.success:
            continue
        name = f"ep_{produced:05d}.demo"
        save_episode(out_dir / name, episode, cfg.profile, spec)
        names.append(name)
        produced += 1
    manifest = {
        "format_version": EPISODE_FORMAT_VERSION,
        "created_unix": time.time(),
        "profile": cfg.profile,
        "seed": seed,
        "episodes": names,
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return out_dir


def load_dataset(path) -> list[Episode]:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DatasetError(f"dataset manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != EPISODE_FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format in {manifest_path}")
    episodes = [load_episode(path / name) for name in manifest["episodes"]]
    if not episodes:
        raise DatasetError(f"dataset at {path} lists no episodes")
    return episodes
