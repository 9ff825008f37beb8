"""Stateful inference loop: per-step chunk prediction, chunk buffering with
temporal ensembling, gripper hysteresis, and the transition side effects
(clear chunk buffer and histories, refresh reference poses)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config
from .errors import EpisodeEndError, NoPredictionError, StateError
from .geometry import ReferenceTracker, maybe_update_references
from .history import HistoryBuffers
from .simworld import Observation
from .tensor import no_grad


@dataclass
class GripperState:
    value: int          # binary open(0)/closed(1)
    raw: float = 0.0    # last continuous gripper output


class ChunkBuffer:
    """Per-timestep lists of overlapping chunk predictions, ordered by
    arrival. Predictions landing beyond the horizon are discarded."""

    def __init__(self, horizon: int):
        self.horizon = horizon
        self.slots: dict[int, list[np.ndarray]] = {}

    def add_chunk(self, t0: int, chunk: np.ndarray) -> None:
        for i, row in enumerate(chunk):
            t = t0 + i
            if t < self.horizon:
                self.slots.setdefault(t, []).append(np.array(row, dtype=np.float64))

    def predictions(self, t: int) -> list[np.ndarray]:
        return self.slots.get(t, [])

    def clear(self) -> None:
        self.slots.clear()

    def filled_slots(self) -> list[int]:
        return sorted(k for k, v in self.slots.items() if v)


def ensemble(predictions, m: float, newest_first: bool = False) -> np.ndarray:
    """Exponentially weighted mean w_i = exp(-m * i); i = 0 is the earliest
    retained prediction unless newest_first flips the indexing."""
    preds = list(predictions)
    if not preds:
        raise NoPredictionError("temporal ensemble needs at least one prediction")
    n = len(preds)
    idx = np.arange(n, dtype=np.float64)
    if newest_first:
        idx = idx[::-1]
    w = np.exp(-m * idx)
    stacked = np.stack(preds)
    return (w[:, None] * stacked).sum(axis=0) / w.sum()


def gripper_hysteresis(raw: float, prev: GripperState, close_at: float,
                       open_at: float) -> GripperState:
    """Close at or above the close threshold, open at or below the open
    threshold, hold the previous state inside the dead band."""
    if not np.isfinite(raw):
        raise StateError(f"gripper output is not finite: {raw}")
    if raw >= close_at:
        return GripperState(1, float(raw))
    if raw <= open_at:
        return GripperState(0, float(raw))
    return GripperState(prev.value, float(raw))


class PolicyRuntime:
    """One episode's inference state machine around a trained model."""

    def __init__(self, model, cfg: Config, first_joint, first_ee,
                 horizon: int | None = None):
        self.model = model
        self.cfg = cfg
        self.horizon = horizon if horizon is not None else cfg.world.horizon
        self.chunks = ChunkBuffer(self.horizon)
        self.buffers = HistoryBuffers(cfg.policy.history_k, cfg.policy.action_dim)
        self.tracker = ReferenceTracker.start(first_joint, first_ee)
        self.gripper = GripperState(0, 0.0)
        self.t = 0
        self.records: list[dict] = []

    def step(self, obs: Observation) -> np.ndarray:
        """Predict, buffer, ensemble, push history, apply hysteresis, and run
        the transition side effects. Returns the executed action."""
        if not self.tracker.initialized:
            raise StateError("runtime used before initialization")
        if self.t >= self.horizon:
            raise EpisodeEndError(f"step {self.t} at or past horizon {self.horizon}")
        p = self.cfg.policy
        with no_grad():
            vis = self.model.encode_image(obs.image)
            hc, _ = self.model.hc_token(self.buffers)
            pose = self.model.pose_tokens_from_obs(obs.joint, obs.ee, self.tracker)
            anchor = self.model.action_anchor(obs.joint, obs.ee)
            chunk = np.asarray(self.model.predict_actions(vis, pose, hc, anchor))
        self.chunks.add_chunk(self.t, chunk)
        action = ensemble(self.chunks.predictions(self.t), self.cfg.runtime.ensemble_m,
                          self.cfg.runtime.ensemble_newest_first)
        self.buffers.push(vis.numpy(), action)
        new_grip = gripper_hysteresis(action[-1], self.gripper,
                                      p.gripper_close, p.gripper_open)
        transition = new_grip.value != self.tracker.ref_gripper_state
        if transition:
            if self.cfg.runtime.clearing_enabled:
                self.chunks.clear()
                self.buffers.clear()
            maybe_update_references(self.tracker, obs.joint, obs.ee, new_grip.value)
        self.gripper = new_grip
        self.records.append({
            "t": self.t,
            "raw": [float(v) for v in chunk[0]],
            "executed": [float(v) for v in action],
            "gripper": int(new_grip.value),
            "transition": bool(transition),
            "history_len": len(self.buffers),
            "chunk_slots": len(self.chunks.filled_slots()),
        })
        self.t += 1
        return action


class PolicyAgent:
    """Adapter running a PolicyRuntime under simworld.evaluate."""

    def __init__(self, model, cfg: Config, state, obs: Observation):
        self.runtime = PolicyRuntime(model, cfg, obs.joint, obs.ee)

    def act(self, obs: Observation):
        action = self.runtime.step(obs)
        return action, dict(self.runtime.records[-1])


def write_trace(path, seed: int, records: list[dict], success: bool | None = None,
                extra: dict | None = None) -> None:
    """Line-delimited rollout trace: one header line, then one line per step."""
    path = Path(path)
    with open(path, "w") as f:
        header = {"trace_version": 1, "seed": seed}
        if success is not None:
            header["success"] = bool(success)
        if extra:
            header.update(extra)
        f.write(json.dumps(header) + "\n")
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def read_trace(path) -> tuple[dict, list[dict]]:
    path = Path(path)
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines:
        raise StateError(f"empty trace file: {path}")
    return lines[0], lines[1:]
