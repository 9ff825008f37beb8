"""Training: sample (history, current observation, future chunk) windows from
demonstration episodes, run the shared forward path, and optimize
reconstruction + KL-weighted latent loss with Adam. Includes the periodic
online evaluation and best-checkpoint tracking."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import Config
from .dataset import Episode
from .errors import DatasetError, DivergenceError
from .geometry import EePose, JointPose, ReferenceTracker, arm_feature, ee_feature
from .history import kl_loss
from .optim import AdamState, adam_init, adam_step, zero_grads
from .policy import GhcbcModel, reconstruction_loss
from .runtime import PolicyAgent, gripper_hysteresis, GripperState
from .simworld import PlanarArm, TaskSpec, evaluate
from .tensor import Tensor, no_grad


# Ablation matrix rows: pose input, pose output, and the policy-trainer
# column (style-variable CVAE / none / history with actions only / full).
ABLATION_ROWS = {
    1: {"input_pose_mode": "joint", "pose_output": "joint", "hc_mode": "style"},
    2: {"input_pose_mode": "joint", "pose_output": "ee", "hc_mode": "style"},
    3: {"input_pose_mode": "joint_ee", "pose_output": "ee", "hc_mode": "style"},
    4: {"input_pose_mode": "gc", "pose_output": "ee", "hc_mode": "style"},
    5: {"input_pose_mode": "gc", "pose_output": "ee", "hc_mode": "none"},
    6: {"input_pose_mode": "gc", "pose_output": "ee", "hc_mode": "action_only"},
    7: {"input_pose_mode": "gc", "pose_output": "ee", "hc_mode": "action_image"},
}


def ablation_config(cfg: Config, row: int) -> Config:
    from .config import clone_config

    if row not in ABLATION_ROWS:
        raise DatasetError(f"unknown ablation row {row}; expected one of {sorted(ABLATION_ROWS)}")
    out = clone_config(cfg)
    for key, val in ABLATION_ROWS[row].items():
        setattr(out.policy, key, val)
    out.policy.gc_enabled = True
    out.validate()
    return out


def joint_pose_at(episode: Episode, t: int) -> JointPose:
    vec = episode.joint_poses[t]
    return JointPose(vec[:-1], float(vec[-1]))


def ee_pose_at(episode: Episode, t: int) -> EePose:
    vec = episode.ee_poses[t]
    return EePose(vec[:3], vec[3:7], float(vec[7]))


def scan_references(episode: Episode, t: int, actions: np.ndarray,
                    close_at: float, open_at: float
                    ) -> tuple[ReferenceTracker, int]:
    """Replay gripper transitions over steps 0..t-1 with the same hysteresis
    rule the runtime applies, returning the tracker state seen at step t and
    the last step whose transition cleared the histories (-1 if none)."""
    tracker = ReferenceTracker.start(joint_pose_at(episode, 0), ee_pose_at(episode, 0))
    grip = GripperState(0, 0.0)
    last_clear = -1
    for s in range(t):
        grip = gripper_hysteresis(float(actions[s, -1]), grip, close_at, open_at)
        if grip.value != tracker.ref_gripper_state:
            tracker.ref_joint = joint_pose_at(episode, s)
            tracker.ref_ee = ee_pose_at(episode, s)
            tracker.ref_gripper_state = grip.value
            last_clear = s
    return tracker, last_clear


@dataclass
class TrainBatch:
    images: np.ndarray          # (B, C, H, W) current frames
    hist_frames: list           # per sample: list of (episode_idx, step) pairs
    hist_acts: np.ndarray       # (B, k, action_dim), zero-padded oldest-first
    arm_feats: np.ndarray       # (B, 2*n_joints + 1)
    ee_feats: np.ndarray        # (B, 15)
    joint_vecs: np.ndarray      # (B, n_joints + 1)
    ee_vecs: np.ndarray         # (B, 8)
    targets: np.ndarray         # (B, chunk_k, action_dim) absolute actions
    anchors: np.ndarray         # (B, action_dim - 1) current output-space pose


class DemoSampler:
    """Uniform (episode, t) windows with the padding and reference rules the
    runtime induces: zero left-padding before the episode start, history
    truncated at the last gripper transition, terminal-hold right-padding of
    the target chunk.

    Per-step reference states are precomputed per episode with the same
    hysteresis scan the runtime applies online."""

    def __init__(self, episodes: list[Episode], cfg: Config):
        if not episodes:
            raise DatasetError("empty dataset")
        for ep in episodes:
            if ep.length < 1:
                raise DatasetError("episode shorter than 1 step")
        self.episodes = episodes
        self.cfg = cfg
        arm = PlanarArm(cfg.world.link_lengths)
        if cfg.policy.pose_output == "ee":
            self.exec_actions = [ep.ee_actions(arm) for ep in episodes]
            anchors = [np.column_stack([
                ep.ee_poses[:, 0], ep.ee_poses[:, 1],
                2.0 * np.arctan2(ep.ee_poses[:, 5], ep.ee_poses[:, 6]),
            ]) for ep in episodes]
        else:
            self.exec_actions = [ep.actions for ep in episodes]
            anchors = [ep.joint_poses[:, :-1].copy() for ep in episodes]
        if not cfg.policy.anchored_output:
            anchors = [np.zeros_like(a) for a in anchors]
        self.anchors = anchors
        self._refs = [self._precompute_references(ep, acts)
                      for ep, acts in zip(episodes, self.exec_actions)]

    def _precompute_references(self, ep: Episode, acts: np.ndarray) -> dict:
        p = self.cfg.policy
        n = ep.length
        ref_joint = np.zeros((n, ep.joint_poses.shape[1]))
        ref_ee = np.zeros((n, 8))
        ref_g = np.zeros(n, dtype=int)
        last_clear = np.full(n, -1, dtype=int)
        cur_j, cur_e, cur_g, cur_clear = ep.joint_poses[0], ep.ee_poses[0], 0, -1
        grip = GripperState(0, 0.0)
        for t in range(n):
            ref_joint[t], ref_ee[t], ref_g[t], last_clear[t] = cur_j, cur_e, cur_g, cur_clear
            grip = gripper_hysteresis(float(acts[t, -1]), grip,
                                      p.gripper_close, p.gripper_open)
            if grip.value != cur_g:
                cur_j, cur_e, cur_g, cur_clear = ep.joint_poses[t], ep.ee_poses[t], grip.value, t
        return {"joint": ref_joint, "ee": ref_ee, "g": ref_g, "clear": last_clear}

    def reference_state(self, ep_idx: int, t: int) -> tuple[ReferenceTracker, int]:
        """Tracker contents seen by the policy at step t, plus the last step
        whose transition cleared the histories."""
        ep, refs = self.episodes[ep_idx], self._refs[ep_idx]
        tracker = ReferenceTracker.start(
            JointPose(refs["joint"][t][:-1], float(refs["joint"][t][-1])),
            EePose(refs["ee"][t][:3], refs["ee"][t][3:7], float(refs["ee"][t][7])))
        tracker.ref_gripper_state = int(refs["g"][t])
        return tracker, int(refs["clear"][t])

    def sample(self, rng: np.random.Generator, batch_size: int) -> TrainBatch:
        p = self.cfg.policy
        k, chunk_k, a_dim = p.history_k, p.chunk_k, p.action_dim
        b = batch_size
        images = np.zeros((b, *self.episodes[0].images.shape[1:]))
        hist_frames: list[list[tuple[int, int]]] = []
        hist_acts = np.zeros((b, k, a_dim))
        arm_feats = np.zeros((b, 2 * p.n_joints + 1))
        ee_feats = np.zeros((b, 15))
        joint_vecs = np.zeros((b, p.n_joints + 1))
        ee_vecs = np.zeros((b, 8))
        targets = np.zeros((b, chunk_k, a_dim))
        anchors = np.zeros((b, a_dim - 1))
        for i in range(b):
            ep_idx = int(rng.integers(len(self.episodes)))
            ep = self.episodes[ep_idx]
            t = int(rng.integers(ep.length))
            acts = self.exec_actions[ep_idx]
            tracker, last_clear = self.reference_state(ep_idx, t)
            lo = max(0, last_clear + 1, t - k)
            window = list(range(lo, t))
            hist_frames.append([(ep_idx, s) for s in window])
            for j, s in enumerate(window):
                hist_acts[i, k - len(window) + j] = acts[s]
            images[i] = ep.images[t]
            j_t, e_t = joint_pose_at(ep, t), ee_pose_at(ep, t)
            arm_feats[i] = arm_feature(j_t, tracker)
            ee_feats[i] = ee_feature(e_t, tracker)
            joint_vecs[i] = j_t.vector()
            ee_vecs[i] = e_t.vector()
            anchors[i] = self.anchors[ep_idx][t]
            for j in range(chunk_k):
                targets[i, j] = acts[min(t + j, ep.length - 1)]
        return TrainBatch(images, hist_frames, hist_acts, arm_feats, ee_feats,
                          joint_vecs, ee_vecs, targets, anchors)

    def fit_normalizer(self, model: GhcbcModel) -> None:
        """Dataset statistics for actions, anchored target chunks, and pose
        features, written into the model's normalizer."""
        model.normalizer.fit_actions(np.concatenate(self.exec_actions))
        k = self.cfg.policy.chunk_k
        delta_rows = []
        for acts, anc in zip(self.exec_actions, self.anchors):
            n = len(acts)
            idx = np.minimum(np.arange(n)[:, None] + np.arange(k)[None, :], n - 1)
            chunks = acts[idx].copy()                      # (T, k, a)
            chunks[..., :-1] -= anc[:, None, :]
            delta_rows.append(chunks.reshape(-1, acts.shape[1]))
        model.normalizer.fit_deltas(np.concatenate(delta_rows))
        arm_rows, ee_rows, joint_rows, eevec_rows = [], [], [], []
        for ep, refs in zip(self.episodes, self._refs):
            delta_j = ep.joint_poses[:, :-1] - refs["joint"][:, :-1]
            delta_e = ep.ee_poses[:, :7] - refs["ee"][:, :7]
            arm_rows.append(np.concatenate([delta_j, ep.joint_poses], axis=1))
            ee_rows.append(np.concatenate([delta_e, ep.ee_poses], axis=1))
            joint_rows.append(ep.joint_poses)
            eevec_rows.append(ep.ee_poses)
        model.normalizer.fit_features(
            np.concatenate(arm_rows), np.concatenate(ee_rows),
            np.concatenate(joint_rows), np.concatenate(eevec_rows))

    def history_vision_rows(self, model: GhcbcModel, batch: TrainBatch) -> np.ndarray:
        """Mean-compressed vision rows for every history slot: (B, k, d_model).
        Computed without gradients: stored history features are constants."""
        p = self.cfg.policy
        b = len(batch.hist_frames)
        rows = np.zeros((b, p.history_k, p.d_model))
        flat = [(i, j, ep, s) for i, frames in enumerate(batch.hist_frames)
                for j, (ep, s) in enumerate(frames)]
        if not flat:
            return rows
        imgs = np.stack([self.episodes[ep].images[s] for _, _, ep, s in flat])
        with no_grad():
            tokens = model.encode_image(Tensor(imgs))        # (N, tc, d)
            means = tokens.mean(axis=-2).numpy()             # (N, d)
        for (i, j, _, _), row in zip(flat, means):
            n = len(batch.hist_frames[i])
            rows[i, p.history_k - n + j] = row
        return rows


def compute_loss(model: GhcbcModel, sampler: DemoSampler, batch: TrainBatch,
                 noise: np.ndarray | None,
                 hist_vis_rows: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Shared forward path: L = MSE + beta * KL over one batch.

    noise is the pre-drawn latent perturbation, (B, latent_dim); None runs
    the latent at its mean. hist_vis_rows overrides the recomputed history
    vision features (they are constants w.r.t. the loss either way).
    """
    p = model.config.policy
    norm = model.normalizer
    b = batch.images.shape[0]
    targets = norm.encode_targets(batch.targets, batch.anchors)
    vis_tokens = model.encode_image(Tensor(batch.images))
    latent = None
    if p.hc_mode in ("action_only", "action_image"):
        vis_rows = (hist_vis_rows if hist_vis_rows is not None
                    else sampler.history_vision_rows(model, batch))
        tokens = model.hist.assemble_arrays(vis_rows, norm.norm_action(batch.hist_acts))
        hc, latent = model.hist.encode(tokens, noise)
    elif p.hc_mode == "style":
        if noise is None:
            noise = np.zeros((b, p.latent_dim))
        hc, latent = model.style.posterior(norm.norm_joint(batch.joint_vecs),
                                           targets, noise)
    else:
        hc = Tensor(np.zeros((b, 1, p.d_model)))
    pose = model.pose_tokens(arm_feats=batch.arm_feats, ee_feats=batch.ee_feats,
                             joint_vecs=batch.joint_vecs, ee_vecs=batch.ee_vecs)
    pred = model.predict_chunk(vis_tokens, pose, hc)
    l_rec = reconstruction_loss(pred, targets)
    l_kl = kl_loss(latent) if latent is not None else Tensor(0.0)
    return l_rec + l_kl * p.kl_beta, l_rec, l_kl


def train_step(model: GhcbcModel, sampler: DemoSampler, batch: TrainBatch,
               opt: AdamState, noise_rng: np.random.Generator) -> dict:
    """One Algorithm-1 iteration: shared forward path, L = MSE + beta * KL,
    one Adam update over all parameters jointly."""
    p = model.config.policy
    params = model.named_parameters()
    zero_grads(params)
    noise = noise_rng.standard_normal((batch.images.shape[0], p.latent_dim))
    loss, l_rec, l_kl = compute_loss(model, sampler, batch, noise)
    if not np.isfinite(loss.item()):
        raise DivergenceError(f"non-finite loss at optimizer step {opt.step}")
    loss.backward()
    adam_step(params, opt)
    return {"loss": loss.item(), "l_reconst": l_rec.item(), "l_kl": l_kl.item()}


def eval_seeds(cfg: Config, n: int) -> list[int]:
    base = 1_000_000 + cfg.train.seed * 10_000
    return [base + i for i in range(n)]


def evaluate_model(model: GhcbcModel, cfg: Config, seeds) -> tuple[float, list]:
    spec = TaskSpec.from_world(cfg.world)

    def make_agent(state, obs):
        return PolicyAgent(model, cfg, state, obs)

    return evaluate(make_agent, cfg.world, spec, seeds,
                    action_mode=cfg.policy.pose_output)


def train_loop(episodes: list[Episode], cfg: Config, out_dir,
               log_every: int = 100) -> dict:
    """Full training run: periodic online evaluation, metrics log, best and
    final checkpoints. Returns paths and the metrics rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng_init = np.random.default_rng(cfg.train.seed)
    rng_data = np.random.default_rng(cfg.train.seed + 1)
    rng_noise = np.random.default_rng(cfg.train.seed + 2)
    model = GhcbcModel(cfg, rng_init)
    sampler = DemoSampler(episodes, cfg)
    sampler.fit_normalizer(model)
    opt = adam_init(model.named_parameters(), lr=cfg.train.lr)
    metrics: list[dict] = []
    best_success = -1.0
    best_path = out_dir / "best.ckpt"
    final_path = out_dir / "final.ckpt"
    log_path = out_dir / "metrics.jsonl"
    seeds = eval_seeds(cfg, cfg.train.eval_episodes)
    with open(log_path, "w") as log:
        running = {"loss": 0.0, "l_reconst": 0.0, "l_kl": 0.0}
        since_flush = 0
        for step in range(1, cfg.train.steps + 1):
            batch = sampler.sample(rng_data, cfg.train.batch_size)
            stats = train_step(model, sampler, batch, opt, rng_noise)
            for key in running:
                running[key] += stats[key]
            since_flush += 1
            do_eval = step % cfg.train.eval_every == 0 or step == cfg.train.steps
            if step % log_every == 0 or do_eval:
                row = {"step": step,
                       "l_reconst": running["l_reconst"] / since_flush,
                       "l_kl": running["l_kl"] / since_flush}
                running = {k: 0.0 for k in running}
                since_flush = 0
                if do_eval:
                    success, _ = evaluate_model(model, cfg, seeds)
                    row["success"] = success
                    if success > best_success:
                        best_success = success
                        save_checkpoint(best_path, model.state_arrays())
                metrics.append(row)
                log.write(json.dumps(row) + "\n")
                log.flush()
    save_checkpoint(final_path, model.state_arrays())
    if best_success < 0:
        save_checkpoint(best_path, model.state_arrays())
    return {"model": model, "metrics": metrics, "best": best_path,
            "final": final_path, "log": log_path, "best_success": best_success}
