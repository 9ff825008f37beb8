"""The fusion policy: a transformer encoder over vision, pose-constraint and
history tokens, and a query-based decoder emitting the action chunk.

GhcbcModel owns every learned component (vision backbone, pose projectors,
history encoder, style-variable encoder for the ablation baseline, fusion
core) so one parameter manifest covers the whole policy."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import Config
from .errors import DimensionError
from .geometry import EePose, GcProjector, JointPose, ReferenceTracker, arm_feature, ee_feature
from .history import HcLatent, HistoryBuffers, HistoryEncoder
from .nn import Decoder, Encoder, Linear, Module, sinusoid_table
from .tensor import Tensor
from .vision import VisionEncoder


class Normalizer:
    """Per-dimension dataset statistics for actions and pose features; the
    policy trains and predicts in normalized space and denormalizes at the
    action boundary. Identity until fitted.

    The regression target is reparameterized: pose channels are offsets from
    the current pose (the anchor), the gripper channel stays absolute. The
    executable absolute action is reassembled at the boundary, so train and
    inference see the same representation."""

    FIELDS = ("act_mean", "act_std", "delta_mean", "delta_std",
              "arm_mean", "arm_std", "ee_mean", "ee_std",
              "joint_mean", "joint_std", "eevec_mean", "eevec_std")
    _STD_FLOOR = 1e-3

    def __init__(self, action_dim: int, n_joints: int):
        arm_dim = 2 * n_joints + 1
        self.act_mean = np.zeros(action_dim)
        self.act_std = np.ones(action_dim)
        self.delta_mean = np.zeros(action_dim)
        self.delta_std = np.ones(action_dim)
        self.arm_mean = np.zeros(arm_dim)
        self.arm_std = np.ones(arm_dim)
        self.ee_mean = np.zeros(15)
        self.ee_std = np.ones(15)
        self.joint_mean = np.zeros(n_joints + 1)
        self.joint_std = np.ones(n_joints + 1)
        self.eevec_mean = np.zeros(8)
        self.eevec_std = np.ones(8)

    @staticmethod
    def _fit(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return rows.mean(axis=0), np.maximum(rows.std(axis=0), Normalizer._STD_FLOOR)

    def fit_actions(self, rows):
        self.act_mean, self.act_std = self._fit(rows)

    def fit_deltas(self, rows):
        """rows: target chunks already expressed as anchored offsets."""
        self.delta_mean, self.delta_std = self._fit(rows)

    def fit_features(self, arm_rows, ee_rows, joint_rows, eevec_rows):
        self.arm_mean, self.arm_std = self._fit(arm_rows)
        self.ee_mean, self.ee_std = self._fit(ee_rows)
        self.joint_mean, self.joint_std = self._fit(joint_rows)
        self.eevec_mean, self.eevec_std = self._fit(eevec_rows)

    @staticmethod
    def anchored(actions, anchor):
        """Absolute action rows -> anchored offsets: pose channels minus the
        anchor pose, gripper unchanged. actions (..., k, a), anchor (..., a-1)."""
        actions = np.asarray(actions, dtype=np.float64)
        anchor = np.asarray(anchor, dtype=np.float64)
        out = actions.copy()
        out[..., :, :-1] -= anchor[..., None, :]
        return out

    @staticmethod
    def unanchored(rows, anchor):
        rows = np.asarray(rows, dtype=np.float64)
        anchor = np.asarray(anchor, dtype=np.float64)
        out = rows.copy()
        out[..., :, :-1] += anchor[..., None, :]
        return out

    def encode_targets(self, actions, anchor):
        """Absolute target chunks -> normalized anchored representation."""
        return (self.anchored(actions, anchor) - self.delta_mean) / self.delta_std

    def decode_chunk(self, rows, anchor):
        """Normalized policy output -> absolute executable actions."""
        return self.unanchored(np.asarray(rows) * self.delta_std + self.delta_mean,
                               anchor)

    def norm_action(self, x):
        return (np.asarray(x, dtype=np.float64) - self.act_mean) / self.act_std

    def denorm_action(self, x):
        return np.asarray(x, dtype=np.float64) * self.act_std + self.act_mean

    def norm_arm(self, x):
        return (np.asarray(x, dtype=np.float64) - self.arm_mean) / self.arm_std

    def norm_ee(self, x):
        return (np.asarray(x, dtype=np.float64) - self.ee_mean) / self.ee_std

    def norm_joint(self, x):
        return (np.asarray(x, dtype=np.float64) - self.joint_mean) / self.joint_std

    def norm_eevec(self, x):
        return (np.asarray(x, dtype=np.float64) - self.eevec_mean) / self.eevec_std

    def arrays(self, prefix: str = "normalizer.") -> dict[str, np.ndarray]:
        return {f"{prefix}{name}": getattr(self, name).copy() for name in self.FIELDS}

    def load(self, arrays: dict, prefix: str = "normalizer.") -> None:
        for name in self.FIELDS:
            key = f"{prefix}{name}"
            if key in arrays:
                setattr(self, name, np.asarray(arrays[key], dtype=np.float64).copy())


class PolicyCore(Module):
    """Encoder over the fused token sequence; decoder over learned chunk-slot
    queries with cross-attention into the encoder memory; linear action head
    with no output activation."""

    def __init__(self, d_model: int, n_heads: int, enc_layers: int, dec_layers: int,
                 ff_dim: int, chunk_k: int, action_dim: int, rng: np.random.Generator):
        self.d_model = d_model
        self.chunk_k = chunk_k
        self.encoder = Encoder(enc_layers, d_model, n_heads, ff_dim, rng)
        self.decoder = Decoder(dec_layers, d_model, n_heads, ff_dim, rng)
        self.queries = Tensor(rng.normal(0.0, 0.02, size=(chunk_k, d_model)),
                              requires_grad=True)
        self.head = Linear(d_model, action_dim, rng)

    def __call__(self, seq: Tensor) -> Tensor:
        if seq.shape[-1] != self.d_model:
            raise DimensionError(f"token width {seq.shape[-1]} != d_model {self.d_model}")
        memory = self.encoder(seq)
        lead = seq.shape[:-2]
        q = self.queries if not lead else T.broadcast_to(
            self.queries, (*lead, self.chunk_k, self.d_model))
        return self.head(self.decoder(q, memory))


def reconstruction_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over every chunk entry."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"chunk shapes disagree: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


class StyleEncoder(Module):
    """ACT-style conditional-VAE encoder over the target action chunk; the
    ablation baseline's stand-in for the history branch. Latent mean is used
    (zero vector) at inference."""

    def __init__(self, chunk_k: int, d_model: int, action_dim: int, latent_dim: int,
                 n_joints: int, n_layers: int, n_heads: int, ff_dim: int,
                 rng: np.random.Generator):
        self.latent_dim = latent_dim
        self.cls_token = Tensor(rng.normal(0.0, 0.02, size=(1, d_model)), requires_grad=True)
        self.joint_proj = Linear(n_joints + 1, d_model, rng)
        self.act_proj = Linear(action_dim, d_model, rng)
        self.encoder = Encoder(n_layers, d_model, n_heads, ff_dim, rng)
        self.mu_head = Linear(d_model, latent_dim, rng)
        self.logvar_head = Linear(d_model, latent_dim, rng)
        self.out_proj = Linear(latent_dim, d_model, rng)
        self._pos = sinusoid_table(chunk_k + 2, d_model)

    def posterior(self, joint_vec: np.ndarray, target_chunk: np.ndarray,
                  noise: np.ndarray) -> tuple[Tensor, HcLatent]:
        """Training path: encode [CLS, joint, chunk...] and sample the latent."""
        lead = target_chunk.shape[:-2]
        cls = self.cls_token if not lead else T.broadcast_to(
            self.cls_token, (*lead, 1, self.cls_token.shape[-1]))
        j = self.joint_proj(Tensor(joint_vec)).reshape(*lead, 1, -1)
        a = self.act_proj(Tensor(target_chunk))
        seq = T.concat([cls, j, a], axis=-2) + Tensor(self._pos)
        y = self.encoder(seq)
        cls_row = y[0:1] if y.ndim == 2 else y[:, 0:1]
        mu = self.mu_head(cls_row).reshape(*lead, self.latent_dim)
        logvar = self.logvar_head(cls_row).reshape(*lead, self.latent_dim)
        sigma = T.exp(logvar * 0.5)
        sample = mu + sigma * Tensor(np.asarray(noise, dtype=np.float64))
        token = self.out_proj(sample.reshape(*lead, 1, self.latent_dim))
        return token, HcLatent(mu=mu, sigma=sigma, sample=sample)

    def prior_token(self, lead: tuple = ()) -> Tensor:
        """Inference path: latent fixed at the prior mean (zeros)."""
        z = Tensor(np.zeros((*lead, 1, self.latent_dim)))
        return self.out_proj(z)


class GhcbcModel(Module):
    """Every learned component of the policy, wired per the config switches."""

    def __init__(self, cfg: Config, rng: np.random.Generator):
        cfg.validate()
        p = cfg.policy
        d = p.d_model
        self.vision = VisionEncoder(cfg.vision, rng)
        self.gc = GcProjector(p.n_joints, d, rng)
        self.joint_in_proj = Linear(p.n_joints + 1, d, rng)
        self.ee_in_proj = Linear(8, d, rng)
        self.hist = HistoryEncoder(
            p.history_k, d, p.action_dim, p.latent_dim, p.hist_layers, p.n_heads,
            p.ff_dim, rng, include_vision=(p.hc_mode != "action_only"),
        )
        self.style = StyleEncoder(p.chunk_k, d, p.action_dim, p.latent_dim,
                                  p.n_joints, p.hist_layers, p.n_heads, p.ff_dim, rng)
        self.core = PolicyCore(d, p.n_heads, p.enc_layers, p.dec_layers, p.ff_dim,
                               p.chunk_k, p.action_dim, rng)
        # one learned tag vector per token role; these, not sequence position,
        # carry modality identity in the fusion encoder
        def tag():
            return Tensor(rng.normal(0.0, 0.02, size=(d,)), requires_grad=True)

        self.tag_vis = tag()
        self.tag_arm = tag()
        self.tag_ee = tag()
        self.tag_joint_in = tag()
        self.tag_eepose_in = tag()
        self.tag_hc = tag()
        self.normalizer = Normalizer(p.action_dim, p.n_joints)
        self._cfg = cfg

    @property
    def config(self) -> Config:
        return self._cfg

    # -- per-branch features ------------------------------------------------

    def encode_image(self, img, intermediates=None) -> Tensor:
        img = img if isinstance(img, Tensor) else Tensor(img)
        return self.vision.encode(img, intermediates)

    def pose_tokens(self, arm_feats=None, ee_feats=None, joint_vecs=None,
                    ee_vecs=None) -> Tensor | None:
        """Pose-token block per the input-pose mode; None when disabled.
        Inputs are raw pose features; normalization happens here."""
        p = self._cfg.policy
        if not p.gc_enabled:
            return None
        mode = p.input_pose_mode
        norm = self.normalizer
        if mode == "gc":
            tok = self.gc(Tensor(norm.norm_arm(arm_feats)), Tensor(norm.norm_ee(ee_feats)))
            tags = T.concat([self.tag_arm.reshape(1, -1), self.tag_ee.reshape(1, -1)], axis=0)
            return tok + tags
        if mode == "joint":
            tok = self.joint_in_proj(Tensor(norm.norm_joint(joint_vecs)))
            lead = tok.shape[:-1]
            return tok.reshape(*lead, 1, -1) + self.tag_joint_in.reshape(1, -1)
        if mode == "joint_ee":
            j = self.joint_in_proj(Tensor(norm.norm_joint(joint_vecs)))
            e = self.ee_in_proj(Tensor(norm.norm_eevec(ee_vecs)))
            lead = j.shape[:-1]
            tok = T.concat([j.reshape(*lead, 1, -1), e.reshape(*lead, 1, -1)], axis=-2)
            tags = T.concat([self.tag_joint_in.reshape(1, -1),
                             self.tag_eepose_in.reshape(1, -1)], axis=0)
            return tok + tags
        raise DimensionError(f"unknown input_pose_mode {mode}")

    def pose_tokens_from_obs(self, j: JointPose, e: EePose,
                             tracker: ReferenceTracker) -> Tensor | None:
        p = self._cfg.policy
        if not p.gc_enabled:
            return None
        if p.input_pose_mode == "gc":
            tok = self.pose_tokens(arm_feats=arm_feature(j, tracker).reshape(1, -1),
                                   ee_feats=ee_feature(e, tracker).reshape(1, -1))
        else:
            tok = self.pose_tokens(joint_vecs=j.vector().reshape(1, -1),
                                   ee_vecs=e.vector().reshape(1, -1))
        return tok.reshape(tok.shape[-2], tok.shape[-1])

    def hc_token(self, buffers: HistoryBuffers, noise=None) -> tuple[Tensor, HcLatent | None]:
        """History token per the hc mode; zero token and no latent when off.
        In style mode inference uses the style prior mean. Buffered actions
        are normalized on the way in (zero padding stays zero)."""
        mode = self._cfg.policy.hc_mode
        if mode == "none":
            return Tensor(np.zeros((1, self._cfg.policy.d_model))), None
        if mode == "style":
            return self.style.prior_token(), None
        vis_rows, act_rows = self.hist.history_arrays(buffers)
        act_rows = self.normalizer.norm_action(act_rows)
        return self.hist.encode(self.hist.assemble_arrays(vis_rows, act_rows), noise)

    # -- fused forward -------------------------------------------------------

    def fuse(self, vis_tokens: Tensor, pose_tokens: Tensor | None,
             hc_token: Tensor) -> Tensor:
        d = self._cfg.policy.d_model
        for t in (vis_tokens, hc_token) + ((pose_tokens,) if pose_tokens is not None else ()):
            if t.shape[-1] != d:
                raise DimensionError(f"token width {t.shape[-1]} != d_model {d}")
        blocks = [vis_tokens + self.tag_vis]
        if pose_tokens is not None:
            blocks.append(pose_tokens)
        blocks.append(hc_token + self.tag_hc)
        return T.concat(blocks, axis=-2)

    def predict_chunk(self, vis_tokens: Tensor, pose_tokens: Tensor | None,
                      hc_token: Tensor) -> Tensor:
        """Chunk in normalized action space (the training target space)."""
        return self.core(self.fuse(vis_tokens, pose_tokens, hc_token))

    def action_anchor(self, j: JointPose, e: EePose) -> np.ndarray:
        """Current pose expressed in the policy's output space, used to anchor
        the predicted pose offsets: joint mode returns the joint angles, ee
        mode the planar (x, y, heading). Zero when anchoring is disabled, so
        the policy regresses absolute targets."""
        if not self._cfg.policy.anchored_output:
            return np.zeros(self._cfg.policy.action_dim - 1)
        if self._cfg.policy.pose_output == "joint":
            return np.asarray(j.angles, dtype=np.float64).copy()
        q = e.quaternion
        heading = 2.0 * np.arctan2(q[2], q[3])
        return np.array([e.position[0], e.position[1], heading])

    def predict_actions(self, vis_tokens: Tensor, pose_tokens: Tensor | None,
                        hc_token: Tensor, anchor: np.ndarray) -> np.ndarray:
        """Chunk decoded back to absolute executable actions."""
        chunk = self.predict_chunk(vis_tokens, pose_tokens, hc_token)
        return self.normalizer.decode_chunk(chunk.numpy(), anchor)

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters().items()}
        out.update(self.normalizer.arrays())
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.load_arrays({k: v for k, v in arrays.items()
                          if not k.startswith("normalizer.")})
        self.normalizer.load(arrays)

    def encoder_sequence_length(self) -> int:
        p = self._cfg.policy
        n_pose = 0 if not p.gc_enabled else (1 if p.input_pose_mode == "joint" else 2)
        return self._cfg.vision.token_count + n_pose + 1
