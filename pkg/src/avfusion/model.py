"""End-to-end regression model: per-modality temporal encoders, fusion,
dropout on the fused features, and the frame-wise prediction head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fusion import FusionConfig, FusionParams, ModalityFeatures, fusion_forward
from .metrics import ccc_loss
from .synthdata import LabeledClip
from .temporal import (
    HeadConfig,
    HeadParams,
    TcnConfig,
    TcnParams,
    apply_dropout,
    head_forward,
    tcn_forward,
)


@dataclass
class ModelConfig:
    mode: str
    dim_audio: int
    dim_visual: int
    seq_len: int
    depth: int = 1
    temperature: float = 0.1
    joint_projection: bool = True
    tcn: TcnConfig = field(default_factory=TcnConfig)
    head_hidden: tuple = (16,)
    dropout: float = 0.5

    def fusion_config(self):
        return FusionConfig(
            mode=self.mode,
            dim_audio=self.dim_audio,
            dim_visual=self.dim_visual,
            seq_len=self.seq_len,
            depth=self.depth,
            temperature=self.temperature,
            joint_projection=self.joint_projection,
        )


class EmotionModel:
    """Owns every parameter tensor; forward maps a clip window to a 1 x L
    prediction in [-1, 1].

    The same ``rng`` drives all weight draws, and gate weights consume no
    randomness (zero init), so two models differing only in mode share
    identical encoder, attention, and head weights.  That makes mode
    comparisons at a fixed seed controlled experiments.
    """

    def __init__(self, config: ModelConfig, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        self.tcn_audio = TcnParams(config.dim_audio, config.tcn, rng=rng)
        self.tcn_visual = TcnParams(config.dim_visual, config.tcn, rng=rng)
        self.fusion = FusionParams(config.fusion_config(), rng=rng)
        fused_dim = self.tcn_audio.dim_out + self.tcn_visual.dim_out
        self.head = HeadParams(fused_dim, HeadConfig(hidden=tuple(config.head_hidden)), rng=rng)

    def parameters(self) -> dict:
        out = {}
        out.update(self.tcn_audio.parameters(prefix="tcn_audio."))
        out.update(self.tcn_visual.parameters(prefix="tcn_visual."))
        for name, tensor in self.fusion.parameters().items():
            key = f"fusion.{name}"
            tensor.name = key
            out[key] = tensor
        out.update(self.head.parameters(prefix="head."))
        for name, tensor in out.items():
            tensor.name = name
        return out

    def forward(self, clip: LabeledClip, dropout_rng=None) -> Tensor:
        """Predict one target channel per frame; dropout only when an rng
        is supplied (training mode).

        Input features are zeroed at invalid (padded) frames before they
        enter the network, so those frames cannot influence any gradient
        even through the global attention maps.
        """
        gate = clip.valid.astype(np.float64)
        audio = tcn_forward(Tensor(clip.audio.astype(np.float64) * gate), self.tcn_audio)
        visual = tcn_forward(Tensor(clip.visual.astype(np.float64) * gate), self.tcn_visual)
        state = fusion_forward(ModalityFeatures(audio, visual), self.fusion)
        fused = apply_dropout(state.fused, self.config.dropout, dropout_rng)
        return head_forward(fused, self.head)

    def batch_loss(self, windows, target: str, dropout_rng=None, return_flags=False):
        """Pooled masked loss over a batch of clip windows.

        Predictions and labels are concatenated frame-wise; padded frames
        are excluded through the validity mask, contributing zero
        gradient.
        """
        preds = []
        truths = []
        valids = []
        for win in windows:
            preds.append(self.forward(win, dropout_rng=dropout_rng))
            truths.append(getattr(win, target))
            valids.append(win.valid)
        pred = preds[0] if len(preds) == 1 else ad.hstack(preds)
        truth = np.concatenate(truths).reshape(1, -1)
        valid = np.concatenate(valids).reshape(1, -1)
        kwargs = {f"pred_{target}": pred, f"truth_{target}": truth}
        return ccc_loss(valid=valid, return_flags=return_flags, **kwargs)

    def snapshot(self) -> dict:
        return {name: p.value.copy() for name, p in self.parameters().items()}

    def load_snapshot(self, stored: dict):
        params = self.parameters()
        if set(stored) != set(params):
            missing = set(params) - set(stored)
            extra = set(stored) - set(params)
            raise KeyError(f"snapshot mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, p in params.items():
            p.value[...] = stored[name]
