"""Deterministic training loop.

Adam with classic L2 weight decay, a linear learning-rate warmup
followed by reduce-on-plateau decay driven by validation concordance,
early stopping against a best-parameter snapshot, and clip-level k-fold
cross-validation.  Every random choice (weight init, batch order,
dropout masks, fold assignment) derives from the config seed, so a full
run is a pure function of (dataset, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, NumericError, ParameterError
from .fusion import MODES
from .metrics import EvalReport, ccc_flagged
from .model import EmotionModel, ModelConfig
from .synthdata import window
from .temporal import TcnConfig

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    mode: str = "RJCA"
    depth: int = 1
    temperature: float = 0.1
    batch_size: int = 12
    init_lr: float = 1e-4
    min_lr: float = 1e-8
    warmup_epochs: int = 5
    plateau_patience: int = 5
    plateau_factor: float = 0.1
    weight_decay: float = 5e-4
    dropout: float = 0.5
    max_epochs: int = 100
    early_stop_patience: int = 10
    folds: int = 6
    seed: int = 0
    target: str = "valence"
    window_len: int = 64
    window_stride: int = 43
    joint_projection: bool = True
    tcn_levels: int = 2
    tcn_kernel: int = 3
    head_hidden: tuple = (16,)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.target not in ("valence", "arousal"):
            raise ConfigError(f"target must be 'valence' or 'arousal', got {self.target!r}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.min_lr > self.init_lr:
            raise ConfigError(f"min_lr {self.min_lr} exceeds init_lr {self.init_lr}")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        for name in ("depth", "batch_size", "max_epochs", "window_len", "window_stride", "folds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")

    def model_config(self, dim_audio, dim_visual):
        return ModelConfig(
            mode=self.mode,
            dim_audio=dim_audio,
            dim_visual=dim_visual,
            seq_len=self.window_len,
            depth=self.depth,
            temperature=self.temperature,
            joint_projection=self.joint_projection,
            tcn=TcnConfig(levels=self.tcn_levels, kernel_size=self.tcn_kernel),
            head_hidden=tuple(self.head_hidden),
            dropout=self.dropout,
        )

    def model_rng(self):
        # deliberately independent of mode: gate weights are zero-init and
        # consume no draws, so every mode at a given (seed, depth, target)
        # starts from identical encoder/attention/head weights
        target_index = 0 if self.target == "valence" else 1
        return np.random.default_rng(np.random.SeedSequence([self.seed, self.depth, target_index]))


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, state: AdamState, lr: float, weight_decay: float = 0.0):
    """One Adam update with bias correction; decay enters the gradient
    (classic L2 form)."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        grad = p.grad
        if grad is None:
            raise ParameterError(f"adam_step: no gradient for {name!r}; run backward first")
        if not np.isfinite(grad).all():
            raise NumericError(f"adam_step: non-finite gradient for {name!r}")
        if weight_decay:
            grad = grad + weight_decay * p.value
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * grad * grad
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# -- scheduler ---------------------------------------------------------------


@dataclass
class SchedulerState:
    """Warmup-then-plateau bookkeeping; ``lr`` is the post-warmup base."""

    lr: float
    epoch: int = 0  # completed epochs
    best: float = -math.inf
    counter: int = 0
    drops: int = 0


def lr_for_epoch(state: SchedulerState, config: TrainConfig) -> float:
    """Learning rate to apply during epoch ``state.epoch``."""
    if state.epoch < config.warmup_epochs:
        ramp = state.lr * (state.epoch + 1) / config.warmup_epochs
        return max(ramp, config.min_lr)
    return state.lr


def scheduler_step(state: SchedulerState, val_ccc: float, config: TrainConfig) -> float:
    """Consume one epoch's validation score; returns the next epoch's lr.

    During warmup only the best score is tracked.  Afterwards, ``patience``
    consecutive epochs without a strictly better score multiply the rate
    by ``plateau_factor`` (clamped at ``min_lr``) and reset the counter.
    """
    if val_ccc > state.best:
        state.best = val_ccc
        state.counter = 0
    elif state.epoch >= config.warmup_epochs:
        state.counter += 1
        if state.counter >= config.plateau_patience:
            dropped = max(state.lr * config.plateau_factor, config.min_lr)
            if dropped < state.lr:
                state.drops += 1
            state.lr = dropped
            state.counter = 0
    state.epoch += 1
    return lr_for_epoch(state, config)


# -- training ----------------------------------------------------------------


@dataclass
class TrainResult:
    model: EmotionModel
    history: list  # (epoch, lr, train_loss, val_ccc)
    best_val_ccc: float
    best_epoch: int

    def history_rows(self):
        rows = [["epoch", "lr", "train_loss", "val_ccc"]]
        for epoch, lr, loss, ccc in self.history:
            rows.append([str(epoch), repr(float(lr)), repr(float(loss)), repr(float(ccc))])
        return rows


def _pooled_ccc(model: EmotionModel, windows, target: str):
    preds = []
    truths = []
    for win in windows:
        out = model.forward(win).value[0]
        keep = win.valid
        preds.append(out[keep])
        truths.append(getattr(win, target)[keep])
    value, degenerate = ccc_flagged(np.concatenate(preds), np.concatenate(truths))
    return value, degenerate


def train(train_clips, val_clips, config: TrainConfig) -> TrainResult:
    """Full training run; deterministic given clips and config."""
    if not train_clips or not val_clips:
        raise ConfigError("train: both splits must be non-empty")
    dim_audio = train_clips[0].audio.shape[0]
    dim_visual = train_clips[0].visual.shape[0]
    train_windows = [
        w for clip in train_clips for w in window(clip, config.window_len, config.window_stride)
    ]
    val_windows = [
        w for clip in val_clips for w in window(clip, config.window_len, config.window_len)
    ]

    model = EmotionModel(config.model_config(dim_audio, dim_visual), rng=config.model_rng())
    adam = AdamState()
    sched = SchedulerState(lr=config.init_lr)
    best_snapshot = model.snapshot()
    best_ccc = -math.inf
    best_epoch = 0
    stale = 0
    history = []

    for epoch in range(config.max_epochs):
        lr = lr_for_epoch(sched, config)
        order = np.random.default_rng(
            np.random.SeedSequence([config.seed, 1000 + epoch])
        ).permutation(len(train_windows))
        batch_losses = []
        for b in range(0, len(order), config.batch_size):
            batch = [train_windows[i] for i in order[b : b + config.batch_size]]
            dropout_rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, 2000 + epoch, b])
            )
            loss = model.batch_loss(batch, config.target, dropout_rng=dropout_rng)
            loss.backward()
            batch_losses.append(loss.item())
            adam_step(model.parameters(), adam, lr, config.weight_decay)
        val_ccc, _ = _pooled_ccc(model, val_windows, config.target)
        history.append((epoch, lr, float(np.mean(batch_losses)), val_ccc))
        if val_ccc > best_ccc:
            best_ccc = val_ccc
            best_epoch = epoch
            best_snapshot = model.snapshot()
            stale = 0
        else:
            stale += 1
        scheduler_step(sched, val_ccc, config)
        if stale >= config.early_stop_patience:
            break

    model.load_snapshot(best_snapshot)
    return TrainResult(model=model, history=history, best_val_ccc=best_ccc, best_epoch=best_epoch)


def _clip_predictions(model, clip, config):
    """Stitched per-frame predictions for one clip (non-overlapping windows)."""
    preds = np.empty(clip.frames)
    for win in window(clip, config.window_len, config.window_len):
        out = model.forward(win).value[0]
        keep = win.valid
        start = win.frame_offset - clip.frame_offset
        preds[start : start + int(keep.sum())] = out[keep]
    return preds


def evaluate(model: EmotionModel, clips, config: TrainConfig, fold=None, executor=None):
    """Pooled concordance over every frame of every clip, plus prediction
    rows (clip, frame, pred, truth) for the trained target channel."""
    if not clips:
        raise ConfigError("evaluate: no clips given")
    if executor is None:
        all_preds = [_clip_predictions(model, clip, config) for clip in clips]
    else:
        futures = [executor.submit(_clip_predictions, model, clip, config) for clip in clips]
        all_preds = [f.result() for f in futures]

    rows = []
    per_clip = {}
    pooled_pred = []
    pooled_truth = []
    for clip, preds in zip(clips, all_preds):
        truth = getattr(clip, config.target)
        for j in range(clip.frames):
            rows.append(
                [clip.clip_id, str(clip.frame_offset + j), repr(float(preds[j])), repr(float(truth[j]))]
            )
        per_clip[clip.clip_id], _ = ccc_flagged(preds, truth)
        pooled_pred.append(preds)
        pooled_truth.append(truth)
    value, degenerate = ccc_flagged(np.concatenate(pooled_pred), np.concatenate(pooled_truth))
    report = EvalReport(
        ccc_valence=value if config.target == "valence" else None,
        ccc_arousal=value if config.target == "arousal" else None,
        frame_count=sum(clip.frames for clip in clips),
        fold=fold,
        per_clip=per_clip,
        degenerate=degenerate,
    )
    return report, rows


# -- cross-validation --------------------------------------------------------


@dataclass
class FoldOutcome:
    fold: int
    report: EvalReport
    result: TrainResult
    predictions: list
    val_clip_ids: list

    @property
    def val_ccc(self):
        return self.result.best_val_ccc


def fold_assignments(num_clips: int, config: TrainConfig):
    """Deterministic clip-level partition into ``folds`` contiguous chunks
    of a seeded permutation."""
    if config.folds > num_clips:
        raise ConfigError(f"cannot make {config.folds} folds from {num_clips} clips")
    perm = np.random.default_rng(
        np.random.SeedSequence([config.seed, 3000])
    ).permutation(num_clips)
    return [sorted(chunk.tolist()) for chunk in np.array_split(perm, config.folds)]


def cross_validate(clips, config: TrainConfig):
    """Train once per fold; every clip validates exactly once."""
    outcomes = []
    for fold, val_idx in enumerate(fold_assignments(len(clips), config)):
        val_set = set(val_idx)
        train_clips = [c for i, c in enumerate(clips) if i not in val_set]
        val_clips = [clips[i] for i in val_idx]
        result = train(train_clips, val_clips, config)
        report, predictions = evaluate(result.model, val_clips, config, fold=fold)
        outcomes.append(
            FoldOutcome(
                fold=fold,
                report=report,
                result=result,
                predictions=predictions,
                val_clip_ids=[c.clip_id for c in val_clips],
            )
        )
    return outcomes


def best_fold(outcomes) -> int:
    return max(range(len(outcomes)), key=lambda i: outcomes[i].val_ccc)
