"""Training loop: AdamW with linear warmup then inverse-square-root decay,
gradient accumulation that exactly reproduces large-batch updates, and
checkpointing at the best dev loss.
"""

from __future__ import annotations

import copy
import io
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, DataError, TrainingError
from .model import ModelConfig, S2utModel, init_model, multi_branch_loss
from .targetprep import Dataset, QualityToken
from .unitizer import ReducedUnits

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    warmup_steps: int = 500
    warmup_start_lr: float = 1e-7
    grad_accum: int = 4
    max_steps: int = 5000
    batch_size: int = 16
    seed: int = 0
    weight_decay: float = 0.01
    eval_every: int = 100  # dev-loss cadence in optimizer steps; 0 keeps final weights
    log_every: int = 50

    def validate(self):
        if self.learning_rate < 0 or self.warmup_start_lr < 0:
            raise ConfigurationError("learning rates must be >= 0")
        for name in ("warmup_steps", "grad_accum", "max_steps", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.warmup_steps > self.max_steps:
            raise ConfigurationError("warmup_steps must be <= max_steps")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")


def lr_at(step: int, tc: TrainConfig) -> float:
    """Linear warmup from warmup_start_lr to learning_rate, then sqrt decay.

    lr(0) = warmup_start_lr, lr(warmup_steps) = learning_rate, and
    lr(s) = learning_rate * sqrt(warmup_steps / s) beyond the warmup.
    """
    if step <= tc.warmup_steps:
        frac = step / tc.warmup_steps
        return tc.warmup_start_lr + (tc.learning_rate - tc.warmup_start_lr) * frac
    return tc.learning_rate * math.sqrt(tc.warmup_steps / step)


def tokenize_target(
    cfg: ModelConfig, token: QualityToken | None, reduced: ReducedUnits
) -> list[int]:
    """Label stream for one target: [quality?] units EOS."""
    for u in reduced.units:
        if not 0 <= u < cfg.num_units:
            raise DataError(f"unit id {u} overflows the {cfg.num_units}-unit vocabulary")
    stream: list[int] = []
    if token is not None:
        stream.append(cfg.y_id if token == QualityToken.Y else cfg.n_id)
    stream.extend(reduced.units)
    stream.append(cfg.eos_id)
    return stream


@dataclass
class Batch:
    frames: torch.Tensor  # (B, T, D)
    src_pad: torch.Tensor  # (B, T) bool, True at padding
    inputs: dict[int, torch.Tensor]  # per-branch decoder inputs (B, L)
    labels: dict[int, torch.Tensor]  # per-branch labels (B, L)
    tgt_pads: dict[int, torch.Tensor]

    def branch_token_counts(self, pad_id: int) -> dict[int, int]:
        return {b: int((lab != pad_id).sum().item()) for b, lab in self.labels.items()}


def collate(examples, dataset: Dataset, cfg: ModelConfig) -> Batch:
    """Pad a list of MultiTargetExamples into tensors."""
    n = len(examples)
    max_t = max(ex.source.frame_count for ex in examples)
    frames = torch.zeros(n, max_t, cfg.feature_dim)
    src_pad = torch.ones(n, max_t, dtype=torch.bool)
    for i, ex in enumerate(examples):
        t = ex.source.frame_count
        frames[i, :t] = torch.from_numpy(np.asarray(ex.source.frames, dtype=np.float32))
        src_pad[i, :t] = False

    inputs: dict[int, torch.Tensor] = {}
    labels: dict[int, torch.Tensor] = {}
    tgt_pads: dict[int, torch.Tensor] = {}
    branches = (
        list(range(len(dataset.branch_systems))) if dataset.mode == "multitask" else [0]
    )
    for b in branches:
        streams = []
        for ex in examples:
            if dataset.mode == "multitask":
                token, reduced = ex.targets[dataset.branch_systems[b]]
            else:
                (token, reduced) = next(iter(ex.targets.values()))
            streams.append(tokenize_target(cfg, token, reduced))
        max_l = max(len(s) for s in streams)
        inp = torch.full((n, max_l), cfg.pad_id, dtype=torch.long)
        lab = torch.full((n, max_l), cfg.pad_id, dtype=torch.long)
        for i, s in enumerate(streams):
            inp[i, 0] = cfg.bos_id
            if len(s) > 1:
                inp[i, 1 : len(s)] = torch.tensor(s[:-1], dtype=torch.long)
            lab[i, : len(s)] = torch.tensor(s, dtype=torch.long)
        inputs[b] = inp
        labels[b] = lab
        tgt_pads[b] = inp == cfg.pad_id
    return Batch(frames=frames, src_pad=src_pad, inputs=inputs, labels=labels, tgt_pads=tgt_pads)


@dataclass
class Checkpoint:
    """Serializable training result: config, weights, step, RNG state."""

    config: ModelConfig
    weights: dict[str, torch.Tensor]
    step: int
    rng_state: bytes
    branch_systems: list[str] = field(default_factory=list)
    dev_loss: float | None = None

    def build_model(self) -> S2utModel:
        model = S2utModel(self.config)
        model.load_state_dict(self.weights)
        model.eval()
        return model


def save_checkpoint(ckpt: Checkpoint, path: str | Path):
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(ckpt.config),
        "weights": ckpt.weights,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "branch_systems": ckpt.branch_systems,
        "dev_loss": ckpt.dev_loss,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    payload = torch.load(path, weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format_version {payload.get('format_version')}")
    return Checkpoint(
        config=ModelConfig(**payload["config"]),
        weights=payload["weights"],
        step=payload["step"],
        rng_state=payload["rng_state"],
        branch_systems=payload["branch_systems"],
        dev_loss=payload["dev_loss"],
    )


def _batch_stream(n_examples: int, batch_size: int, rng: np.random.Generator):
    """Endless deterministic stream of index batches, reshuffled per epoch."""
    while True:
        order = rng.permutation(n_examples)
        for start in range(0, n_examples, batch_size):
            yield order[start : start + batch_size]


def _dataset_loss(model: S2utModel, dataset: Dataset, cfg: ModelConfig, batch_size: int) -> float:
    """Mean-per-branch loss summed over branches, computed over a full dataset."""
    model.eval()
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    with torch.no_grad():
        for start in range(0, len(dataset.examples), batch_size):
            batch = collate(dataset.examples[start : start + batch_size], dataset, cfg)
            logits = model(batch.frames, batch.inputs, batch.src_pad, batch.tgt_pads)
            for b, lg in logits.items():
                flat = lg.reshape(-1, lg.size(-1))
                ce = torch.nn.functional.cross_entropy(
                    flat, batch.labels[b].reshape(-1), ignore_index=cfg.pad_id, reduction="sum"
                )
                sums[b] = sums.get(b, 0.0) + float(ce.item())
                counts[b] = counts.get(b, 0) + int((batch.labels[b] != cfg.pad_id).sum().item())
    model.train()
    return sum(sums[b] / max(counts[b], 1) for b in sums)


def train(
    model: S2utModel,
    dataset: Dataset,
    tc: TrainConfig,
    dev_dataset: Dataset | None = None,
    log_path: str | Path | None = None,
) -> Checkpoint:
    """Train in place and return the best-dev checkpoint (final weights if no dev).

    One optimizer step consumes grad_accum micro-batches; losses are
    normalized by the whole window's per-branch token counts, so accum=k with
    batch m reproduces accum=1 with batch k*m up to float associativity.
    """
    tc.validate()
    cfg = model.cfg
    if dataset.branch_count != cfg.branch_count:
        raise ConfigurationError(
            f"dataset implies {dataset.branch_count} branches, model has {cfg.branch_count}"
        )
    torch.manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)
    stream = _batch_stream(len(dataset.examples), tc.batch_size, rng)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=tc.warmup_start_lr, weight_decay=tc.weight_decay
    )
    model.train()

    log_lines: list[str] = []
    best_state: dict[str, torch.Tensor] | None = None
    best_loss = math.inf
    best_step = 0
    last_eval = -1

    def snapshot():
        return {k: v.detach().clone() for k, v in model.state_dict().items()}

    def maybe_eval(step: int):
        nonlocal best_state, best_loss, best_step, last_eval
        if dev_dataset is None or step == last_eval:
            return
        last_eval = step
        loss = _dataset_loss(model, dev_dataset, cfg, tc.batch_size)
        if loss < best_loss:
            best_loss = loss
            best_step = step
            best_state = snapshot()

    for step in range(tc.max_steps):
        window = [
            collate([dataset.examples[i] for i in next(stream)], dataset, cfg)
            for _ in range(tc.grad_accum)
        ]
        window_counts: dict[int, int] = {}
        for batch in window:
            for b, c in batch.branch_token_counts(cfg.pad_id).items():
                window_counts[b] = window_counts.get(b, 0) + c

        optimizer.zero_grad()
        step_loss = 0.0
        for batch in window:
            logits = model(batch.frames, batch.inputs, batch.src_pad, batch.tgt_pads)
            loss = None
            for b, lg in logits.items():
                flat = lg.reshape(-1, lg.size(-1))
                ce = torch.nn.functional.cross_entropy(
                    flat, batch.labels[b].reshape(-1), ignore_index=cfg.pad_id, reduction="sum"
                )
                term = ce / max(window_counts.get(b, 1), 1)
                loss = term if loss is None else loss + term
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at step {step}")
            loss.backward()
            step_loss += float(loss.item())

        lr = lr_at(step, tc)
        for group in optimizer.param_groups:
            group["lr"] = lr
        optimizer.step()

        if tc.log_every and (step % tc.log_every == 0 or step == tc.max_steps - 1):
            log_lines.append(f"{step}\t{step_loss:.6f}\t{lr:.8g}")
        if tc.eval_every and (step + 1) % tc.eval_every == 0:
            maybe_eval(step + 1)

    maybe_eval(tc.max_steps)
    if log_path is not None:
        Path(log_path).write_text("\n".join(log_lines) + "\n")

    if best_state is None:
        best_state = snapshot()
        best_step = tc.max_steps
        best_loss = math.nan

    buf = io.BytesIO()
    torch.save(torch.get_rng_state(), buf)
    ckpt = Checkpoint(
        config=cfg,
        weights=best_state,
        step=best_step,
        rng_state=buf.getvalue(),
        branch_systems=list(dataset.branch_systems),
        dev_loss=None if math.isnan(best_loss) else best_loss,
    )
    model.load_state_dict(best_state)
    return ckpt
