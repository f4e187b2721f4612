"""Shared-encoder / multi-branch-decoder sequence model.

One transformer encoder consumes source feature frames; B independent
autoregressive transformer decoders predict reduced-unit sequences over a
vocabulary of K units plus the specials {PAD, BOS, EOS, Y, N}. Branch b sees
only its own targets; the encoder is shared by all branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .errors import ConfigurationError, DataError

N_SPECIALS = 5  # PAD, BOS, EOS, Y, N appended after the K unit ids


@dataclass(frozen=True)
class ModelConfig:
    unit_vocab: int  # K + N_SPECIALS
    branch_count: int = 1
    encoder_layers: int = 2
    decoder_layers: int = 2
    hidden_dim: int = 128
    attention_heads: int = 4
    feedforward_dim: int = 0  # 0 means 4 * hidden_dim
    dropout: float = 0.1
    feature_dim: int = 16
    max_positions: int = 512

    def validate(self):
        if self.branch_count < 1:
            raise ConfigurationError("branch_count must be >= 1")
        if self.unit_vocab < N_SPECIALS + 2:
            raise ConfigurationError("unit_vocab must cover >= 2 units plus specials")
        if self.hidden_dim % self.attention_heads != 0:
            raise ConfigurationError("hidden_dim must be divisible by attention_heads")
        for name in ("encoder_layers", "decoder_layers", "hidden_dim", "attention_heads", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")

    # token id layout: units 0..K-1, then the specials
    @property
    def num_units(self) -> int:
        return self.unit_vocab - N_SPECIALS

    @property
    def pad_id(self) -> int:
        return self.num_units

    @property
    def bos_id(self) -> int:
        return self.num_units + 1

    @property
    def eos_id(self) -> int:
        return self.num_units + 2

    @property
    def y_id(self) -> int:
        return self.num_units + 3

    @property
    def n_id(self) -> int:
        return self.num_units + 4

    @property
    def ffn_dim(self) -> int:
        return self.feedforward_dim if self.feedforward_dim else 4 * self.hidden_dim


class SinusoidalPositions(nn.Module):
    """Fixed sine/cosine position table added to the input embeddings."""

    def __init__(self, dim: int, max_positions: int):
        super().__init__()
        pos = torch.arange(max_positions).unsqueeze(1)
        freq = torch.exp(torch.arange(0, dim, 2) * (-math.log(10000.0) / dim))
        table = torch.zeros(max_positions, dim)
        table[:, 0::2] = torch.sin(pos * freq)
        table[:, 1::2] = torch.cos(pos * freq)
        self.register_buffer("table", table, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.size(1) > self.table.size(0):
            raise DataError(f"sequence length {x.size(1)} exceeds positional table")
        return x + self.table[: x.size(1)].to(x.dtype)


class SpeechEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.input_proj = nn.Linear(cfg.feature_dim, cfg.hidden_dim)
        self.positions = SinusoidalPositions(cfg.hidden_dim, cfg.max_positions)
        self.dropout = nn.Dropout(cfg.dropout)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.hidden_dim,
            nhead=cfg.attention_heads,
            dim_feedforward=cfg.ffn_dim,
            dropout=cfg.dropout,
            batch_first=True,
            norm_first=True,
        )
        self.layers = nn.TransformerEncoder(layer, cfg.encoder_layers, enable_nested_tensor=False)

    def forward(self, frames: torch.Tensor, src_pad_mask: torch.Tensor | None = None):
        x = self.dropout(self.positions(self.input_proj(frames)))
        return self.layers(x, src_key_padding_mask=src_pad_mask)


class BranchDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.embed = nn.Embedding(cfg.unit_vocab, cfg.hidden_dim, padding_idx=cfg.pad_id)
        self.positions = SinusoidalPositions(cfg.hidden_dim, cfg.max_positions)
        self.dropout = nn.Dropout(cfg.dropout)
        layer = nn.TransformerDecoderLayer(
            d_model=cfg.hidden_dim,
            nhead=cfg.attention_heads,
            dim_feedforward=cfg.ffn_dim,
            dropout=cfg.dropout,
            batch_first=True,
            norm_first=True,
        )
        self.layers = nn.TransformerDecoder(layer, cfg.decoder_layers)
        self.output = nn.Linear(cfg.hidden_dim, cfg.unit_vocab)

    def forward(
        self,
        tokens: torch.Tensor,
        memory: torch.Tensor,
        memory_pad_mask: torch.Tensor | None = None,
        tgt_pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        x = self.dropout(self.positions(self.embed(tokens)))
        causal = torch.triu(
            torch.ones(tokens.size(1), tokens.size(1), dtype=torch.bool, device=tokens.device),
            diagonal=1,
        )
        out = self.layers(
            x,
            memory,
            tgt_mask=causal,
            tgt_key_padding_mask=tgt_pad_mask,
            memory_key_padding_mask=memory_pad_mask,
        )
        return self.output(out)


class S2utModel(nn.Module):
    """Shared encoder with branch_count independent decoders."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = SpeechEncoder(cfg)
        self.decoders = nn.ModuleList(BranchDecoder(cfg) for _ in range(cfg.branch_count))

    def encode(self, frames: torch.Tensor, src_pad_mask: torch.Tensor | None = None):
        return self.encoder(frames, src_pad_mask)

    def decode_branch(
        self,
        branch: int,
        tokens: torch.Tensor,
        memory: torch.Tensor,
        memory_pad_mask: torch.Tensor | None = None,
        tgt_pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if tokens.max().item() >= self.cfg.unit_vocab or tokens.min().item() < 0:
            raise DataError("target token id out of vocabulary range")
        return self.decoders[branch](tokens, memory, memory_pad_mask, tgt_pad_mask)

    def forward(
        self,
        frames: torch.Tensor,
        branch_tokens: dict[int, torch.Tensor],
        src_pad_mask: torch.Tensor | None = None,
        tgt_pad_masks: dict[int, torch.Tensor] | None = None,
    ) -> dict[int, torch.Tensor]:
        """Teacher-forced logits per requested branch; encoder runs once."""
        memory = self.encode(frames, src_pad_mask)
        out: dict[int, torch.Tensor] = {}
        for branch, tokens in branch_tokens.items():
            tgt_pad = tgt_pad_masks.get(branch) if tgt_pad_masks else None
            out[branch] = self.decode_branch(branch, tokens, memory, src_pad_mask, tgt_pad)
        return out


def init_model(cfg: ModelConfig, seed: int) -> S2utModel:
    """Deterministic initialization: shared encoder, independent branch weights."""
    torch.manual_seed(seed)
    return S2utModel(cfg)


def branch_cross_entropy(
    logits: torch.Tensor, labels: torch.Tensor, pad_id: int
) -> tuple[torch.Tensor, int]:
    """Summed token cross-entropy and the non-pad token count for one branch."""
    flat = logits.reshape(-1, logits.size(-1))
    ce = nn.functional.cross_entropy(
        flat, labels.reshape(-1), ignore_index=pad_id, reduction="sum"
    )
    count = int((labels != pad_id).sum().item())
    return ce, count


def multi_branch_loss(
    logits_by_branch: dict[int, torch.Tensor],
    labels_by_branch: dict[int, torch.Tensor],
    pad_id: int,
) -> torch.Tensor:
    """Sum over branches of the branch's mean token cross-entropy.

    The quality token occupies a normal target position and is included.
    """
    total = None
    for branch, logits in logits_by_branch.items():
        ce, count = branch_cross_entropy(logits, labels_by_branch[branch], pad_id)
        term = ce / max(count, 1)
        total = term if total is None else total + term
    if total is None:
        raise DataError("loss requires at least one branch")
    return total
