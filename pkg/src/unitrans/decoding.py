"""Inference: per-branch beam search and quality-token branch selection.

Branch selection runs a single decoder step per branch (prefix = BOS), reads
the softmax probability of the quality token Y, and picks the argmax branch;
generation then continues on that branch only, with Y forced as its first
decoded position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigurationError
from .model import S2utModel
from .synthworld import FeatureSequence


@dataclass
class Hypothesis:
    """One decoded sequence. tokens excludes BOS/PAD and any forced prefix;
    a terminal EOS is kept when decoding finished naturally."""

    tokens: list[int]
    score: float  # length-normalized log-probability of the generated tokens
    branch_id: str
    raw_logprob: float = 0.0
    truncated: bool = False
    branch_probs: dict[str, float] = field(default_factory=dict)  # p(Y) per branch


def _source_tensor(model: S2utModel, source) -> torch.Tensor:
    frames = source.frames if isinstance(source, FeatureSequence) else source
    arr = np.asarray(frames, dtype=np.float32)
    return torch.from_numpy(arr).unsqueeze(0)


def _branch_label(model: S2utModel, branch: int, labels: list[str] | None) -> str:
    if labels and branch < len(labels):
        return labels[branch]
    return f"branch{branch}"


@torch.no_grad()
def beam_search(
    model: S2utModel,
    branch: int,
    source,
    beam: int = 10,
    max_len: int = 160,
    forced_prefix: list[int] | None = None,
    length_norm: float = 1.0,
    branch_labels: list[str] | None = None,
) -> Hypothesis:
    """Length-normalized beam search on one decoder branch.

    Candidates are ranked by cumulative log-probability while the beam is
    open; finished hypotheses are compared on score = logprob / len^norm.
    Ties break on token ids, so decoding is deterministic. A hypothesis that
    hits max_len without EOS is returned flagged truncated.
    """
    if beam < 1:
        raise ConfigurationError("beam must be >= 1")
    model.eval()
    cfg = model.cfg
    frames = _source_tensor(model, source)
    memory = model.encode(frames)

    banned = (cfg.pad_id, cfg.bos_id, cfg.y_id, cfg.n_id)  # generation emits units/EOS only
    prefix = [cfg.bos_id] + list(forced_prefix or [])
    label = _branch_label(model, branch, branch_labels)

    # pool entries: (normalized score, tokens, raw logprob, truncated)
    pool: list[tuple[float, tuple[int, ...], float, bool]] = []
    actives: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]

    for _ in range(max_len):
        inputs = torch.tensor(
            [prefix + list(tokens) for _, tokens in actives], dtype=torch.long
        )
        mem = memory.expand(len(actives), -1, -1)
        logits = model.decode_branch(branch, inputs, mem)
        logprobs = torch.log_softmax(logits[:, -1, :].double(), dim=-1).numpy()

        candidates: list[tuple[float, tuple[int, ...]]] = []
        for (logp, tokens), row in zip(actives, logprobs):
            for v in range(cfg.unit_vocab):
                if v in banned:
                    continue
                candidates.append((logp + float(row[v]), tokens + (v,)))
        candidates.sort(key=lambda c: (-c[0], c[1]))

        actives = []
        for logp, tokens in candidates[:beam]:
            if tokens[-1] == cfg.eos_id:
                score = logp / max(1, len(tokens)) ** length_norm
                pool.append((score, tokens, logp, False))
            else:
                actives.append((logp, tokens))
        if not actives:
            break

    for logp, tokens in actives:
        score = logp / max(1, len(tokens)) ** length_norm
        pool.append((score, tokens, logp, True))

    score, tokens, raw, truncated = min(pool, key=lambda h: (-h[0], h[1]))
    return Hypothesis(
        tokens=list(tokens), score=score, branch_id=label, raw_logprob=raw, truncated=truncated
    )


@torch.no_grad()
def select_branch(
    model: S2utModel, source, branch_labels: list[str] | None = None
) -> tuple[int, dict[str, float]]:
    """Probability of the quality token Y after BOS, per branch; argmax wins.

    Ties go to the lowest branch index. No autoregressive continuation runs
    for non-selected branches.
    """
    model.eval()
    cfg = model.cfg
    frames = _source_tensor(model, source)
    memory = model.encode(frames)
    bos = torch.tensor([[cfg.bos_id]], dtype=torch.long)
    probs: dict[str, float] = {}
    best_branch = 0
    best_p = -1.0
    for b in range(cfg.branch_count):
        logits = model.decode_branch(b, bos, memory)
        p_y = float(torch.softmax(logits[0, -1, :].double(), dim=-1)[cfg.y_id].item())
        probs[_branch_label(model, b, branch_labels)] = p_y
        if p_y > best_p:
            best_p = p_y
            best_branch = b
    return best_branch, probs


def strip_specials(tokens: list[int], num_units: int) -> list[int]:
    return [t for t in tokens if t < num_units]


def translate(
    model: S2utModel,
    source,
    beam: int = 10,
    max_len: int = 160,
    length_norm: float = 1.0,
    branch_labels: list[str] | None = None,
) -> Hypothesis:
    """Branch selection followed by beam search with the quality token forced.

    Single-branch models decode directly. Output tokens are reduced units
    with all special tokens stripped.
    """
    cfg = model.cfg
    if cfg.branch_count >= 2:
        branch, probs = select_branch(model, source, branch_labels)
        hyp = beam_search(
            model,
            branch,
            source,
            beam=beam,
            max_len=max_len,
            forced_prefix=[cfg.y_id],
            length_norm=length_norm,
            branch_labels=branch_labels,
        )
        hyp.branch_probs = probs
    else:
        hyp = beam_search(
            model, 0, source, beam=beam, max_len=max_len, length_norm=length_norm,
            branch_labels=branch_labels,
        )
        _, probs = select_branch(model, source, branch_labels)
        hyp.branch_probs = probs
    hyp.tokens = strip_specials(hyp.tokens, cfg.num_units)
    return hyp
