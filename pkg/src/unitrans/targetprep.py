"""Target preparation: the toy ASR, per-system CER tables, quality tokens,
and assembly of single / combined / multi-task training sets.

The toy ASR inverts the synthesis channel at unit level. Its inventory maps
each phoneme to the reduced-unit subsequences that realized it in training
data (boundaries known from the generative alignment), with frequencies.
Decoding is a two-stage dynamic program: segment reduced units into
phonemes minimizing substitution cost minus log frequency, then parse the
phoneme sequence back into graphemes against the fixed codes.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, DataError
from .metrics import cer, edit_distance
from .synthworld import FeatureSequence, ToyWorld
from .unitizer import Codebook, ReducedUnits, UnitSequence, encode_units, reduce_units

UNIT_SUB_COST = 4.0  # per unit edit when matching an inventory subsequence
PHONE_SUB_COST = 1.0  # per phoneme mismatch when parsing grapheme codes
PHONE_SKIP_COST = 1.25  # dropping an unparseable phoneme


class QualityToken(str, Enum):
    Y = "Y"
    N = "N"


@dataclass
class AsrTrainingPair:
    """Frame-level units plus the generative phoneme alignment for one target."""

    units: UnitSequence
    phone_spans: list[tuple[int, int, int]]
    target_text: str


@dataclass
class ToyAsr:
    """Unit-to-text decoder built from aligned training pairs across systems."""

    inventory: dict[int, dict[tuple[int, ...], int]]
    codes: dict[str, tuple[int, ...]]
    decode_beam: int = 8
    _entries: list[tuple[tuple[int, ...], int, float]] = field(default_factory=list, repr=False)
    _match_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for phoneme, variants in sorted(self.inventory.items()):
            total = sum(variants.values())
            for sub, count in sorted(variants.items()):
                self._entries.append((sub, phoneme, -math.log(count / total)))

    @property
    def max_entry_len(self) -> int:
        return max(len(sub) for sub, _, _ in self._entries)


def make_asr_pairs(
    features: Iterable[FeatureSequence], codebook: Codebook, texts: dict[str, str]
) -> list[AsrTrainingPair]:
    """Encode synthesized features and keep their phoneme alignments."""
    pairs = []
    for fs in features:
        if fs.phone_spans is None:
            raise DataError(f"{fs.utt_id}/{fs.system_id}: missing phoneme alignment")
        units = encode_units(fs.frames, codebook, utt_id=fs.utt_id, system_id=fs.system_id)
        pairs.append(
            AsrTrainingPair(
                units=units, phone_spans=fs.phone_spans, target_text=texts[fs.utt_id]
            )
        )
    return pairs


def build_toy_asr(
    pairs: Iterable[AsrTrainingPair], world: ToyWorld, decode_beam: int = 8
) -> ToyAsr:
    """Collect per-phoneme reduced-unit realizations with frequencies."""
    inventory: dict[int, Counter] = defaultdict(Counter)
    for pair in pairs:
        units = pair.units.units
        for phoneme, start, end in pair.phone_spans:
            sub = tuple(reduce_units(units[start:end]).units)
            if sub:
                inventory[phoneme][sub] += 1
    missing = [p for p in range(world.phoneme_count) if not inventory.get(p)]
    if missing:
        raise DataError(f"phonemes {missing} have no training realizations")
    return ToyAsr(
        inventory={p: dict(c) for p, c in inventory.items()},
        codes=dict(world.codes),
        decode_beam=decode_beam,
    )


def _segment_phonemes(asr: ToyAsr, units: Sequence[int]) -> tuple[int, ...]:
    """Viterbi segmentation of reduced units into phonemes.

    Beam keeps the decode_beam best (cost, phonemes) states per position;
    window lengths cover each inventory entry's length +/- 1 so boundary
    merges and noise insertions stay reachable.
    """
    n = len(units)
    if n == 0:
        return ()
    units = tuple(units)
    beams: list[list[tuple[float, tuple[int, ...]]]] = [[] for _ in range(n + 1)]
    beams[0] = [(0.0, ())]
    max_win = asr.max_entry_len + 1
    cache = asr._match_cache
    for j in range(1, n + 1):
        candidates: list[tuple[float, tuple[int, ...]]] = []
        for length in range(1, min(max_win, j) + 1):
            prev = beams[j - length]
            if not prev:
                continue
            window = units[j - length : j]
            for sub, phoneme, prior in asr._entries:
                if abs(len(sub) - length) > 1:
                    continue
                key = (sub, window)
                match = cache.get(key)
                if match is None:
                    match = UNIT_SUB_COST * edit_distance(sub, window)
                    cache[key] = match
                step = match + prior
                for cost, phones in prev:
                    candidates.append((cost + step, phones + (phoneme,)))
        candidates.sort(key=lambda s: (s[0], s[1]))
        beams[j] = candidates[: asr.decode_beam]
    return beams[n][0][1]


def _parse_graphemes(codes: dict[str, tuple[int, ...]], phones: Sequence[int]) -> str:
    """Minimum-cost parse of a phoneme sequence into grapheme codes.

    Allows per-phoneme substitutions within a code and skipping stray
    phonemes, so it always produces best-effort text.
    """
    n = len(phones)
    phones = tuple(phones)
    ordered = sorted(codes.items())
    best: list[tuple[float, str]] = [(math.inf, "")] * (n + 1)
    best[0] = (0.0, "")
    for i in range(1, n + 1):
        cands: list[tuple[float, str]] = [(best[i - 1][0] + PHONE_SKIP_COST, best[i - 1][1])]
        for grapheme, code in ordered:
            L = len(code)
            if L > i or not math.isfinite(best[i - L][0]):
                continue
            mism = sum(a != b for a, b in zip(code, phones[i - L : i]))
            cands.append((best[i - L][0] + PHONE_SUB_COST * mism, best[i - L][1] + grapheme))
        best[i] = min(cands, key=lambda s: (s[0], s[1]))
    return best[n][1]


def asr_decode(asr: ToyAsr, reduced: ReducedUnits | Sequence[int]) -> str:
    """Best-effort transcription of a reduced unit sequence."""
    units = reduced.units if isinstance(reduced, ReducedUnits) else list(reduced)
    phones = _segment_phonemes(asr, units)
    return _parse_graphemes(asr.codes, phones)


@dataclass
class CerTable:
    """Sentence-level CER per (utt_id, system_id)."""

    rows: dict[tuple[str, str], float]

    def utt_ids(self) -> list[str]:
        return sorted({u for u, _ in self.rows})

    def system_ids(self) -> list[str]:
        return sorted({s for _, s in self.rows})

    def mean_cer(self, system_id: str) -> float:
        vals = [v for (_, s), v in self.rows.items() if s == system_id]
        if not vals:
            raise DataError(f"no CER rows for system {system_id!r}")
        return sum(vals) / len(vals)

    def to_csv(self) -> str:
        lines = ["utt_id,system_id,cer"]
        for (u, s), v in sorted(self.rows.items()):
            lines.append(f"{u},{s},{v:.6f}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path):
        Path(path).write_text(self.to_csv())


def compute_cer_table(
    asr: ToyAsr,
    corpora: dict[str, dict[str, ReducedUnits]],
    refs: dict[str, str],
) -> CerTable:
    """Decode every (utterance, system) pair and score CER against refs."""
    rows: dict[tuple[str, str], float] = {}
    for system_id, corpus in corpora.items():
        for utt_id, ref in refs.items():
            reduced = corpus.get(utt_id)
            if reduced is None:
                raise DataError(f"system {system_id!r} is missing utterance {utt_id!r}")
            rows[(utt_id, system_id)] = cer(asr_decode(asr, reduced), ref)
    return CerTable(rows=rows)


def assign_quality_tokens(table: CerTable) -> dict[tuple[str, str], QualityToken]:
    """Y for every system matching the per-utterance CER minimum, N otherwise."""
    systems = table.system_ids()
    tokens: dict[tuple[str, str], QualityToken] = {}
    for utt_id in table.utt_ids():
        row = {s: table.rows[(utt_id, s)] for s in systems}
        best = min(row.values())
        for s, v in row.items():
            tokens[(utt_id, s)] = QualityToken.Y if v == best else QualityToken.N
    return tokens


@dataclass
class MultiTargetExample:
    """One source with per-system (quality token, reduced units) targets."""

    utt_id: str
    source: FeatureSequence
    targets: dict[str, tuple[QualityToken | None, ReducedUnits]]


@dataclass
class Dataset:
    """Mode-tagged training set; branch_systems fixes decoder branch order."""

    mode: str  # single | combined | multitask
    branch_systems: list[str]
    examples: list[MultiTargetExample]
    use_quality_token: bool

    @property
    def branch_count(self) -> int:
        return len(self.branch_systems) if self.mode == "multitask" else 1


def build_dataset(
    mode: str,
    systems: Sequence[str],
    corpora: dict[str, dict[str, ReducedUnits]],
    sources: dict[str, FeatureSequence],
    utt_ids: Sequence[str],
    tokens: dict[tuple[str, str], QualityToken] | None = None,
) -> Dataset:
    """Assemble a training set in one of the three experiment modes.

    single: one system, one target per example, no quality token.
    combined: union over systems, one decoder stream, no quality token.
    multitask: per-utterance multi-branch targets, token prepended at train time.
    """
    unknown = [s for s in systems if s not in corpora]
    if unknown:
        raise ConfigurationError(f"unknown systems {unknown}; have {sorted(corpora)}")
    if mode == "single" and len(systems) != 1:
        raise ConfigurationError("single mode takes exactly one system")
    if mode == "multitask" and tokens is None:
        raise ConfigurationError("multitask mode requires quality tokens")

    examples: list[MultiTargetExample] = []
    if mode in ("single", "combined"):
        for s in systems:
            for utt_id in utt_ids:
                examples.append(
                    MultiTargetExample(
                        utt_id=utt_id,
                        source=sources[utt_id],
                        targets={s: (None, corpora[s][utt_id])},
                    )
                )
        if mode == "single":
            examples.sort(key=lambda e: e.utt_id)
    elif mode == "multitask":
        for utt_id in utt_ids:
            examples.append(
                MultiTargetExample(
                    utt_id=utt_id,
                    source=sources[utt_id],
                    targets={
                        s: (tokens[(utt_id, s)], corpora[s][utt_id]) for s in systems
                    },
                )
            )
    else:
        raise ConfigurationError(f"unknown dataset mode {mode!r}")
    return Dataset(
        mode=mode,
        branch_systems=list(systems),
        examples=examples,
        use_quality_token=(mode == "multitask"),
    )
