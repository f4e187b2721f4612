"""Synthetic parallel corpus and simulated TTS channels.

The toy world is a word-for-word translation task. Source sentences are
token sequences; each source token has a fixed target word spelled from a
small grapheme inventory. Every grapheme maps to a short phoneme code,
every phoneme renders as one feature template held for a model-dependent
duration, and each simulated TTS system owns a lexicon of such templates.
Systems sharing a lexicon seed form one acoustic family; vocoders add
sparse frame perturbations on top; per-utterance corruption swaps one
phoneme's template to induce CER differences between systems.

The codes use three disjoint phoneme classes (single-symbol codes, pair
first symbols, pair second symbols), so no two adjacent phonemes in a
generated text are ever equal and run-length reduction of the unit stream
preserves phoneme boundaries exactly. That keeps the whole channel
invertible in the noise-free case.

Everything is a pure function of (spec, seeds, utt_id); see util.stream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, DataError
from .util import stream

CORPUS_FORMAT_VERSION = 1
FEATURES_FORMAT_VERSION = 1

_GRAPHEME_POOL = "abcdefghijklmnopqrstuvwxyz0123456789"
BOUNDARY_PHONEME = 0  # rendered for the inter-word space, shared by all systems

# Vocoder perturbation geometry: perturbed frames shift by a vocoder-specific
# offset well inside the inter-template distance (~sqrt(2*dim)), plus jitter.
VOCODER_SHIFT = 2.0
VOCODER_JITTER = 0.3

STOCHASTIC_DURATION_RANGE = (2, 5)  # inclusive; AR-style per-instance draws
BASE_DURATION_RANGE = (2, 4)  # inclusive; NAR-style per-phoneme bases


@dataclass(frozen=True)
class ToyLanguageSpec:
    """Parameters of the synthetic language and corpus."""

    source_alphabet_size: int = 32
    target_alphabet_size: int = 30  # graphemes, excluding the space separator
    phoneme_inventory_size: int = 14
    sentence_length_range: tuple[int, int] = (4, 6)
    corpus_sizes: tuple[int, int, int] = (200, 20, 20)  # train, dev, test
    master_seed: int = 1234
    feature_dim: int = 16
    word_length_range: tuple[int, int] = (2, 3)
    source_repeat_range: tuple[int, int] = (2, 4)
    source_jitter: float = 0.1

    def validate(self):
        for name in ("source_alphabet_size", "target_alphabet_size", "phoneme_inventory_size", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for name in ("sentence_length_range", "word_length_range", "source_repeat_range"):
            lo, hi = getattr(self, name)
            if not (1 <= lo <= hi):
                raise ConfigurationError(f"{name} must satisfy 1 <= min <= max")
        if any(n < 1 for n in self.corpus_sizes):
            raise ConfigurationError("corpus_sizes entries must be >= 1")
        if self.target_alphabet_size > len(_GRAPHEME_POOL):
            raise ConfigurationError(
                f"target_alphabet_size > {len(_GRAPHEME_POOL)} not supported"
            )
        if _code_plan(self.phoneme_inventory_size, self.target_alphabet_size) is None:
            raise ConfigurationError(
                f"{self.phoneme_inventory_size} phonemes cannot encode "
                f"{self.target_alphabet_size} graphemes without adjacent repeats"
            )


@dataclass(frozen=True)
class TtsSystemSpec:
    """One simulated TTS channel (acoustic lexicon + vocoder + duration control)."""

    system_id: str
    lexicon_seed: int
    lexicon_agreement: float = 0.5
    duration_mode: str = "deterministic"  # "stochastic" (AR) or "deterministic" (NAR)
    speed_factor: float = 1.0
    vocoder_id: str = "default"
    vocoder_noise_rate: float = 0.0
    synthesis_error_rate: float = 0.0

    def validate(self):
        if self.duration_mode not in ("stochastic", "deterministic"):
            raise ConfigurationError(f"unknown duration_mode {self.duration_mode!r}")
        if self.speed_factor <= 0:
            raise ConfigurationError("speed_factor must be > 0")
        for name in ("lexicon_agreement", "vocoder_noise_rate", "synthesis_error_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1]")


@dataclass(frozen=True)
class ParallelUtterance:
    utt_id: str
    source_text: tuple[str, ...]
    target_text: str
    split: str


@dataclass
class FeatureSequence:
    """Continuous feature frames for one utterance.

    phone_spans carries the generative alignment (phoneme_id, start, end) for
    synthesized targets; it is None for source renderings.
    """

    frames: np.ndarray
    utt_id: str
    system_id: str
    phone_spans: list[tuple[int, int, int]] | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frames)


class ToyWorld:
    """Deterministic derived structures of a ToyLanguageSpec.

    Holds the grapheme inventory, grapheme -> phoneme codes, the shared base
    lexicon, source token embeddings, and the source -> target word lexicon.
    """

    def __init__(self, spec: ToyLanguageSpec):
        spec.validate()
        self.spec = spec
        seed = spec.master_seed
        P = spec.phoneme_inventory_size
        G = spec.target_alphabet_size
        D = spec.feature_dim

        self.graphemes = _GRAPHEME_POOL[:G]
        self.codes = _build_codes(self.graphemes, P, stream(seed, "g2p"))

        rng = stream(seed, "base-lexicon")
        self.base_templates = rng.standard_normal((P, D))
        self.base_durations = rng.integers(
            BASE_DURATION_RANGE[0], BASE_DURATION_RANGE[1] + 1, size=P
        )

        self.source_tokens = [f"s{i:02d}" for i in range(spec.source_alphabet_size)]
        self.source_embeddings = stream(seed, "source-embeddings").standard_normal(
            (spec.source_alphabet_size, D)
        )

        self.word_of = _build_word_lexicon(
            self.source_tokens, self.graphemes, spec.word_length_range, stream(seed, "words")
        )
        self._lexicon_cache: dict[tuple[int, float], np.ndarray] = {}

    @property
    def phoneme_count(self) -> int:
        return self.spec.phoneme_inventory_size

    def g2p(self, text: str) -> list[int]:
        """Phoneme sequence for a target text; raises DataError on unknown graphemes."""
        phones: list[int] = []
        for ch in text:
            code = self.codes.get(ch)
            if code is None:
                raise DataError(f"grapheme {ch!r} not covered by the phoneme map")
            phones.extend(code)
        return phones

    def used_phonemes(self) -> list[int]:
        """Phoneme ids reachable from the grapheme codes (incl. the boundary)."""
        used = {BOUNDARY_PHONEME}
        for code in self.codes.values():
            used.update(code)
        return sorted(used)

    def system_lexicon(self, system: TtsSystemSpec) -> np.ndarray:
        """Per-system phoneme templates (P, dim).

        Each entry is copied from the base lexicon with probability
        lexicon_agreement, else resampled from the system's own stream. The
        boundary phoneme is always shared so word separators stay decodable.
        """
        key = (system.lexicon_seed, system.lexicon_agreement)
        cached = self._lexicon_cache.get(key)
        if cached is not None:
            return cached
        rng = stream(self.spec.master_seed, "system-lexicon", system.lexicon_seed)
        lex = np.empty_like(self.base_templates)
        for p in range(self.phoneme_count):
            u = rng.uniform()
            fresh = rng.standard_normal(self.base_templates.shape[1:])
            if p == BOUNDARY_PHONEME or u < system.lexicon_agreement:
                lex[p] = self.base_templates[p]
            else:
                lex[p] = fresh
        self._lexicon_cache[key] = lex
        return lex


def _code_plan(n_phonemes: int, n_graphemes: int) -> tuple[int, int, int] | None:
    """Split the non-boundary symbols into (singles, pair-first, pair-second).

    The three classes are disjoint, so adjacent phonemes in any encoded text
    are always distinct. Returns the split with the most single-symbol codes
    that still covers n_graphemes, or None if impossible.
    """
    symbols = n_phonemes - 1  # symbol 0 reserved for the boundary
    for singles in range(symbols, -1, -1):
        rest = symbols - singles
        q = rest // 2
        r = rest - q
        if singles + q * r >= n_graphemes:
            return singles, q, r
    return None


def _build_codes(graphemes: str, n_phonemes: int, rng: np.random.Generator) -> dict[str, tuple[int, ...]]:
    """Assign each grapheme a unique phoneme code over symbols 1..P-1.

    Instantaneously decodable by construction: class-T symbols are complete
    codes, class-Q symbols always start a pair, class-R symbols always end
    one. The space separator maps to the boundary phoneme alone.
    """
    G = len(graphemes)
    plan = _code_plan(n_phonemes, G)
    if plan is None:
        raise ConfigurationError(f"{n_phonemes} phonemes cannot encode {G} graphemes")
    n_t, n_q, n_r = plan
    t_syms = list(range(1, n_t + 1))
    q_syms = list(range(n_t + 1, n_t + n_q + 1))
    r_syms = list(range(n_t + n_q + 1, n_t + n_q + n_r + 1))
    singles = [(s,) for s in t_syms]
    pairs = [(q, r) for q in q_syms for r in r_syms]
    pairs = [pairs[i] for i in rng.permutation(len(pairs))]
    codes = (singles + pairs)[:G]
    order = rng.permutation(G)
    mapping = {graphemes[int(g)]: codes[i] for i, g in enumerate(order)}
    mapping[" "] = (BOUNDARY_PHONEME,)
    return mapping


def _build_word_lexicon(
    tokens: list[str],
    graphemes: str,
    length_range: tuple[int, int],
    rng: np.random.Generator,
) -> dict[str, str]:
    """Unique target word spelling per source token."""
    lo, hi = length_range
    seen: set[str] = set()
    lexicon: dict[str, str] = {}
    for tok in tokens:
        for _ in range(10000):
            n = int(rng.integers(lo, hi + 1))
            word = "".join(graphemes[int(i)] for i in rng.integers(len(graphemes), size=n))
            if word not in seen:
                seen.add(word)
                lexicon[tok] = word
                break
        else:
            raise ConfigurationError("could not sample unique target words; enlarge inventory")
    return lexicon


def gen_parallel_corpus(spec: ToyLanguageSpec) -> list[ParallelUtterance]:
    """Generate train/dev/test utterances with split-tagged seeding."""
    world = ToyWorld(spec)
    lo, hi = spec.sentence_length_range
    corpus: list[ParallelUtterance] = []
    for split, size in zip(("train", "dev", "test"), spec.corpus_sizes):
        for i in range(size):
            rng = stream(spec.master_seed, "sentence", split, i)
            length = int(rng.integers(lo, hi + 1))
            tokens = tuple(
                world.source_tokens[int(j)]
                for j in rng.integers(spec.source_alphabet_size, size=length)
            )
            target = " ".join(world.word_of[t] for t in tokens)
            corpus.append(
                ParallelUtterance(
                    utt_id=f"{split}-{i:04d}",
                    source_text=tokens,
                    target_text=target,
                    split=split,
                )
            )
    return corpus


def render_source(utt: ParallelUtterance, world: ToyWorld) -> FeatureSequence:
    """Source-speech stand-in: per-token templates repeated with jitter."""
    spec = world.spec
    if len(utt.source_text) == 0:
        raise DataError(f"{utt.utt_id}: empty source_text")
    index = {tok: i for i, tok in enumerate(world.source_tokens)}
    rng = stream(spec.master_seed, "render-source", utt.utt_id)
    lo, hi = spec.source_repeat_range
    frames: list[np.ndarray] = []
    for tok in utt.source_text:
        if tok not in index:
            raise DataError(f"{utt.utt_id}: unknown source token {tok!r}")
        repeats = int(rng.integers(lo, hi + 1))
        template = world.source_embeddings[index[tok]]
        jitter = rng.standard_normal((repeats, spec.feature_dim)) * spec.source_jitter
        frames.append(template + jitter)
    return FeatureSequence(
        frames=np.concatenate(frames, axis=0), utt_id=utt.utt_id, system_id="source"
    )


def _durations(
    phones: list[int], system: TtsSystemSpec, world: ToyWorld, utt_id: str
) -> list[int]:
    if system.duration_mode == "stochastic":
        rng = stream(world.spec.master_seed, "durations", system.lexicon_seed, utt_id)
        lo, hi = STOCHASTIC_DURATION_RANGE
        return [int(d) for d in rng.integers(lo, hi + 1, size=len(phones))]
    # deterministic: per-phoneme base length scaled by 1/speed, half-up, floor 1
    return [
        max(1, int(math.floor(world.base_durations[p] / system.speed_factor + 0.5)))
        for p in phones
    ]


def synth_target(
    utt: ParallelUtterance, system: TtsSystemSpec, world: ToyWorld
) -> FeatureSequence:
    """Render target_text through one simulated TTS system.

    Deterministic given (master_seed, lexicon_seed, vocoder_id, utt_id); see
    module docstring for the channel model.
    """
    system.validate()
    spec = world.spec
    phones = world.g2p(utt.target_text)
    lexicon = world.system_lexicon(system)
    durations = _durations(phones, system, world, utt.utt_id)

    def render(phoneme: int, dur: int) -> np.ndarray:
        return np.tile(lexicon[phoneme], (dur, 1))

    segments = [render(p, d) for p, d in zip(phones, durations)]
    spans: list[tuple[int, int, int]] = []
    pos = 0
    for p, seg in zip(phones, segments):
        spans.append((p, pos, pos + len(seg)))
        pos += len(seg)
    frames = np.concatenate(segments, axis=0)

    if system.vocoder_noise_rate > 0.0:
        sig = stream(spec.master_seed, "vocoder-signature", system.vocoder_id)
        direction = sig.standard_normal(spec.feature_dim)
        offset = direction / np.linalg.norm(direction) * VOCODER_SHIFT
        rng = stream(
            spec.master_seed, "vocoder", system.lexicon_seed, system.vocoder_id, utt.utt_id
        )
        hit = rng.uniform(size=len(frames)) < system.vocoder_noise_rate
        noise = rng.standard_normal((len(frames), spec.feature_dim)) * VOCODER_JITTER
        frames[hit] += offset + noise[hit]

    if system.synthesis_error_rate > 0.0:
        rng = stream(spec.master_seed, "corruption", system.lexicon_seed, utt.utt_id)
        if rng.uniform() < system.synthesis_error_rate:
            idx = int(rng.integers(len(phones)))
            other = int(rng.integers(world.phoneme_count - 1))
            if other >= phones[idx]:
                other += 1
            p, start, end = spans[idx]
            frames[start:end] = render(other, end - start)
            spans[idx] = (other, start, end)

    return FeatureSequence(
        frames=frames, utt_id=utt.utt_id, system_id=system.system_id, phone_spans=spans
    )


# ---------------------------------------------------------------------------
# on-disk formats


def save_corpus(corpus: Iterable[ParallelUtterance], path: str | Path):
    """Line-delimited records with a format_version header line."""
    lines = [json.dumps({"format_version": CORPUS_FORMAT_VERSION, "kind": "parallel_corpus"})]
    for utt in corpus:
        lines.append(
            json.dumps(
                {
                    "utt_id": utt.utt_id,
                    "split": utt.split,
                    "source_text": " ".join(utt.source_text),
                    "target_text": utt.target_text,
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_corpus(path: str | Path) -> list[ParallelUtterance]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DataError(f"empty corpus file: {path}")
    header = json.loads(lines[0])
    if header.get("kind") != "parallel_corpus":
        raise DataError(f"not a parallel corpus file: {path}")
    if header.get("format_version") != CORPUS_FORMAT_VERSION:
        raise DataError(f"unsupported corpus format_version {header.get('format_version')}")
    corpus = []
    for line in lines[1:]:
        rec = json.loads(line)
        corpus.append(
            ParallelUtterance(
                utt_id=rec["utt_id"],
                source_text=tuple(rec["source_text"].split()),
                target_text=rec["target_text"],
                split=rec["split"],
            )
        )
    return corpus


def save_features(features: Iterable[FeatureSequence], root: str | Path):
    """Per-utterance .npy matrices under a directory keyed by system_id."""
    root = Path(root)
    manifest: dict[str, list[str]] = {}
    for fs in features:
        sysdir = root / fs.system_id
        sysdir.mkdir(parents=True, exist_ok=True)
        np.save(sysdir / f"{fs.utt_id}.npy", fs.frames)
        manifest.setdefault(fs.system_id, []).append(fs.utt_id)
    for system_id, utt_ids in manifest.items():
        meta = {
            "format_version": FEATURES_FORMAT_VERSION,
            "system_id": system_id,
            "utt_ids": sorted(utt_ids),
        }
        (root / system_id / "manifest.json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def load_features(root: str | Path, system_id: str) -> list[FeatureSequence]:
    sysdir = Path(root) / system_id
    meta = json.loads((sysdir / "manifest.json").read_text())
    if meta.get("format_version") != FEATURES_FORMAT_VERSION:
        raise DataError(f"unsupported features format_version {meta.get('format_version')}")
    return [
        FeatureSequence(frames=np.load(sysdir / f"{u}.npy"), utt_id=u, system_id=system_id)
        for u in meta["utt_ids"]
    ]
