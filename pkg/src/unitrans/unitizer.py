"""Discrete unit extraction: K-means codebook over pooled frames, nearest
centroid encoding, and duplication-pooling (run-length reduction) with exact
expansion back to full length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

CODEBOOK_FORMAT_VERSION = 1

# Frames-per-row block size used when forming distance matrices, keeps peak
# memory bounded on large pooled corpora.
_CHUNK = 16384


@dataclass
class Codebook:
    """K-means centroids plus fit metadata."""

    centroids: np.ndarray  # (k, dim) float64
    fit_seed: int
    inertia: float
    inertia_history: list[float] = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class UnitSequence:
    """Frame-level discrete units for one utterance/system."""

    units: list[int]
    utt_id: str = ""
    system_id: str = ""


@dataclass
class ReducedUnits:
    """Run-length collapsed units: no two adjacent equal, durations >= 1."""

    units: list[int]
    durations: list[int]
    utt_id: str = ""
    system_id: str = ""

    def validate(self):
        if len(self.units) != len(self.durations):
            raise DataError("units/durations length mismatch")
        if any(d < 1 for d in self.durations):
            raise DataError("durations must be positive")
        if any(a == b for a, b in zip(self.units, self.units[1:])):
            raise DataError("adjacent duplicate units in reduced sequence")


def _nearest(frames: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Squared-distance nearest centroid per frame; ties go to the lowest index."""
    labels = np.empty(len(frames), dtype=np.int64)
    dists = np.empty(len(frames), dtype=np.float64)
    c_sq = (centroids**2).sum(axis=1)
    for start in range(0, len(frames), _CHUNK):
        block = frames[start : start + _CHUNK]
        # ||x-c||^2 = ||x||^2 - 2 x.c + ||c||^2; the per-frame ||x||^2 term is
        # constant across centroids and only needed for the inertia value.
        d = block @ centroids.T
        d *= -2.0
        d += c_sq
        idx = np.argmin(d, axis=1)
        labels[start : start + _CHUNK] = idx
        dists[start : start + _CHUNK] = d[np.arange(len(block)), idx] + (block**2).sum(
            axis=1
        )
    np.maximum(dists, 0.0, out=dists)
    return labels, dists


def _kmeanspp_init(frames: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(frames)
    centroids = np.empty((k, frames.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = frames[first]
    d2 = ((frames - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass at chosen points; reuse an arbitrary frame
            centroids[i] = frames[int(rng.integers(n))]
            continue
        idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = frames[idx]
        d2 = np.minimum(d2, ((frames - centroids[i]) ** 2).sum(axis=1))
    return centroids


def fit_kmeans(
    frames: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 100,
    tol: float = 1e-7,
) -> Codebook:
    """Lloyd's algorithm with seeded k-means++ initialization.

    Stops after max_iters or when the inertia improvement drops below tol.
    Empty clusters are re-seeded to the point farthest from its assigned
    centroid, which strictly decreases inertia on the next assignment.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or len(frames) == 0:
        raise DataError("frames must be a non-empty 2-D array")
    if k < 1:
        raise DataError("k must be >= 1")
    n_distinct = len(np.unique(frames, axis=0))
    if n_distinct < k:
        raise DataError(f"only {n_distinct} distinct frames for k={k}")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(frames, k, rng)
    prev_centroids = centroids.copy()
    history: list[float] = []
    inertia = np.inf
    for _ in range(max_iters):
        labels, d2 = _nearest(frames, centroids)
        new_inertia = float(d2.sum())
        if new_inertia > inertia:
            # float-noise regression near convergence; keep the previous state
            centroids = prev_centroids
            break
        history.append(new_inertia)
        improved = inertia - new_inertia
        inertia = new_inertia
        if improved < tol:
            break
        prev_centroids = centroids.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                centroids[j] = frames[mask].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                centroids[j] = frames[far]
                d2[far] = 0.0
    return Codebook(
        centroids=centroids, fit_seed=seed, inertia=inertia, inertia_history=history
    )


def encode_units(frames: np.ndarray, codebook: Codebook, utt_id="", system_id="") -> UnitSequence:
    """Map each frame to its nearest centroid (squared Euclidean, ties to lowest index)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != codebook.dim:
        raise DataError(
            f"frame dimension {frames.shape} does not match codebook dim {codebook.dim}"
        )
    labels, _ = _nearest(frames, codebook.centroids)
    return UnitSequence(units=[int(u) for u in labels], utt_id=utt_id, system_id=system_id)


def reduce_units(seq: UnitSequence | Sequence[int]) -> ReducedUnits:
    """Run-length collapse; durations record run lengths."""
    units = seq.units if isinstance(seq, UnitSequence) else list(seq)
    utt_id = getattr(seq, "utt_id", "")
    system_id = getattr(seq, "system_id", "")
    out_units: list[int] = []
    out_durs: list[int] = []
    for u in units:
        if out_units and out_units[-1] == u:
            out_durs[-1] += 1
        else:
            out_units.append(u)
            out_durs.append(1)
    return ReducedUnits(units=out_units, durations=out_durs, utt_id=utt_id, system_id=system_id)


def expand_units(reduced: ReducedUnits) -> UnitSequence:
    """Repeat each unit durations[i] times, inverting reduce_units."""
    reduced.validate()
    units: list[int] = []
    for u, d in zip(reduced.units, reduced.durations):
        units.extend([u] * d)
    return UnitSequence(units=units, utt_id=reduced.utt_id, system_id=reduced.system_id)


UNITS_FORMAT_VERSION = 1


def save_unit_corpus(
    sequences: Sequence[UnitSequence] | Sequence[ReducedUnits], path: str | Path
):
    """Line-delimited unit records: utt_id, system_id, units[, durations]."""
    seqs = list(sequences)
    reduced = bool(seqs) and isinstance(seqs[0], ReducedUnits)
    kind = "reduced" if reduced else "full"
    lines = [f"units format_version={UNITS_FORMAT_VERSION} kind={kind}"]
    for s in seqs:
        row = [s.utt_id, s.system_id, " ".join(str(u) for u in s.units)]
        if reduced:
            row.append(" ".join(str(d) for d in s.durations))
        lines.append("\t".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_unit_corpus(path: str | Path) -> list[UnitSequence] | list[ReducedUnits]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("units format_version="):
        raise DataError(f"not a unit corpus file: {path}")
    meta = dict(kv.split("=", 1) for kv in lines[0].split()[1:])
    if int(meta["format_version"]) != UNITS_FORMAT_VERSION:
        raise DataError(f"unsupported units format_version {meta['format_version']}")
    reduced = meta["kind"] == "reduced"
    out = []
    for line in lines[1:]:
        parts = line.split("\t")
        units = [int(u) for u in parts[2].split()] if parts[2] else []
        if reduced:
            durations = [int(d) for d in parts[3].split()] if parts[3] else []
            out.append(
                ReducedUnits(units=units, durations=durations, utt_id=parts[0], system_id=parts[1])
            )
        else:
            out.append(UnitSequence(units=units, utt_id=parts[0], system_id=parts[1]))
    return out


def save_codebook(codebook: Codebook, path: str | Path):
    """Versioned flat text file: header, then one row of %.17g floats per centroid."""
    lines = [
        f"codebook format_version={CODEBOOK_FORMAT_VERSION}",
        f"k={codebook.k} dim={codebook.dim} fit_seed={codebook.fit_seed} "
        f"inertia={codebook.inertia!r}",
    ]
    for row in codebook.centroids:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_codebook(path: str | Path) -> Codebook:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("codebook format_version="):
        raise DataError(f"not a codebook file: {path}")
    version = int(lines[0].split("=", 1)[1])
    if version != CODEBOOK_FORMAT_VERSION:
        raise DataError(f"unsupported codebook format_version {version}")
    meta = dict(kv.split("=", 1) for kv in lines[1].split())
    k, dim = int(meta["k"]), int(meta["dim"])
    centroids = np.array(
        [[float(v) for v in line.split()] for line in lines[2 : 2 + k]], dtype=np.float64
    )
    if centroids.shape != (k, dim):
        raise DataError("codebook centroid block has wrong shape")
    return Codebook(
        centroids=centroids, fit_seed=int(meta["fit_seed"]), inertia=float(meta["inertia"])
    )
