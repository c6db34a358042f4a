"""Corpus construction: segmentation, transposition, batching, caching.

Sequences are cut into fixed-length windows with a stride, every window is
expanded into all transpositions in the configured semitone range (shifts
that would push a pitch outside the MIDI range drop the copy), and the
vocabularies are built over the augmented stream so no training token can
fall outside them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import PurePosixPath
from typing import Iterable, Sequence

import numpy as np

from .notes import (
    DataError,
    IndexedSequence,
    NoteEvent,
    NoteSequence,
    Vocabularies,
    build_vocabulary,
    vocabulary_from_text,
    vocabulary_to_text,
)

CACHE_MAGIC = b"MLDC"
CACHE_VERSION = 1
DEFAULT_SEGMENT_LENGTH = 100
DEFAULT_STRIDE = 50
DEFAULT_TRANSPOSE_RANGE = (-3, 3)


@dataclass(frozen=True)
class SegmentWindow:
    """A fixed-length slice of one sequence, still at the value level."""

    events: tuple[NoteEvent, ...]
    source_id: str
    start: int


@dataclass(frozen=True)
class Segment:
    """An index-encoded training window with its provenance."""

    indexed: IndexedSequence
    source_id: str
    start: int
    transposition: int

    @property
    def label(self) -> str:
        return corpus_label(self.source_id)


def corpus_label(source_id: str) -> str:
    """Group sources by their parent directory name."""
    parent = PurePosixPath(source_id.replace("\\", "/")).parent.name
    return parent or "corpus"


@dataclass(frozen=True)
class Batch:
    """Three aligned (batch, length) index matrices."""

    delta: np.ndarray
    duration: np.ndarray
    pitch: np.ndarray

    def __post_init__(self) -> None:
        if not (self.delta.shape == self.duration.shape == self.pitch.shape):
            raise DataError("batch attribute matrices must share one shape")

    @property
    def size(self) -> int:
        return self.delta.shape[0]

    @property
    def length(self) -> int:
        return self.delta.shape[1]

    @classmethod
    def single(cls, indexed: IndexedSequence) -> "Batch":
        return cls(
            indexed.delta_idx[None, :],
            indexed.duration_idx[None, :],
            indexed.pitch_idx[None, :],
        )

    @classmethod
    def stack(cls, sequences: Sequence[IndexedSequence]) -> "Batch":
        return cls(
            np.stack([s.delta_idx for s in sequences]),
            np.stack([s.duration_idx for s in sequences]),
            np.stack([s.pitch_idx for s in sequences]),
        )


def segment_corpus(
    corpus: Iterable[NoteSequence],
    length: int = DEFAULT_SEGMENT_LENGTH,
    stride: int = DEFAULT_STRIDE,
) -> list[SegmentWindow]:
    """Windows [0, L), [stride, stride+L), ... per sequence; short tails drop."""
    if length <= 0 or stride <= 0:
        raise DataError("segment length and stride must be positive")
    windows = []
    for seq in corpus:
        for start in range(0, len(seq.events) - length + 1, stride):
            windows.append(
                SegmentWindow(seq.events[start : start + length], seq.source_id, start)
            )
    return windows


def transpose_events(
    events: Sequence[NoteEvent], semitones: int
) -> tuple[NoteEvent, ...] | None:
    """Shift every pitch; None when any pitch would leave [0, 127]."""
    out = []
    for event in events:
        pitch = event.pitch + semitones
        if not 0 <= pitch <= 127:
            return None
        out.append(NoteEvent(event.delta, event.duration, pitch))
    return tuple(out)


def expand_transpositions(
    windows: Sequence[SegmentWindow],
    low: int = DEFAULT_TRANSPOSE_RANGE[0],
    high: int = DEFAULT_TRANSPOSE_RANGE[1],
) -> list[tuple[SegmentWindow, int]]:
    """Materialize every in-range shift of every window, in a fixed order."""
    if low > high:
        raise DataError(f"empty transposition range [{low}, {high}]")
    expanded = []
    for window in windows:
        for shift in range(low, high + 1):
            events = transpose_events(window.events, shift)
            if events is not None:
                expanded.append(
                    (SegmentWindow(events, window.source_id, window.start), shift)
                )
    return expanded


def build_dataset(
    corpus: Iterable[NoteSequence],
    length: int = DEFAULT_SEGMENT_LENGTH,
    stride: int = DEFAULT_STRIDE,
    transpose_low: int = DEFAULT_TRANSPOSE_RANGE[0],
    transpose_high: int = DEFAULT_TRANSPOSE_RANGE[1],
) -> tuple[list[Segment], Vocabularies]:
    """Segment, augment eagerly, then index against closed vocabularies."""
    windows = segment_corpus(corpus, length, stride)
    augmented = expand_transpositions(windows, transpose_low, transpose_high)
    if not augmented:
        raise DataError("corpus produced no training segments")
    streams = [window.events for window, _ in augmented]
    vocabs = Vocabularies(
        delta=build_vocabulary(streams, "dT"),
        duration=build_vocabulary(streams, "T"),
        pitch=build_vocabulary(streams, "P"),
    )
    segments = []
    for window, shift in augmented:
        indexed = IndexedSequence(
            np.array([vocabs.delta.index(e.delta) for e in window.events], dtype=np.int64),
            np.array([vocabs.duration.index(e.duration) for e in window.events], dtype=np.int64),
            np.array([vocabs.pitch.index(e.pitch) for e in window.events], dtype=np.int64),
        )
        segments.append(Segment(indexed, window.source_id, window.start, shift))
    return segments, vocabs


def split_holdout(
    segments: Sequence[Segment], fraction: float, seed: int
) -> tuple[list[Segment], list[Segment]]:
    """Deterministic fractional holdout; fraction 0 keeps everything."""
    if not 0.0 <= fraction < 1.0:
        raise DataError(f"holdout fraction must lie in [0, 1), got {fraction}")
    if fraction == 0.0:
        return list(segments), []
    order = np.random.default_rng([seed, 3]).permutation(len(segments))
    held = int(round(len(segments) * fraction))
    held_idx = set(order[:held].tolist())
    train = [s for i, s in enumerate(segments) if i not in held_idx]
    holdout = [segments[i] for i in sorted(held_idx)]
    return train, holdout


def make_batches(
    segments: Sequence[Segment], batch_size: int, rng_seed: int
) -> list[Batch]:
    """Seed-shuffled batches; the final partial batch is emitted as-is."""
    if batch_size <= 0:
        raise DataError("batch size must be positive")
    if not segments:
        return []
    order = np.random.default_rng(rng_seed).permutation(len(segments))
    batches = []
    for begin in range(0, len(order), batch_size):
        chunk = order[begin : begin + batch_size]
        batches.append(Batch.stack([segments[i].indexed for i in chunk]))
    return batches


def save_cache(path, vocabs: Vocabularies, segments: Sequence[Segment]) -> None:
    """Self-describing little-endian container for the built dataset."""
    from .nn import write_tensor_table

    sources: list[str] = []
    source_index: dict[str, int] = {}
    for segment in segments:
        if segment.source_id not in source_index:
            source_index[segment.source_id] = len(sources)
            sources.append(segment.source_id)

    out = bytearray()
    out += CACHE_MAGIC + struct.pack("<I", CACHE_VERSION)
    for vocab in (vocabs.delta, vocabs.duration, vocabs.pitch):
        blob = vocabulary_to_text(vocab).encode("utf-8")
        out += struct.pack("<I", len(blob)) + blob
    out += struct.pack("<I", len(sources))
    for source in sources:
        encoded = source.encode("utf-8")
        out += struct.pack("<H", len(encoded)) + encoded

    n = len(segments)
    length = len(segments[0].indexed) if n else 0
    out += struct.pack("<II", n, length)
    arrays = {
        "delta": np.stack([s.indexed.delta_idx for s in segments]) if n else np.zeros((0, 0), np.int64),
        "duration": np.stack([s.indexed.duration_idx for s in segments]) if n else np.zeros((0, 0), np.int64),
        "pitch": np.stack([s.indexed.pitch_idx for s in segments]) if n else np.zeros((0, 0), np.int64),
        "source": np.array([source_index[s.source_id] for s in segments], dtype=np.int64),
        "start": np.array([s.start for s in segments], dtype=np.int64),
        "transposition": np.array([s.transposition for s in segments], dtype=np.int64),
    }
    out += write_tensor_table(arrays)
    with open(path, "wb") as handle:
        handle.write(bytes(out))


def load_cache(path) -> tuple[Vocabularies, list[Segment]]:
    from .nn import read_tensor_table

    with open(path, "rb") as handle:
        data = handle.read()
    if data[:4] != CACHE_MAGIC:
        raise DataError(f"{path}: not a dataset cache")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CACHE_VERSION:
        raise DataError(f"{path}: unsupported cache version {version}")
    pos = 8
    vocab_texts = []
    for _ in range(3):
        (blob_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        vocab_texts.append(data[pos : pos + blob_len].decode("utf-8"))
        pos += blob_len
    vocabs = Vocabularies(
        delta=vocabulary_from_text(vocab_texts[0]),
        duration=vocabulary_from_text(vocab_texts[1]),
        pitch=vocabulary_from_text(vocab_texts[2]),
    )
    (n_sources,) = struct.unpack_from("<I", data, pos)
    pos += 4
    sources = []
    for _ in range(n_sources):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        sources.append(data[pos : pos + name_len].decode("utf-8"))
        pos += name_len
    n, length = struct.unpack_from("<II", data, pos)
    pos += 8
    arrays, _ = read_tensor_table(data, pos)
    segments = []
    for i in range(n):
        indexed = IndexedSequence(
            arrays["delta"][i], arrays["duration"][i], arrays["pitch"][i]
        )
        segments.append(
            Segment(
                indexed,
                sources[int(arrays["source"][i])],
                int(arrays["start"][i]),
                int(arrays["transposition"][i]),
            )
        )
    return vocabs, segments
