"""Note-event representation of polyphonic music.

A piece is a stream of note events, each a triple of (time offset from the
previous event, duration, MIDI pitch).  An offset of zero means the event
sounds together with the previous one, which is how chords are written.
Time is kept as exact rationals in quarter-note units so that unusual beat
divisions (triplets, quintuplets) survive round trips without drift.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

ATTRIBUTES = ("dT", "T", "P")


class MelodiaError(Exception):
    """Base class for all errors raised by this package."""


class DataError(MelodiaError):
    """Invalid or inconsistent musical data."""


class EmptyInputError(DataError):
    """An operation that needs at least one note received none."""


class VocabularyError(DataError):
    """Value or index not covered by an attribute vocabulary."""


@dataclass(frozen=True, slots=True)
class AbsoluteNote:
    """A pitched note at an absolute onset, in quarter-note units."""

    onset: Fraction
    duration: Fraction
    pitch: int

    def __post_init__(self) -> None:
        if self.onset < 0:
            raise DataError(f"note onset must be >= 0, got {self.onset}")
        if self.duration <= 0:
            raise DataError(f"note duration must be > 0, got {self.duration}")
        if not 0 <= self.pitch <= 127:
            raise DataError(f"pitch must be in [0, 127], got {self.pitch}")


@dataclass(frozen=True, slots=True)
class NoteEvent:
    """One event of the (offset, duration, pitch) stream."""

    delta: Fraction
    duration: Fraction
    pitch: int

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise DataError(f"event offset must be >= 0, got {self.delta}")
        if self.duration <= 0:
            raise DataError(f"event duration must be > 0, got {self.duration}")
        if not 0 <= self.pitch <= 127:
            raise DataError(f"pitch must be in [0, 127], got {self.pitch}")


@dataclass(frozen=True, slots=True)
class NoteSequence:
    """An ordered stream of note events with a provenance label."""

    events: tuple[NoteEvent, ...]
    source_id: str = ""

    def __post_init__(self) -> None:
        if self.events and self.events[0].delta != 0:
            raise DataError("first event of a sequence must have offset 0")

    def __len__(self) -> int:
        return len(self.events)


def _note_order(note: AbsoluteNote) -> tuple[Fraction, int, Fraction]:
    return (note.onset, note.pitch, note.duration)


def to_note_events(notes: Sequence[AbsoluteNote], source_id: str = "") -> NoteSequence:
    """Convert absolute notes into an event stream.

    Notes are sorted by (onset, pitch, duration) so simultaneous notes come
    out in ascending pitch order; the offset of each event is the onset gap
    to its predecessor, zero for the first event.  The time origin moves to
    the earliest onset, so leading silence is not represented.
    """
    if not notes:
        raise EmptyInputError("cannot build a note sequence from zero notes")
    ordered = sorted(notes, key=_note_order)
    events = []
    prev_onset = ordered[0].onset
    for note in ordered:
        events.append(NoteEvent(note.onset - prev_onset, note.duration, note.pitch))
        prev_onset = note.onset
    return NoteSequence(tuple(events), source_id)


def to_absolute(seq: NoteSequence) -> list[AbsoluteNote]:
    """Reconstruct absolute notes; onsets are prefix sums of the offsets."""
    notes = []
    onset = Fraction(0)
    for event in seq.events:
        onset += event.delta
        notes.append(AbsoluteNote(onset, event.duration, event.pitch))
    return notes


class AttributeVocabulary:
    """Bidirectional mapping between attribute values and dense indices.

    Indices are assigned by first appearance in the corpus, so an identical
    corpus ordering always yields an identical mapping.
    """

    def __init__(self, attribute: str, values: Iterable[Fraction | int]):
        if attribute not in ATTRIBUTES:
            raise ValueError(f"unknown attribute {attribute!r}")
        self.attribute = attribute
        self._index_to_value: list[Fraction | int] = []
        self._value_to_index: dict[Fraction | int, int] = {}
        for value in values:
            if value not in self._value_to_index:
                self._value_to_index[value] = len(self._index_to_value)
                self._index_to_value.append(value)

    @property
    def size(self) -> int:
        return len(self._index_to_value)

    def index(self, value: Fraction | int) -> int:
        try:
            return self._value_to_index[value]
        except KeyError:
            raise VocabularyError(
                f"value {value} not in the {self.attribute} vocabulary"
            ) from None

    def value(self, index: int) -> Fraction | int:
        if not 0 <= index < self.size:
            raise VocabularyError(
                f"index {index} out of range for the {self.attribute} vocabulary"
                f" of size {self.size}"
            )
        return self._index_to_value[index]

    def values(self) -> list[Fraction | int]:
        return list(self._index_to_value)

    def __contains__(self, value: Fraction | int) -> bool:
        return value in self._value_to_index

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AttributeVocabulary):
            return NotImplemented
        return (
            self.attribute == other.attribute
            and self._index_to_value == other._index_to_value
        )


def _event_attribute(event: NoteEvent, attribute: str) -> Fraction | int:
    if attribute == "dT":
        return event.delta
    if attribute == "T":
        return event.duration
    return event.pitch


def build_vocabulary(
    corpus: Iterable[Sequence[NoteEvent]], attribute: str
) -> AttributeVocabulary:
    """Index one attribute of every event, in corpus appearance order."""
    streams = list(corpus)
    if not streams:
        raise EmptyInputError("cannot build a vocabulary from an empty corpus")

    def walk():
        for stream in streams:
            events = stream.events if isinstance(stream, NoteSequence) else stream
            for event in events:
                yield _event_attribute(event, attribute)

    return AttributeVocabulary(attribute, walk())


@dataclass(frozen=True)
class Vocabularies:
    """The three attribute vocabularies of one corpus."""

    delta: AttributeVocabulary
    duration: AttributeVocabulary
    pitch: AttributeVocabulary

    def sizes(self) -> tuple[int, int, int]:
        return (self.delta.size, self.duration.size, self.pitch.size)


@dataclass(frozen=True)
class IndexedSequence:
    """Model-facing form of a note sequence: three aligned index arrays."""

    delta_idx: np.ndarray
    duration_idx: np.ndarray
    pitch_idx: np.ndarray

    def __post_init__(self) -> None:
        lengths = {len(self.delta_idx), len(self.duration_idx), len(self.pitch_idx)}
        if len(lengths) != 1:
            raise DataError(f"attribute index streams differ in length: {lengths}")

    def __len__(self) -> int:
        return len(self.delta_idx)

    def window(self, start: int, length: int) -> "IndexedSequence":
        return IndexedSequence(
            self.delta_idx[start : start + length],
            self.duration_idx[start : start + length],
            self.pitch_idx[start : start + length],
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IndexedSequence):
            return NotImplemented
        return (
            np.array_equal(self.delta_idx, other.delta_idx)
            and np.array_equal(self.duration_idx, other.duration_idx)
            and np.array_equal(self.pitch_idx, other.pitch_idx)
        )


def encode_indices(seq: NoteSequence, vocabs: Vocabularies) -> IndexedSequence:
    """Look up every attribute of every event in its vocabulary."""
    delta_idx = np.array([vocabs.delta.index(e.delta) for e in seq.events], dtype=np.int64)
    dur_idx = np.array([vocabs.duration.index(e.duration) for e in seq.events], dtype=np.int64)
    pitch_idx = np.array([vocabs.pitch.index(e.pitch) for e in seq.events], dtype=np.int64)
    return IndexedSequence(delta_idx, dur_idx, pitch_idx)


def decode_indices(
    idx: IndexedSequence, vocabs: Vocabularies, source_id: str = ""
) -> NoteSequence:
    """Map index triples back to note events.

    The first event's offset is forced to zero: a generated window may start
    on any offset token, but a standalone piece begins at its first note, so
    leading silence is dropped.  Corpus sequences already start at zero, and
    for them this is the exact inverse of :func:`encode_indices`.
    """
    if len(idx) == 0:
        return NoteSequence((), source_id)
    vocabs.delta.value(int(idx.delta_idx[0]))  # range check before overriding
    events = []
    for t in range(len(idx)):
        delta = Fraction(0) if t == 0 else vocabs.delta.value(int(idx.delta_idx[t]))
        events.append(
            NoteEvent(
                delta,
                vocabs.duration.value(int(idx.duration_idx[t])),
                vocabs.pitch.value(int(idx.pitch_idx[t])),
            )
        )
    return NoteSequence(tuple(events), source_id)


def _format_value(value: Fraction | int) -> str:
    if isinstance(value, Fraction):
        return str(value)  # "3/2" or "2"
    return str(value)


def _parse_value(attribute: str, text: str) -> Fraction | int:
    if attribute == "P":
        return int(text)
    return Fraction(text)


def vocabulary_to_text(vocab: AttributeVocabulary) -> str:
    """Serialize as ``<index>\\t<attribute>\\t<value>`` lines."""
    lines = [
        f"{i}\t{vocab.attribute}\t{_format_value(v)}"
        for i, v in enumerate(vocab.values())
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def vocabulary_from_text(text: str) -> AttributeVocabulary:
    """Reload a vocabulary from its text form, validating index density."""
    attribute = None
    values = []
    for lineno, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"malformed vocabulary line {lineno + 1}: {line!r}")
        index, attr, value = parts
        if attribute is None:
            attribute = attr
        elif attr != attribute:
            raise DataError(f"mixed attributes in vocabulary file: {attribute}, {attr}")
        if int(index) != len(values):
            raise DataError(f"non-dense vocabulary index at line {lineno + 1}")
        values.append(_parse_value(attr, value))
    if attribute is None:
        raise DataError("empty vocabulary file")
    return AttributeVocabulary(attribute, values)
