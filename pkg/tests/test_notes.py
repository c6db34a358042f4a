"""Note-event representation, conversions, and vocabularies."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from melodia.notes import (
    AbsoluteNote,
    AttributeVocabulary,
    DataError,
    EmptyInputError,
    IndexedSequence,
    NoteEvent,
    NoteSequence,
    Vocabularies,
    VocabularyError,
    build_vocabulary,
    decode_indices,
    encode_indices,
    to_absolute,
    to_note_events,
    vocabulary_from_text,
    vocabulary_to_text,
)

F = Fraction


def note(onset, duration, pitch) -> AbsoluteNote:
    return AbsoluteNote(F(onset), F(duration), pitch)


rational_times = st.fractions(min_value=0, max_value=16, max_denominator=12)
durations = st.fractions(min_value=F(1, 12), max_value=4, max_denominator=12)


@st.composite
def note_lists(draw, min_size=1, max_size=40):
    onsets = draw(st.lists(rational_times, min_size=min_size, max_size=max_size))
    return [
        AbsoluteNote(onset, draw(durations), draw(st.integers(0, 127)))
        for onset in onsets
    ]


class TestToNoteEvents:
    def test_single_note(self):
        seq = to_note_events([note(0, 1, 60)])
        assert seq.events == (NoteEvent(F(0), F(1), 60),)

    def test_chord_gets_zero_offsets_in_pitch_order(self):
        seq = to_note_events([note(0, 1, 67), note(0, 1, 60), note(0, 1, 64)])
        assert [e.delta for e in seq.events] == [F(0), F(0), F(0)]
        assert [e.pitch for e in seq.events] == [60, 64, 67]

    def test_offset_is_onset_difference(self):
        seq = to_note_events([note(0, 1, 60), note(F(1, 2), F(1, 4), 62)])
        assert seq.events[1] == NoteEvent(F(1, 2), F(1, 4), 62)

    def test_empty_input_error(self):
        with pytest.raises(EmptyInputError):
            to_note_events([])

    @given(note_lists())
    @settings(max_examples=50, deadline=None)
    def test_invariant_under_permutation(self, notes):
        rng = np.random.default_rng(0)
        shuffled = [notes[i] for i in rng.permutation(len(notes))]
        assert to_note_events(notes).events == to_note_events(shuffled).events


class TestToAbsolute:
    def test_zero_offset_chain_shares_onset(self):
        seq = NoteSequence((NoteEvent(F(0), F(1), 60), NoteEvent(F(0), F(1), 64)))
        assert [n.onset for n in to_absolute(seq)] == [F(0), F(0)]

    @given(note_lists())
    @settings(max_examples=100, deadline=None)
    def test_round_trip_is_exact(self, notes):
        # the first offset is 0 by definition, so the time origin moves to
        # the earliest onset; everything else is preserved exactly
        ordered = sorted(notes, key=lambda n: (n.onset, n.pitch, n.duration))
        origin = ordered[0].onset
        shifted = [
            AbsoluteNote(n.onset - origin, n.duration, n.pitch) for n in ordered
        ]
        assert to_absolute(to_note_events(notes)) == shifted

    @given(note_lists())
    @settings(max_examples=50, deadline=None)
    def test_round_trip_identity_when_origin_is_zero(self, notes):
        anchored = [AbsoluteNote(F(0), F(1), 0)] + notes
        ordered = sorted(anchored, key=lambda n: (n.onset, n.pitch, n.duration))
        assert to_absolute(to_note_events(anchored)) == ordered

    def test_first_event_must_start_at_zero(self):
        with pytest.raises(DataError):
            NoteSequence((NoteEvent(F(1), F(1), 60),))


class TestValidation:
    def test_negative_duration_rejected(self):
        with pytest.raises(DataError):
            note(0, -1, 60)

    def test_pitch_range(self):
        with pytest.raises(DataError):
            note(0, 1, 128)

    def test_negative_offset_rejected(self):
        with pytest.raises(DataError):
            NoteEvent(F(-1, 4), F(1), 60)


class TestVocabulary:
    def test_pitch_appearance_order(self):
        stream = [NoteEvent(F(0), F(1), p) for p in (60, 64, 60, 67)]
        vocab = build_vocabulary([stream], "P")
        assert [vocab.index(p) for p in (60, 64, 67)] == [0, 1, 2]

    def test_offset_appearance_order(self):
        events = [NoteEvent(d, F(1), 60) for d in (F(0), F(1, 2), F(0), F(1, 4))]
        vocab = build_vocabulary([events], "dT")
        assert vocab.values() == [F(0), F(1, 2), F(1, 4)]

    def test_merged_corpus_build_is_deterministic(self):
        rng = np.random.default_rng(1)
        corpora = []
        for _ in range(3):
            corpora.append(
                [
                    NoteEvent(F(int(rng.integers(0, 3)), 4), F(1, 2), int(rng.integers(40, 80)))
                    for _ in range(30)
                ]
            )
        first = build_vocabulary(corpora, "P")
        second = build_vocabulary(corpora, "P")
        assert first == second
        assert first.values() == second.values()

    def test_bijection(self):
        vocab = build_vocabulary(
            [[NoteEvent(F(0), F(1), p) for p in (72, 60, 64, 72)]], "P"
        )
        for i in range(vocab.size):
            assert vocab.index(vocab.value(i)) == i

    def test_unknown_value_error_names_attribute_and_value(self):
        vocab = AttributeVocabulary("P", [60, 64])
        with pytest.raises(VocabularyError, match=r"108 not in the P vocabulary"):
            vocab.index(108)

    def test_index_out_of_range(self):
        vocab = AttributeVocabulary("T", [F(1)])
        with pytest.raises(VocabularyError, match="out of range"):
            vocab.value(1)

    def test_text_round_trip(self):
        vocab = AttributeVocabulary("dT", [F(0), F(3, 2), F(2)])
        text = vocabulary_to_text(vocab)
        assert text.splitlines()[1] == "1\tdT\t3/2"
        assert vocabulary_from_text(text) == vocab

    def test_text_round_trip_pitch(self):
        vocab = AttributeVocabulary("P", [60, 72, 48])
        assert vocabulary_from_text(vocabulary_to_text(vocab)) == vocab


def small_vocabs() -> Vocabularies:
    seq = to_note_events(
        [note(0, 1, 60), note(0, 1, 64), note(F(1, 2), F(1, 4), 67), note(1, F(1, 3), 60)]
    )
    return Vocabularies(
        build_vocabulary([seq], "dT"),
        build_vocabulary([seq], "T"),
        build_vocabulary([seq], "P"),
    )


class TestIndexing:
    def test_single_event_all_zero(self):
        seq = to_note_events([note(0, 1, 60)])
        vocabs = Vocabularies(
            build_vocabulary([seq], "dT"),
            build_vocabulary([seq], "T"),
            build_vocabulary([seq], "P"),
        )
        idx = encode_indices(seq, vocabs)
        assert idx.delta_idx.tolist() == [0]
        assert idx.duration_idx.tolist() == [0]
        assert idx.pitch_idx.tolist() == [0]

    def test_decode_inverts_encode(self):
        vocabs = small_vocabs()
        seq = to_note_events(
            [note(0, 1, 60), note(0, 1, 64), note(F(1, 2), F(1, 4), 67), note(1, F(1, 3), 60)],
            source_id="src",
        )
        assert decode_indices(encode_indices(seq, vocabs), vocabs, "src") == seq

    def test_out_of_vocabulary_pitch(self):
        vocabs = small_vocabs()
        seq = NoteSequence((NoteEvent(F(0), F(1), 108),))
        with pytest.raises(VocabularyError, match="108"):
            encode_indices(seq, vocabs)

    def test_decode_range_error(self):
        vocabs = small_vocabs()
        bad = IndexedSequence(
            np.array([0, 99]), np.array([0, 0]), np.array([0, 0])
        )
        with pytest.raises(VocabularyError):
            decode_indices(bad, vocabs)

    def test_decode_zeroes_leading_offset(self):
        # a mid-piece window may start on a nonzero offset token
        vocabs = small_vocabs()
        nonzero = vocabs.delta.index(F(1, 2))
        idx = IndexedSequence(
            np.array([nonzero, nonzero]), np.array([0, 0]), np.array([0, 0])
        )
        seq = decode_indices(idx, vocabs)
        assert seq.events[0].delta == F(0)
        assert seq.events[1].delta == F(1, 2)

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(DataError):
            IndexedSequence(np.array([0]), np.array([0, 1]), np.array([0]))
