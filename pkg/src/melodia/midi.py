"""Standard MIDI File reader and writer.

Reads format 0 and format 1 files into absolute notes with exact rational
timing (ticks divided by the header's ticks-per-quarter).  Tempo events are
ignored on purpose: time stays metric, not wall-clock.  Writing emits a
format 0 single-track file that parses back to the same note list.
"""

from __future__ import annotations

import math
import struct
import warnings
from fractions import Fraction
from typing import Sequence

from .notes import AbsoluteNote, DataError

PERCUSSION_CHANNEL = 9  # MIDI channel 10, zero-based
DEFAULT_VELOCITY = 80
MAX_RESOLUTION = 960
_VLQ_MAX = 0x0FFFFFFF


class MidiError(DataError):
    """Malformed MIDI data; carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class QuantizationError(DataError):
    """A rational time is not representable at the chosen tick resolution."""


class MidiWarning(UserWarning):
    """Non-fatal oddities found while parsing, e.g. skipped percussion."""


class _Reader:
    """Byte cursor over a MIDI file, tracking the absolute offset."""

    def __init__(self, data: bytes, start: int = 0, end: int | None = None):
        self.data = data
        self.pos = start
        self.end = len(data) if end is None else end

    def remaining(self) -> int:
        return self.end - self.pos

    def take(self, n: int, what: str) -> bytes:
        if self.remaining() < n:
            raise MidiError(f"truncated {what}", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack(">H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack(">I", self.take(4, what))[0]

    def vlq(self) -> int:
        value = 0
        for _ in range(4):
            byte = self.u8("variable-length quantity")
            value = (value << 7) | (byte & 0x7F)
            if not byte & 0x80:
                return value
        raise MidiError("variable-length quantity longer than 4 bytes", self.pos)


def parse_midi(data: bytes) -> list[AbsoluteNote]:
    """Parse a format 0/1 Standard MIDI File into onset-sorted notes.

    Note-on with velocity 0 counts as note-off.  Percussion-channel notes
    are skipped and reported through a single :class:`MidiWarning`.  Tracks
    are merged; simultaneous notes sort by pitch.
    """
    reader = _Reader(data)
    header_off = reader.pos
    if reader.take(4, "header") != b"MThd":
        raise MidiError("missing MThd header", header_off)
    header_len = reader.u32("header length")
    if header_len < 6:
        raise MidiError(f"header chunk too short ({header_len} bytes)", reader.pos)
    fmt = reader.u16("format")
    ntrks = reader.u16("track count")
    division = reader.u16("division")
    reader.take(header_len - 6, "header padding")
    if fmt not in (0, 1):
        raise MidiError(f"unsupported MIDI format {fmt}", header_off + 8)
    if division & 0x8000:
        raise MidiError("SMPTE time division is not supported", header_off + 12)
    if division == 0:
        raise MidiError("zero ticks-per-quarter division", header_off + 12)

    notes: list[AbsoluteNote] = []
    skipped_percussion = 0
    for _ in range(ntrks):
        chunk_off = reader.pos
        if reader.take(4, "track header") != b"MTrk":
            raise MidiError("expected MTrk chunk", chunk_off)
        track_len = reader.u32("track length")
        if reader.remaining() < track_len:
            raise MidiError("track data shorter than declared length", reader.pos)
        track = _Reader(data, reader.pos, reader.pos + track_len)
        reader.pos += track_len
        skipped_percussion += _parse_track(track, division, notes)

    if skipped_percussion:
        warnings.warn(
            f"skipped {skipped_percussion} percussion-channel note(s)",
            MidiWarning,
            stacklevel=2,
        )
    notes.sort(key=lambda n: (n.onset, n.pitch, n.duration))
    return notes


def _parse_track(track: _Reader, division: int, notes: list[AbsoluteNote]) -> int:
    """Walk one track, appending finished notes. Returns skipped drum count."""
    tick = 0
    running_status: int | None = None
    # (channel, pitch) -> FIFO of (onset tick, byte offset of the note-on)
    active: dict[tuple[int, int], list[tuple[int, int]]] = {}
    skipped = 0

    while track.remaining() > 0:
        tick += track.vlq()
        event_off = track.pos
        status = track.u8("event status")
        if status < 0x80:
            if running_status is None:
                raise MidiError("data byte with no running status", event_off)
            status = running_status
            track.pos -= 1

        kind = status & 0xF0
        channel = status & 0x0F
        if kind in (0x80, 0x90, 0xA0, 0xB0, 0xE0):
            running_status = status
            first = track.u8("event data")
            second = track.u8("event data")
            if kind == 0x90 and second > 0:  # note-on
                if channel == PERCUSSION_CHANNEL:
                    skipped += 1
                else:
                    active.setdefault((channel, first), []).append((tick, event_off))
            elif kind == 0x80 or kind == 0x90:  # note-off (or velocity-0 on)
                if channel == PERCUSSION_CHANNEL:
                    continue
                stack = active.get((channel, first))
                if not stack:
                    raise MidiError(f"note-off for pitch {first} with no note-on", event_off)
                onset_tick, _ = stack.pop(0)
                duration = tick - onset_tick
                if duration <= 0:
                    raise MidiError(f"zero-length note at pitch {first}", event_off)
                notes.append(
                    AbsoluteNote(
                        Fraction(onset_tick, division),
                        Fraction(duration, division),
                        first,
                    )
                )
        elif kind in (0xC0, 0xD0):  # program change / channel pressure
            running_status = status
            track.u8("event data")
        elif status == 0xFF:  # meta event
            running_status = None
            track.u8("meta type")
            length = track.vlq()
            track.take(length, "meta event payload")
        elif status in (0xF0, 0xF7):  # sysex
            running_status = None
            length = track.vlq()
            track.take(length, "sysex payload")
        else:
            raise MidiError(f"unknown status byte 0x{status:02X}", event_off)

    for (channel, pitch), stack in active.items():
        if stack:
            _, on_off = stack[0]
            raise MidiError(
                f"note-on without note-off (channel {channel}, pitch {pitch})", on_off
            )
    return skipped


def default_resolution(notes: Sequence[AbsoluteNote]) -> int:
    """Least common multiple of all time denominators, capped at 960.

    Raises :class:`QuantizationError` when the exact resolution would exceed
    the cap, naming one offending value.
    """
    resolution = 1
    for note in notes:
        for value in (note.onset, note.duration):
            resolution = math.lcm(resolution, value.denominator)
            if resolution > MAX_RESOLUTION:
                raise QuantizationError(
                    f"time value {value} needs more than {MAX_RESOLUTION}"
                    " ticks per quarter note"
                )
    return resolution


def _vlq_bytes(value: int) -> bytes:
    if value < 0 or value > _VLQ_MAX:
        raise DataError(f"delta time {value} not encodable as a MIDI quantity")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _to_ticks(value: Fraction, resolution: int) -> int:
    ticks = value * resolution
    if ticks.denominator != 1:
        raise QuantizationError(
            f"time value {value} is not representable at {resolution}"
            " ticks per quarter note"
        )
    return int(ticks)


_WRITE_CHANNELS = tuple(c for c in range(16) if c != PERCUSSION_CHANNEL)


def write_midi(notes: Sequence[AbsoluteNote], ticks_per_quarter: int) -> bytes:
    """Emit a format 0 single-track file; ``parse_midi`` inverts it exactly.

    Overlapping notes of the same pitch are spread across channels so each
    (channel, pitch) stream stays interval-disjoint and re-parsing pairs
    every note-on with its own note-off.  More than fifteen simultaneous
    notes of one pitch cannot be expressed and raise an error.
    """
    if not 1 <= ticks_per_quarter <= 0x7FFF:
        raise DataError(f"ticks per quarter must be in [1, 32767], got {ticks_per_quarter}")

    ordered = sorted(notes, key=lambda n: (n.onset, n.pitch, n.duration))
    # Per pitch: list of (end_tick, channel) for notes still sounding.
    active: dict[int, list[tuple[int, int]]] = {}
    # (tick, off-before-on at equal ticks, pitch, is_on, channel)
    events: list[tuple[int, int, int, bool, int]] = []
    for note in ordered:
        on = _to_ticks(note.onset, ticks_per_quarter)
        off = on + _to_ticks(note.duration, ticks_per_quarter)
        sounding = [entry for entry in active.get(note.pitch, ()) if entry[0] > on]
        busy = {channel for _, channel in sounding}
        channel = next((c for c in _WRITE_CHANNELS if c not in busy), None)
        if channel is None:
            raise DataError(
                f"more than {len(_WRITE_CHANNELS)} overlapping notes at pitch {note.pitch}"
            )
        sounding.append((off, channel))
        active[note.pitch] = sounding
        events.append((on, 1, note.pitch, True, channel))
        events.append((off, 0, note.pitch, False, channel))
    events.sort(key=lambda e: e[:4])

    body = bytearray()
    tick = 0
    for when, _, pitch, is_on, channel in events:
        body += _vlq_bytes(when - tick)
        tick = when
        status = (0x90 if is_on else 0x80) | channel
        body += bytes((status, pitch, DEFAULT_VELOCITY if is_on else 0))
    body += b"\x00\xff\x2f\x00"  # end of track

    out = bytearray()
    out += b"MThd" + struct.pack(">IHHH", 6, 0, 1, ticks_per_quarter)
    out += b"MTrk" + struct.pack(">I", len(body)) + body
    return bytes(out)
