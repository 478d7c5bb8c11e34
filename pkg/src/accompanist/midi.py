"""Minimal Standard MIDI File reader for score ingestion.

Only what score following needs is read: format 0/1 files with metrical
(ticks-per-quarter) division, NoteOn/NoteOff and SetTempo. Every other event
is skipped. Channel mapping:

    channel 0 -> solo, single line (hand ``S``)
    channel 1 -> accompaniment, attached to the latest solo event
    channel 2 -> solo, left hand
    channel 3 -> solo, right hand
"""

from __future__ import annotations

import struct
from collections import defaultdict
from dataclasses import dataclass

from .errors import EmptyScore, ParseError, UnsupportedFormat
from .score import AccompanimentNote, Hand, Score, ScoreEvent, pitch_class_of

SOLO_CHANNELS = {0: Hand.SINGLE, 2: Hand.LEFT, 3: Hand.RIGHT}
ACCOMPANIMENT_CHANNEL = 1
_HAND_ORDER = {Hand.LEFT: 0, Hand.RIGHT: 1, Hand.SINGLE: 2}
_DATA_LENGTHS = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}
_SUBDIVISION_CANDIDATES = (1, 2, 3, 4, 6, 8)


@dataclass(frozen=True)
class MidiNote:
    channel: int
    pitch: int
    velocity: int
    start_tick: int
    end_tick: int


@dataclass(frozen=True)
class MidiContents:
    division: int
    tempo_us: int | None
    notes: tuple


def _read_vlq(data, pos, end):
    value = 0
    for _ in range(4):
        if pos >= end:
            raise ParseError("truncated variable-length quantity", pos)
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise ParseError("variable-length quantity longer than 4 bytes", pos)


def _read_track(data, pos, end, track_index, sink):
    """Decode one MTrk chunk body, appending raw events to ``sink``.

    Each entry is ``(tick, order, kind, channel, pitch, velocity, offset)``
    where kind is 0 for note-off, 1 for note-on, 2 for set-tempo.
    """
    tick = 0
    status = None
    seq = 0
    while pos < end:
        delta, pos = _read_vlq(data, pos, end)
        tick += delta
        if pos >= end:
            raise ParseError("truncated event", pos)
        event_offset = pos
        byte = data[pos]
        if byte == 0xFF:
            if pos + 2 > end:
                raise ParseError("truncated meta event", pos)
            meta_type = data[pos + 1]
            length, pos = _read_vlq(data, pos + 2, end)
            if pos + length > end:
                raise ParseError("meta event runs past end of track", event_offset)
            if meta_type == 0x51:
                if length != 3:
                    raise ParseError("set-tempo meta event must have 3 data bytes", event_offset)
                tempo = int.from_bytes(data[pos:pos + 3], "big")
                sink.append((tick, track_index, seq, 2, None, tempo, 0, event_offset))
            pos += length
            if meta_type == 0x2F:
                return
            status = None
        elif byte in (0xF0, 0xF7):
            length, pos = _read_vlq(data, pos + 1, end)
            if pos + length > end:
                raise ParseError("sysex runs past end of track", event_offset)
            pos += length
            status = None
        else:
            if byte & 0x80:
                status = byte
                pos += 1
            elif status is None:
                raise ParseError("running status without a preceding status byte", pos)
            kind = status & 0xF0
            if kind not in _DATA_LENGTHS:
                raise ParseError(f"unexpected status byte 0x{status:02X}", event_offset)
            n = _DATA_LENGTHS[kind]
            if pos + n > end:
                raise ParseError("truncated channel message", event_offset)
            payload = data[pos:pos + n]
            pos += n
            if any(b & 0x80 for b in payload):
                raise ParseError("data byte with high bit set", event_offset)
            channel = status & 0x0F
            if kind == 0x90 and payload[1] > 0:
                sink.append((tick, track_index, seq, 1, channel, payload[0], payload[1], event_offset))
            elif kind == 0x80 or kind == 0x90:
                sink.append((tick, track_index, seq, 0, channel, payload[0], 0, event_offset))
        seq += 1


def read_midi(data):
    """Parse SMF bytes into paired notes and the first tempo."""
    data = bytes(data)
    if len(data) < 14 or data[:4] != b"MThd":
        raise ParseError("missing MThd header", 0)
    (header_len,) = struct.unpack(">I", data[4:8])
    if header_len < 6 or 8 + header_len > len(data):
        raise ParseError("bad MThd length", 4)
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise UnsupportedFormat(f"MIDI format {fmt} is not supported (only 0 and 1)")
    if division & 0x8000:
        raise UnsupportedFormat("SMPTE time division is not supported")
    if division == 0:
        raise ParseError("division of zero ticks per quarter note", 12)

    raw = []
    pos = 8 + header_len
    track_index = 0
    while pos < len(data) and track_index < ntracks:
        if pos + 8 > len(data):
            raise ParseError("truncated chunk header", pos)
        chunk_type = data[pos:pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4:pos + 8])
        body = pos + 8
        if body + length > len(data):
            raise ParseError("chunk runs past end of file", pos)
        if chunk_type == b"MTrk":
            _read_track(data, body, body + length, track_index, raw)
            track_index += 1
        pos = body + length
    if track_index < ntracks:
        raise ParseError(f"header declares {ntracks} tracks but found {track_index}", pos)

    # offs sort before ons at equal ticks so re-struck notes pair correctly
    raw.sort(key=lambda r: (r[0], r[3] != 0, r[1], r[2]))
    tempo = None
    sounding = {}
    notes = []
    for tick, _track, _seq, kind, channel, a, b, offset in raw:
        if kind == 2:
            if tempo is None:
                tempo = a
            continue
        key = (channel, a)
        if kind == 1:
            if key in sounding:
                raise ParseError(
                    f"note-on for pitch {a} on channel {channel} while it is already sounding",
                    offset,
                )
            sounding[key] = (tick, b, offset)
        elif key in sounding:
            start, velocity, _ = sounding.pop(key)
            notes.append(MidiNote(channel, a, velocity, start, tick))
    if sounding:
        (channel, pitch), (_, _, offset) = min(sounding.items(), key=lambda kv: kv[1][2])
        raise ParseError(f"note-on for pitch {pitch} on channel {channel} is never released", offset)
    notes.sort(key=lambda n: (n.start_tick, n.channel, n.pitch))
    return MidiContents(division, tempo, tuple(notes))


def _pick_subdivision(durations):
    for s in _SUBDIVISION_CANDIDATES:
        if all(abs(d * s - round(d * s)) < 0.1 for d in durations):
            return s
    return 4


def score_from_midi(data, subdivision=None):
    """Build a :class:`Score` from SMF bytes.

    Solo notes sharing an onset tick and hand are merged into one chord event
    lasting until the last of them is released. With ``subdivision=None`` the
    smallest of 1, 2, 3, 4, 6, 8 units per beat that fits every duration is
    chosen.
    """
    contents = read_midi(data)
    div = contents.division
    chords = defaultdict(list)
    accompaniment = []
    for note in contents.notes:
        if note.channel in SOLO_CHANNELS:
            chords[(note.start_tick, SOLO_CHANNELS[note.channel])].append(note)
        elif note.channel == ACCOMPANIMENT_CHANNEL:
            accompaniment.append(note)
    if not chords:
        raise EmptyScore("MIDI file has no solo notes on channels 0, 2 or 3")

    keys = sorted(chords, key=lambda k: (k[0], _HAND_ORDER[k[1]]))
    attached = defaultdict(list)
    starts = [k[0] for k in keys]
    for note in accompaniment:
        # latest solo event starting at or before the accompaniment note
        idx = max((i for i, s in enumerate(starts) if s <= note.start_tick), default=0)
        anchor = chords[keys[idx]]
        ref_velocity = max(n.velocity for n in anchor)
        attached[idx].append(
            AccompanimentNote(
                pitch=note.pitch,
                velocity_ratio=min(1.0, note.velocity / ref_velocity),
                offset=max(0, note.start_tick - starts[idx]) / div,
            )
        )

    events = []
    for i, key in enumerate(keys):
        group = chords[key]
        start, hand = key
        end = max(n.end_tick for n in group)
        duration = max(end - start, 1) / div
        events.append(
            ScoreEvent(
                pitches=frozenset(pitch_class_of(n.pitch) for n in group),
                duration_beats=duration,
                onset_beats=start / div,
                hand=hand,
                accompaniment=tuple(sorted(attached[i], key=lambda a: (a.offset, a.pitch))),
            )
        )
    if subdivision is None:
        subdivision = _pick_subdivision([e.duration_beats for e in events])
    bpm = 60e6 / contents.tempo_us if contents.tempo_us else 120.0
    return Score(tuple(events), bpm=bpm, subdivision=subdivision)


def _vlq(value):
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def write_midi(notes, division=480, tempo_us=500000):
    """Encode ``(channel, pitch, velocity, start_tick, end_tick)`` notes as a
    format-0 SMF. Used to render accompaniment streams and build fixtures."""
    events = [(0, 0, b"\xff\x51\x03" + tempo_us.to_bytes(3, "big"))]
    for channel, pitch, velocity, start, end in notes:
        events.append((start, 1, bytes([0x90 | channel, pitch, velocity])))
        events.append((end, 0, bytes([0x80 | channel, pitch, 0])))
    events.sort(key=lambda e: (e[0], e[1]))
    body = bytearray()
    last = 0
    for tick, _, payload in events:
        body += _vlq(tick - last) + payload
        last = tick
    body += b"\x00\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
