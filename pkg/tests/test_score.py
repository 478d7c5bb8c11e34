import io
import json

import mido
import pytest

from accompanist.errors import EmptyScore, ParseError, UnsupportedFormat
from accompanist.midi import read_midi, score_from_midi, write_midi
from accompanist.score import (
    Hand,
    Score,
    ScoreEvent,
    load_score,
    parse_pitch_name,
    parse_score,
    pitch_class_of,
    quantize,
    score_to_json,
    units_for_duration,
)


@pytest.mark.parametrize("note,pc", [(60, 0), (69, 9), (61, 1), (0, 0), (127, 7)])
def test_pitch_class_of(note, pc):
    assert pitch_class_of(note) == pc


@pytest.mark.parametrize("bad", [-1, 128])
def test_pitch_class_out_of_range(bad):
    with pytest.raises(ValueError):
        pitch_class_of(bad)


def test_pitch_class_rejects_non_int():
    with pytest.raises(TypeError):
        pitch_class_of(60.0)


def test_pitch_names_round_trip():
    assert [parse_pitch_name(n) for n in ("C", "C#", "Eb", "B")] == [0, 1, 3, 11]
    with pytest.raises(ParseError):
        parse_pitch_name("H")


def test_three_beat_note_becomes_three_units():
    q = quantize(Score((ScoreEvent({0}, 3.0),)))
    assert len(q) == 3
    assert [u.is_continuation for u in q.units] == [False, True, True]
    assert {u.source_event_index for u in q.units} == {0}


def test_one_beat_note_is_one_unit():
    assert len(quantize(Score((ScoreEvent({0}, 1.0),)))) == 1


def test_half_beats_at_subdivision_two():
    score = Score((ScoreEvent({0}, 1.5, 0.0), ScoreEvent({2}, 1.5, 1.5)), subdivision=2)
    q = quantize(score)
    assert [u.source_event_index for u in q.units] == [0, 0, 0, 1, 1, 1]
    assert q.units[1].onset_beats == pytest.approx(0.5)
    assert q.units[3].onset_beats == pytest.approx(1.5)


def test_short_duration_clamped_to_one_unit():
    assert units_for_duration(0.1, 1) == 1
    assert len(quantize(Score((ScoreEvent({0}, 0.1),)))) == 1


def test_accompaniment_on_first_unit_only():
    from accompanist.score import AccompanimentNote

    ev = ScoreEvent({0}, 2.0, accompaniment=(AccompanimentNote(48),))
    q = quantize(Score((ev,)))
    assert q.units[0].accompaniment and not q.units[1].accompaniment


def test_parse_minimal_json():
    score = parse_score(b'{"events":[{"pitches":["C"],"duration":1,"onset":0}]}')
    assert len(score.events) == 1
    assert score.events[0].pitches == frozenset({0})
    assert score.events[0].hand is Hand.SINGLE


def test_empty_events_raise_empty_score():
    with pytest.raises(EmptyScore):
        parse_score(b'{"events": []}')


def test_json_syntax_error_reports_byte_offset():
    with pytest.raises(ParseError) as info:
        parse_score('{"events": [é ]}'.encode())
    # the offending character is at char 12, byte 12 (the multibyte char starts there)
    assert info.value.offset == 12
    assert "at byte 12" in str(info.value)


def test_json_bad_field_is_parse_error():
    with pytest.raises(ParseError):
        parse_score(b'{"events":[{"pitches":["C"],"duration":"long"}]}')
    with pytest.raises(ParseError):
        parse_score(b'{"events":[{"pitches":["C"]}]}')


def test_json_round_trip(tmp_path):
    score = Score((ScoreEvent({0, 4, 7}, 2.0, 0.0, Hand.LEFT), ScoreEvent({2}, 1.0, 2.0, Hand.RIGHT)),
                  bpm=90, subdivision=2)
    data = score_to_json(score)
    assert parse_score(data) == score
    path = tmp_path / "s.json"
    path.write_bytes(data)
    assert load_score(path) == score
    assert json.loads(data)["bpm"] == 90


def _mido_bytes(messages, ticks_per_beat=480, tempo=None):
    mid = mido.MidiFile(type=0, ticks_per_beat=ticks_per_beat)
    track = mido.MidiTrack()
    if tempo is not None:
        track.append(mido.MetaMessage("set_tempo", tempo=tempo, time=0))
    track.extend(messages)
    mid.tracks.append(track)
    buf = io.BytesIO()
    mid.save(file=buf)
    return buf.getvalue()


def test_midi_single_note_against_mido_fixture():
    data = _mido_bytes([mido.Message("note_on", note=60, velocity=90, time=0),
                        mido.Message("note_off", note=60, velocity=0, time=480)])
    score = score_from_midi(data)
    assert len(score.events) == 1
    ev = score.events[0]
    assert ev.onset_beats == 0.0 and ev.duration_beats == 1.0
    assert ev.pitches == frozenset({0})
    assert score.bpm == pytest.approx(120.0)


def test_midi_running_status_velocity_zero_and_tempo():
    # mido writes running status; velocity-0 note_on closes the note
    data = _mido_bytes([
        mido.Message("note_on", note=64, velocity=80, time=0),
        mido.Message("note_on", note=64, velocity=0, time=240),
        mido.Message("note_on", note=67, velocity=80, time=0),
        mido.Message("note_on", note=67, velocity=0, time=720),
    ], ticks_per_beat=240, tempo=mido.bpm2tempo(100))
    score = score_from_midi(data)
    assert [e.onset_beats for e in score.events] == [0.0, 1.0]
    assert [e.duration_beats for e in score.events] == [1.0, 3.0]
    assert score.bpm == pytest.approx(100.0)


def test_midi_channels_map_to_hands_and_accompaniment():
    data = _mido_bytes([
        mido.Message("note_on", channel=2, note=48, velocity=80, time=0),
        mido.Message("note_on", channel=3, note=72, velocity=80, time=0),
        mido.Message("note_on", channel=1, note=40, velocity=40, time=0),
        mido.Message("note_off", channel=2, note=48, time=480),
        mido.Message("note_off", channel=3, note=72, time=0),
        mido.Message("note_off", channel=1, note=40, time=0),
    ])
    score = score_from_midi(data)
    assert [e.hand for e in score.events] == [Hand.LEFT, Hand.RIGHT]
    # attached to the latest solo event at or before its tick
    assert score.events[0].accompaniment == ()
    assert [a.pitch for a in score.events[1].accompaniment] == [40]
    assert score.events[1].accompaniment[0].velocity_ratio == pytest.approx(0.5)


def test_midi_chord_from_simultaneous_notes():
    data = _mido_bytes([
        mido.Message("note_on", note=60, velocity=80, time=0),
        mido.Message("note_on", note=64, velocity=80, time=0),
        mido.Message("note_off", note=60, time=960),
        mido.Message("note_off", note=64, time=0),
    ])
    (ev,) = score_from_midi(data).events
    assert ev.pitches == frozenset({0, 4}) and ev.duration_beats == 2.0


def test_write_midi_readable_by_mido():
    data = write_midi([(1, 60, 70, 0, 480), (1, 64, 70, 480, 960)], 480, 600000)
    mid = mido.MidiFile(file=io.BytesIO(data))
    msgs = [m for m in mid.tracks[0] if not m.is_meta]
    assert [(m.type, m.note) for m in msgs] == [
        ("note_on", 60), ("note_off", 60), ("note_on", 64), ("note_off", 64)]
    assert [m.time for m in msgs] == [0, 480, 0, 480]
    tempo = [m.tempo for m in mid.tracks[0] if m.type == "set_tempo"]
    assert tempo == [600000]
    assert read_midi(data).division == 480


def test_overlapping_note_on_names_the_pitch():
    data = _mido_bytes([
        mido.Message("note_on", note=60, velocity=80, time=0),
        mido.Message("note_on", note=60, velocity=80, time=10),
        mido.Message("note_off", note=60, time=10),
    ])
    with pytest.raises(ParseError, match="60"):
        score_from_midi(data)


def test_smpte_division_unsupported():
    data = bytearray(write_midi([(0, 60, 80, 0, 480)]))
    data[12:14] = bytes([0xE7, 0x28])  # -25 fps, 40 ticks per frame
    with pytest.raises(UnsupportedFormat):
        read_midi(bytes(data))


def test_truncated_midi_is_parse_error():
    data = write_midi([(0, 60, 80, 0, 480)])
    with pytest.raises(ParseError):
        read_midi(data[:-6])
    with pytest.raises(ParseError):
        read_midi(b"RIFF" + data[4:])


def test_load_score_picks_midi_by_extension(tmp_path):
    path = tmp_path / "s.mid"
    path.write_bytes(write_midi([(0, 62, 80, 0, 480)]))
    assert load_score(path).events[0].pitches == frozenset({2})
