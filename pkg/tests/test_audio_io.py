import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatspoof.audio_io import (
    ProtocolParseError, TrialRecord, UnsupportedFormatError, WavFormatError, Waveform, fix_length,
    load_utterance, parse_protocol, parse_protocol_lines, read_wav, serialize_protocol, write_protocol, write_wav,
)


def raw_wav(path, pcm, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(width)
        fh.setframerate(rate)
        fh.writeframes(np.asarray(pcm, dtype="<i2").tobytes() if width == 2 else bytes(pcm))


def test_read_full_scale_positive(tmp_path):
    raw_wav(tmp_path / "a.wav", [32767])
    w = read_wav(tmp_path / "a.wav")
    assert w.samples.tolist() == [32767 / 32768]
    assert w.samples[0] == pytest.approx(0.99997, abs=1e-5)


def test_read_extremes(tmp_path):
    raw_wav(tmp_path / "a.wav", [0, -32768])
    assert read_wav(tmp_path / "a.wav").samples.tolist() == [0.0, -1.0]


def test_sine_roundtrip(tmp_path):
    t = np.arange(16000) / 16000
    w = Waveform(0.5 * np.sin(2 * np.pi * 1000 * t), 16000)
    write_wav(tmp_path / "s.wav", w)
    back = read_wav(tmp_path / "s.wav")
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples - w.samples)) <= 1 / 32768


def test_rejects_stereo_and_8bit(tmp_path):
    raw_wav(tmp_path / "st.wav", [0, 0, 1, 1], channels=2)
    with pytest.raises(UnsupportedFormatError):
        read_wav(tmp_path / "st.wav")
    raw_wav(tmp_path / "b8.wav", [128, 129], width=1)
    with pytest.raises(UnsupportedFormatError):
        read_wav(tmp_path / "b8.wav")


def test_rejects_garbage_and_wrong_rate(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFFjunk")
    with pytest.raises(WavFormatError):
        read_wav(tmp_path / "bad.wav")
    raw_wav(tmp_path / "r8.wav", [1, 2, 3], rate=8000)
    with pytest.raises(UnsupportedFormatError):
        load_utterance(tmp_path / "r8.wav")


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform(np.array([]), 16000)
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]), 16000)


def test_fix_length_examples():
    w = Waveform(np.arange(64600) / 64600, 16000)
    np.testing.assert_array_equal(fix_length(w, 64600).samples, w.samples)
    assert fix_length(Waveform([1.0, 2.0, 3.0], 16000), 7).samples.tolist() == [1, 2, 3, 1, 2, 3, 1]
    long = Waveform(np.random.default_rng(0).uniform(-1, 1, 100000), 16000)
    np.testing.assert_array_equal(fix_length(long).samples, long.samples[:64600])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=50), st.integers(1, 200))
def test_fix_length_properties(samples, target):
    w = Waveform(samples, 16000)
    once = fix_length(w, target)
    assert len(once) == target
    np.testing.assert_array_equal(fix_length(once, target).samples, once.samples)


def test_protocol_examples():
    recs = parse_protocol_lines(["LA_0079 LA_T_1138215 - - bonafide", "LA_0079 LA_T_1271820 - A01 spoof"])
    assert recs[0] == TrialRecord("LA_0079", "LA_T_1138215", "-", "bonafide")
    assert recs[1] == TrialRecord("LA_0079", "LA_T_1271820", "A01", "spoof")
    assert recs[0].is_bonafide and not recs[1].is_bonafide


def test_protocol_errors_name_line():
    with pytest.raises(ProtocolParseError, match=":1:"):
        parse_protocol_lines(["x y - A01 genuine"])
    with pytest.raises(ProtocolParseError, match=":2:.*duplicate"):
        parse_protocol_lines(["s u - - bonafide", "s u - A01 spoof"])
    with pytest.raises(ProtocolParseError, match=":1:"):
        parse_protocol_lines(["s u - A01 bonafide"])
    with pytest.raises(ProtocolParseError, match=":3:"):
        parse_protocol_lines(["# header", "", "too few"])


ident = st.text("ABCDEFGHIJKLMNOPQRSTUVWXYZ_0123456789", min_size=1, max_size=8)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(ident, st.booleans(), st.sampled_from(["A01", "A02", "A17"])), max_size=20,
                unique_by=lambda t: t[0]))
def test_protocol_roundtrip(rows):
    recs = [TrialRecord("SPK", u, "-" if b else a, "bonafide" if b else "spoof") for u, b, a in rows]
    assert parse_protocol_lines(serialize_protocol(recs).splitlines()) == recs


def test_protocol_file_roundtrip(tmp_path):
    recs = [TrialRecord("S1", "U1", "-", "bonafide"), TrialRecord("S2", "U2", "A02", "spoof")]
    write_protocol(tmp_path / "p.txt", recs)
    assert parse_protocol(tmp_path / "p.txt") == recs
