"""WAV and countermeasure-protocol I/O, plus fixed-length utterance buffers."""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PIPELINE_RATE = 16000
DEFAULT_TARGET_LEN = 64600
KEYS = ("bonafide", "spoof")


class WavFormatError(ValueError):
    """Malformed or unreadable RIFF/WAVE file."""


class UnsupportedFormatError(WavFormatError):
    """Valid WAV that is not 16-bit mono PCM."""


class ProtocolParseError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")

    def __len__(self):
        return self.samples.size


def read_wav(path):
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: {channels} channels; only mono is supported")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: {8 * width}-bit samples; only 16-bit PCM is supported")
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise WavFormatError(f"{path}: no samples")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, w):
    """Write as 16-bit mono PCM; samples are clipped to the PCM16 range."""
    pcm = np.clip(np.round(np.asarray(w.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())


def fix_length(w, target_len=DEFAULT_TARGET_LEN):
    """Truncate, or tile the whole waveform end to end, to exactly ``target_len``."""
    if target_len <= 0:
        raise ValueError("target_len must be positive")
    n = len(w)
    if n >= target_len:
        return Waveform(w.samples[:target_len].copy(), w.sample_rate)
    reps = -(-target_len // n)
    return Waveform(np.tile(w.samples, reps)[:target_len], w.sample_rate)


def load_utterance(path, target_len=DEFAULT_TARGET_LEN):
    w = read_wav(path)
    if w.sample_rate != PIPELINE_RATE:
        raise UnsupportedFormatError(f"{path}: sample rate {w.sample_rate} Hz; pipeline requires {PIPELINE_RATE}")
    return fix_length(w, target_len)


@dataclass(frozen=True)
class TrialRecord:
    speaker_id: str
    utt_id: str
    attack_id: str
    key: str

    def __post_init__(self):
        if self.key not in KEYS:
            raise ValueError(f"key must be one of {KEYS}, got {self.key!r}")
        if (self.key == "bonafide") != (self.attack_id == "-"):
            raise ValueError(f"{self.utt_id}: bonafide trials (and only those) carry attack '-'")

    @property
    def is_bonafide(self):
        return self.key == "bonafide"


def parse_protocol_lines(lines, source="<protocol>"):
    records = []
    seen = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = text.split()
        if len(fields) < 5:
            raise ProtocolParseError(f"{source}:{lineno}: expected 5 fields, got {len(fields)}")
        speaker, utt, _, attack, key = fields[:5]
        key = key.lower()
        if key not in KEYS:
            raise ProtocolParseError(f"{source}:{lineno}: unknown key {fields[4]!r} (line {lineno})")
        if utt in seen:
            raise ProtocolParseError(f"{source}:{lineno}: duplicate utt_id {utt!r} (first on line {seen[utt]})")
        seen[utt] = lineno
        try:
            records.append(TrialRecord(speaker, utt, attack, key))
        except ValueError as exc:
            raise ProtocolParseError(f"{source}:{lineno}: {exc}") from exc
    return records


def parse_protocol(path):
    with open(path, encoding="utf-8") as fh:
        return parse_protocol_lines(fh, str(path))


def serialize_protocol(records):
    return "".join(f"{r.speaker_id} {r.utt_id} - {r.attack_id} {r.key}\n" for r in records)


def write_protocol(path, records):
    Path(path).write_text(serialize_protocol(records), encoding="utf-8")
