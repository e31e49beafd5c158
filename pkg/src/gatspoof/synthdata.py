"""Deterministic desk-scale corpus: harmonic "bona fide" speech stand-ins
against three synthetic attack families.

A01 white noise, A02 band-limited noise (spectral structure), A03 clipped
harmonic with gated bursts (temporal structure).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import DEFAULT_TARGET_LEN, PIPELINE_RATE, TrialRecord, Waveform, write_protocol, write_wav

ATTACKS = {"white_noise": "A01", "band_noise": "A02", "clipped_harmonic": "A03"}


@dataclass(frozen=True)
class SynthSpec:
    n_bonafide: int = 16
    n_spoof: int = 16
    attacks: tuple = ("white_noise", "band_noise", "clipped_harmonic")
    seed: int = 0
    n_samples: int = DEFAULT_TARGET_LEN
    prefix: str = "SYN"


def _harmonic(rng, n, amp):
    t = np.arange(n) / PIPELINE_RATE
    f0 = rng.uniform(110.0, 260.0)
    # slow pitch drift and syllable-rate amplitude envelope
    drift = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * f0 * np.cumsum(drift) / PIPELINE_RATE
    x = np.zeros(n)
    for h in range(1, 9):
        if h * f0 * 1.03 >= PIPELINE_RATE / 2:
            break
        x += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    x *= env
    return amp * x / np.max(np.abs(x))


def bonafide_signal(rng, n):
    return _harmonic(rng, n, rng.uniform(0.2, 0.5)) + 1e-3 * rng.standard_normal(n)


def attack_signal(rng, family, n):
    amp = rng.uniform(0.1, 0.3)
    if family == "white_noise":
        return np.clip(amp * rng.standard_normal(n) / 3.0, -1.0, 1.0)
    if family == "band_noise":
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1.0 / PIPELINE_RATE)
        lo = rng.uniform(1000.0, 4000.0)
        spec[(freqs < lo) | (freqs > lo + 2000.0)] = 0.0
        x = np.fft.irfft(spec, n)
        return amp * x / np.max(np.abs(x))
    if family == "clipped_harmonic":
        x = _harmonic(rng, n, 1.0)
        x = np.clip(3.0 * x, -0.5, 0.5) / 0.5
        gate = (np.arange(n) // 1600) % 2  # 100 ms on / off bursts
        return amp * x * gate + 1e-3 * rng.standard_normal(n)
    raise ValueError(f"unknown attack family {family!r}")


def synth_corpus(spec):
    """Yield (TrialRecord, Waveform) pairs; bona fide first, then spoofs round-robin over attacks."""
    if spec.n_bonafide < 1 or spec.n_spoof < 1:
        raise ValueError("need at least one utterance per class")
    rng = np.random.default_rng(spec.seed)
    out = []
    k = 0
    for i in range(spec.n_bonafide):
        rec = TrialRecord(f"{spec.prefix}_SPK{i % 4}", f"{spec.prefix}_{k:05d}", "-", "bonafide")
        out.append((rec, Waveform(bonafide_signal(rng, spec.n_samples), PIPELINE_RATE)))
        k += 1
    for i in range(spec.n_spoof):
        family = spec.attacks[i % len(spec.attacks)]
        rec = TrialRecord(f"{spec.prefix}_SPK{i % 4}", f"{spec.prefix}_{k:05d}", ATTACKS[family], "spoof")
        out.append((rec, Waveform(attack_signal(rng, family, spec.n_samples), PIPELINE_RATE)))
        k += 1
    return out


def generate(spec, out_dir):
    """Write ``<utt_id>.wav`` files and ``protocol.txt`` into ``out_dir``; returns the protocol path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for rec, w in synth_corpus(spec):
        write_wav(out_dir / f"{rec.utt_id}.wav", w)
        records.append(rec)
    path = out_dir / "protocol.txt"
    write_protocol(path, records)
    return path


def spectral_flatness(samples, n_fft=512):
    """Geometric over arithmetic mean of the averaged power spectrum."""
    frames = np.asarray(samples)[: (len(samples) // n_fft) * n_fft].reshape(-1, n_fft)
    power = (np.abs(np.fft.rfft(frames * np.hanning(n_fft), axis=1)) ** 2).mean(axis=0) + 1e-20
    return float(np.exp(np.mean(np.log(power))) / np.mean(power))
