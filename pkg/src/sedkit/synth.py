"""Deterministic surrogate corpus: 10 s clips of parametric sound events.

Ten classes cover five recipe families (pure tones, chirps, narrowband
noise bursts, amplitude-modulated tones, harmonic stacks), two disjoint
frequency regions each, so a small network can genuinely separate them
while per-event jitter keeps the task non-trivial. Realism is a
non-goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import Event, validate_event_list, write_events_tsv, write_weak_tsv
from .features import CLIP_SAMPLES, SAMPLE_RATE, write_wav

CLIP_SECONDS = 10.0
EDGE_RAMP_SECONDS = 0.01
PEAK_TARGET = 0.9
MIN_EVENT_SECONDS = 0.25
MAX_EVENT_SECONDS = 4.0


@dataclass(frozen=True)
class SoundClassSpec:
    label: str
    kind: str  # tone | chirp | noise_band | am_tone | harmonic
    f_lo: float  # low edge of the class's frequency region (Hz)
    f_hi: float  # high edge (Hz)
    extra: float = 0.0  # chirp: end/start ratio; am: mod rate; harmonic: decay


CLASS_SPECS = (
    SoundClassSpec("tone_low", "tone", 220.0, 300.0),
    SoundClassSpec("tone_high", "tone", 2950.0, 3650.0),
    SoundClassSpec("chirp_up", "chirp", 460.0, 560.0, extra=2.0),
    SoundClassSpec("chirp_down", "chirp", 7200.0, 8400.0, extra=0.5),
    SoundClassSpec("noise_low", "noise_band", 1150.0, 1750.0),
    SoundClassSpec("noise_high", "noise_band", 10200.0, 12800.0),
    SoundClassSpec("am_low", "am_tone", 620.0, 760.0, extra=7.0),
    SoundClassSpec("am_high", "am_tone", 4800.0, 5600.0, extra=3.0),
    SoundClassSpec("harm_low", "harmonic", 330.0, 400.0, extra=0.6),
    SoundClassSpec("harm_high", "harmonic", 1700.0, 2050.0, extra=0.5),
)

CLASS_LABELS = tuple(spec.label for spec in CLASS_SPECS)
_SPEC_BY_LABEL = {spec.label: spec for spec in CLASS_SPECS}


def _edge_ramp(n):
    ramp_n = min(int(EDGE_RAMP_SECONDS * SAMPLE_RATE), n // 2)
    env = np.ones(n)
    if ramp_n > 0:
        ramp = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, ramp_n)))
        env[:ramp_n] = ramp
        env[-ramp_n:] = ramp[::-1]
    return env


def synthesize_event(spec, duration, rng):
    """One event's waveform at unit peak, per its class recipe."""
    n = max(int(round(duration * SAMPLE_RATE)), 16)
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(spec.f_lo, spec.f_hi)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    if spec.kind == "tone":
        x = np.sin(2.0 * math.pi * f0 * t + phase)
    elif spec.kind == "chirp":
        f1 = f0 * spec.extra
        x = np.sin(2.0 * math.pi * (f0 * t + (f1 - f0) * t * t / (2.0 * duration)) + phase)
    elif spec.kind == "noise_band":
        white = rng.normal(size=n)
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
        spectrum[(freqs < spec.f_lo) | (freqs > spec.f_hi)] = 0.0
        x = np.fft.irfft(spectrum, n)
        peak = np.max(np.abs(x))
        x = x / peak if peak > 0 else x
    elif spec.kind == "am_tone":
        rate = spec.extra * rng.uniform(0.75, 1.25)
        depth = 0.9
        envelope = (1.0 + depth * np.sin(2.0 * math.pi * rate * t)) / (1.0 + depth)
        x = envelope * np.sin(2.0 * math.pi * f0 * t + phase)
    elif spec.kind == "harmonic":
        decay = spec.extra
        x = np.zeros(n)
        for k in range(1, 5):
            x += decay ** (k - 1) * np.sin(2.0 * math.pi * k * f0 * t + rng.uniform(0, 2 * math.pi))
        x /= np.max(np.abs(x))
    else:
        raise ValueError(f"unknown recipe kind '{spec.kind}'")
    return x * _edge_ramp(n)


def generate_clip(events, noise_floor_db, rng):
    """Render events over a Gaussian noise floor; peak-normalized to 0.9.

    Events must lie inside [0, 10] s and not overlap within a class.
    Returns (samples, events).
    """
    for e in events:
        if e.onset < 0.0 or e.offset > CLIP_SECONDS:
            raise ValueError(f"event ({e.onset:.3f}, {e.offset:.3f}) outside the 10 s clip")
    validate_event_list(sorted(events, key=lambda e: e.onset))
    noise_std = 10.0 ** (noise_floor_db / 20.0)
    samples = rng.normal(0.0, noise_std, size=CLIP_SAMPLES)
    for e in sort_key_order(events):
        spec = _SPEC_BY_LABEL[e.label]
        amplitude = rng.uniform(0.25, 1.0)
        wave = synthesize_event(spec, e.offset - e.onset, rng) * amplitude
        start = int(round(e.onset * SAMPLE_RATE))
        end = min(start + wave.size, CLIP_SAMPLES)
        samples[start:end] += wave[: end - start]
    peak = np.max(np.abs(samples))
    if peak > 0:
        samples *= PEAK_TARGET / peak
    return samples, sorted(events, key=lambda e: (e.onset, e.offset, e.label))


def sort_key_order(events):
    # deterministic synthesis order regardless of caller ordering
    return sorted(events, key=lambda e: (e.onset, e.offset, e.label))


def sample_events(rng, max_events=4):
    """1 to max_events random events; same-class overlaps are resampled
    and dropped after a few failed tries."""
    n_target = int(rng.integers(1, max_events + 1))
    events = []
    for _ in range(n_target):
        for _ in range(8):  # retries
            label = CLASS_LABELS[rng.integers(len(CLASS_LABELS))]
            duration = float(rng.uniform(MIN_EVENT_SECONDS, MAX_EVENT_SECONDS))
            onset = float(rng.uniform(0.0, CLIP_SECONDS - duration))
            candidate = Event(label, round(onset, 3), round(onset + duration, 3))
            same = [e for e in events if e.label == label]
            if all(candidate.offset <= e.onset or candidate.onset >= e.offset for e in same):
                events.append(candidate)
                break
    if not events:
        events.append(Event(CLASS_LABELS[0], 1.0, 2.0))
    return sorted(events, key=lambda e: (e.onset, e.offset, e.label))


def _clip_rng(seed, split_index, clip_index):
    return np.random.default_rng(np.random.SeedSequence((seed, split_index, clip_index)))


def generate_dataset(out_dir, n_weak, n_strong, n_unlabeled, n_test, seed, noise_floor_db=-30.0):
    """Write the four splits; weak keeps only the label set, unlabeled
    drops labels entirely, test keeps strong labels for evaluation.

    Returns the split directory paths that were written.
    """
    out_dir = Path(out_dir)
    splits = (("weak", n_weak), ("strong", n_strong), ("unlabeled", n_unlabeled), ("test", n_test))
    written = {}
    for split_index, (split, count) in enumerate(splits):
        if count == 0:
            continue
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        strong_labels = {}
        weak_labels = {}
        for i in range(count):
            rng = _clip_rng(seed, split_index, i)
            events = sample_events(rng)
            samples, events = generate_clip(events, noise_floor_db, rng)
            filename = f"{split}_{i:05d}.wav"
            write_wav(split_dir / filename, samples)
            strong_labels[filename] = events
            weak_labels[filename] = {e.label for e in events}
        if split in ("strong", "test"):
            write_events_tsv(out_dir / f"{split}.tsv", strong_labels)
        elif split == "weak":
            write_weak_tsv(out_dir / "weak.tsv", weak_labels)
        written[split] = split_dir
    return written
