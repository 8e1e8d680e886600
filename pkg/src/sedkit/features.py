"""Log-mel feature extraction for fixed 10 s, 44.1 kHz mono clips.

Pipeline: pad/truncate to 441000 samples -> centered STFT (Hann 2048,
hop 431, reflection padding) -> power -> 128-band mel filterbank ->
natural log with an epsilon floor. Output is always 128 x 1024.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 44100
CLIP_SAMPLES = 441000
N_FFT = 2048
HOP = 431
N_MELS = 128
N_FRAMES = 1024
FLOOR_EPS = 1e-10
FMIN = 0.0
FMAX = SAMPLE_RATE / 2.0

FEATURE_MAGIC = b"HPFEAT1"

# seconds covered by one STFT hop; the model's output frames span 4 hops
HOP_SECONDS = HOP / SAMPLE_RATE


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("audio contains non-finite samples")


@dataclass
class MelSpectrogram:
    """128 x 1024 grid of log mel-band energies."""

    values: np.ndarray
    frame_hop_seconds: float = field(default=HOP_SECONDS)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (N_MELS, N_FRAMES):
            raise ValueError(f"mel spectrogram must be {N_MELS}x{N_FRAMES}, got {self.values.shape}")


def hann_window(n):
    """Symmetric Hann weights, w[k] = 0.5*(1 - cos(2*pi*k/(n-1)))."""
    if n < 2:
        raise ValueError(f"hann_window: n must be >= 2, got {n}")
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1)))


def pad_truncate(samples):
    """Force exactly 10 s: zero-pad short input at the end, keep the first
    441000 samples of long input."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("pad_truncate: empty input")
    if samples.size >= CLIP_SAMPLES:
        return samples[:CLIP_SAMPLES]
    out = np.zeros(CLIP_SAMPLES, dtype=np.float64)
    out[: samples.size] = samples
    return out


def stft_magnitude(clip):
    """One-sided STFT magnitudes, 1025 bins x 1024 frames.

    Frames are centered: the signal is reflection-padded by n_fft/2 on
    each side, giving floor(441000/431) + 1 = 1024 frames.
    """
    x = clip.samples
    if x.size != CLIP_SAMPLES:
        raise ValueError(f"stft_magnitude: clip must hold {CLIP_SAMPLES} samples, got {x.size}")
    pad = N_FFT // 2
    xp = np.pad(x, (pad, pad), mode="reflect")
    starts = np.arange(N_FRAMES) * HOP
    idx = starts[:, None] + np.arange(N_FFT)[None, :]
    frames = xp[idx] * hann_window(N_FFT)[None, :]
    return np.abs(np.fft.rfft(frames, axis=1)).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sr=SAMPLE_RATE, fmin=FMIN, fmax=FMAX):
    """Triangular filters with peaks equally spaced on the mel scale.

    Returns an (n_mels, n_fft//2 + 1) matrix. Raises if the resolution
    leaves any filter without a positive entry.
    """
    if not fmin < fmax <= sr / 2.0:
        raise ValueError(f"mel_filterbank: need fmin < fmax <= sr/2, got ({fmin}, {fmax})")
    n_bins = n_fft // 2 + 1
    bin_freqs = np.arange(n_bins) * (sr / n_fft)
    peaks = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, n_bins), dtype=np.float64)
    for i in range(n_mels):
        lo, mid, hi = peaks[i], peaks[i + 1], peaks[i + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        if not fb[i].any():
            raise ValueError(f"mel_filterbank: filter {i} is empty; too many bands for n_fft={n_fft}")
    return fb


_FILTERBANK_CACHE = {}


def _default_filterbank():
    key = (N_MELS, N_FFT, SAMPLE_RATE, FMIN, FMAX)
    if key not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[key] = mel_filterbank(*key)
    return _FILTERBANK_CACHE[key]


def mel_energies(clip):
    """Pre-log mel-band energies (128 x 1024) of a 44.1 kHz clip."""
    padded = AudioClip(pad_truncate(clip.samples))
    mag = stft_magnitude(padded)
    return _default_filterbank() @ (mag * mag)


def log_mel(clip):
    """Full feature front end: AudioClip -> 128 x 1024 MelSpectrogram."""
    return MelSpectrogram(np.log(mel_energies(clip) + FLOOR_EPS))


def augment_noise(energies, sigma, rng):
    """Add white Gaussian noise to pre-log mel energies.

    Noise std is sigma times the per-clip mean energy, so the strength is
    loudness-invariant; the result is clamped at zero from below.
    """
    if sigma < 0:
        raise ValueError(f"augment_noise: sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return energies
    scale = sigma * float(energies.mean())
    noisy = energies + rng.normal(0.0, scale, size=energies.shape)
    return np.clip(noisy, 0.0, None)


def augment_log_mel(log_values, sigma, rng):
    """Noise-augment stored log-mel values through the energy domain."""
    energies = np.clip(np.exp(log_values.astype(np.float64)) - FLOOR_EPS, 0.0, None)
    return np.log(augment_noise(energies, sigma, rng) + FLOOR_EPS).astype(np.float32)


# -- feature files (HPFEAT1) ----------------------------------------------


def save_features(path, mel):
    """Magic, two u32 little-endian dims, then row-major float32 values."""
    values = np.ascontiguousarray(mel.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", values.shape[0], values.shape[1]))
        f.write(values.tobytes())


def load_features(path):
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(FEATURE_MAGIC):
        raise ValueError(f"{path}: not an HPFEAT1 feature file")
    off = len(FEATURE_MAGIC)
    rows, cols = struct.unpack_from("<II", blob, off)
    off += 8
    values = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off)
    return MelSpectrogram(values.reshape(rows, cols).copy())


# -- WAV I/O (16-bit PCM mono) ---------------------------------------------


def read_wav(path):
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, sample_rate=rate)


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    pcm = np.clip(np.asarray(samples) * 32768.0, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())
