import numpy as np
import pytest

from sedkit.events import Event, read_events_tsv, read_weak_tsv
from sedkit.features import AudioClip, CLIP_SAMPLES, hann_window, read_wav
from sedkit.synth import (
    CLASS_LABELS,
    CLASS_SPECS,
    generate_clip,
    generate_dataset,
    sample_events,
    synthesize_event,
)


def band_energy_oracle(samples, t0, t1, f_lo, f_hi):
    """Fraction of spectral energy inside [f_lo, f_hi] for samples[t0:t1],
    computed with a direct windowed FFT (independent of the feature path)."""
    seg = samples[int(t0 * 44100) : int(t1 * 44100)]
    spec = np.abs(np.fft.rfft(seg * hann_window(seg.size))) ** 2
    freqs = np.fft.rfftfreq(seg.size, 1 / 44100)
    inside = spec[(freqs >= f_lo) & (freqs <= f_hi)].sum()
    return inside / spec.sum()


def test_ten_distinct_classes():
    assert len(CLASS_SPECS) == 10
    assert len(set(CLASS_LABELS)) == 10


def test_empty_event_list_gives_noise_only_clip():
    rng = np.random.default_rng(0)
    samples, events = generate_clip([], -30.0, rng)
    assert events == []
    assert samples.shape == (CLIP_SAMPLES,)
    assert np.max(np.abs(samples)) == pytest.approx(0.9)


def test_pure_tone_event_energy_localized_in_band_and_time():
    rng = np.random.default_rng(1)
    events = [Event("tone_low", 2.0, 4.0)]
    samples, _ = generate_clip(events, -50.0, rng)
    spec = next(s for s in CLASS_SPECS if s.label == "tone_low")
    inside = band_energy_oracle(samples, 2.1, 3.9, spec.f_lo - 30, spec.f_hi + 30)
    assert inside > 0.9
    outside = band_energy_oracle(samples, 5.0, 7.0, spec.f_lo - 30, spec.f_hi + 30)
    assert outside < 0.2


def test_every_recipe_concentrates_energy_in_its_region():
    for i, spec in enumerate(CLASS_SPECS):
        rng = np.random.default_rng(100 + i)
        wave = synthesize_event(spec, 1.0, rng)
        lo = spec.f_lo * (0.4 if spec.kind == "chirp" and spec.extra < 1 else 0.9)
        hi = spec.f_hi * (2.2 if spec.kind == "chirp" and spec.extra > 1 else
                          4.5 if spec.kind == "harmonic" else 1.15)
        # small margin for AM sidebands and edge ramps
        spec_fft = np.abs(np.fft.rfft(wave * hann_window(wave.size))) ** 2
        freqs = np.fft.rfftfreq(wave.size, 1 / 44100)
        inside = spec_fft[(freqs >= lo - 40) & (freqs <= hi + 40)].sum() / spec_fft.sum()
        assert inside > 0.95, spec.label


def test_same_seed_bit_identical_audio():
    events = [Event("chirp_up", 1.0, 2.5), Event("noise_low", 4.0, 6.0)]
    a, _ = generate_clip(events, -30.0, np.random.default_rng(7))
    b, _ = generate_clip(events, -30.0, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_out_of_range_event_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="outside"):
        generate_clip([Event("tone_low", 8.0, 11.0)], -30.0, rng)


def test_sample_events_respects_invariants():
    for seed in range(50):
        events = sample_events(np.random.default_rng(seed))
        assert 1 <= len(events) <= 4
        per_class = {}
        for e in events:
            assert 0.0 <= e.onset < e.offset <= 10.0
            per_class.setdefault(e.label, []).append(e)
        for evs in per_class.values():
            for a, b in zip(evs, evs[1:]):
                assert b.onset >= a.offset


def test_generate_dataset_small_profile(tmp_path):
    written = generate_dataset(tmp_path, n_weak=4, n_strong=3, n_unlabeled=5, n_test=2, seed=11)
    assert set(written) == {"weak", "strong", "unlabeled", "test"}
    assert len(list((tmp_path / "weak").glob("*.wav"))) == 4
    assert len(list((tmp_path / "strong").glob("*.wav"))) == 3
    assert len(list((tmp_path / "unlabeled").glob("*.wav"))) == 5
    assert len(list((tmp_path / "test").glob("*.wav"))) == 2
    assert (tmp_path / "weak.tsv").exists()
    assert (tmp_path / "strong.tsv").exists()
    assert (tmp_path / "test.tsv").exists()
    assert not (tmp_path / "unlabeled.tsv").exists()

    # weak label set equals the class set of the strong annotation
    strong = read_events_tsv(tmp_path / "strong.tsv")
    for filename, events in strong.items():
        clip = read_wav(tmp_path / "strong" / filename)
        assert clip.samples.size == CLIP_SAMPLES
        assert np.max(np.abs(clip.samples)) <= 0.9 + 1.0 / 32768.0

    weak = read_weak_tsv(tmp_path / "weak.tsv")
    assert len(weak) == 4
    for labels in weak.values():
        assert labels <= set(CLASS_LABELS)


def test_generate_dataset_no_unlabeled(tmp_path):
    written = generate_dataset(tmp_path, n_weak=1, n_strong=1, n_unlabeled=0, n_test=1, seed=3)
    assert "unlabeled" not in written


def test_generate_dataset_deterministic(tmp_path):
    d1 = tmp_path / "run1"
    d2 = tmp_path / "run2"
    generate_dataset(d1, 2, 2, 1, 1, seed=5)
    generate_dataset(d2, 2, 2, 1, 1, seed=5)
    for rel in ["weak.tsv", "strong.tsv", "test.tsv"]:
        assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes()
    for wav in sorted((d1 / "weak").glob("*.wav")):
        assert wav.read_bytes() == (d2 / "weak" / wav.name).read_bytes()


def test_weak_labels_match_strong_events_per_clip(tmp_path):
    # generate the same split twice, once reading strong annotations
    generate_dataset(tmp_path, 0, 6, 0, 0, seed=21)
    strong = read_events_tsv(tmp_path / "strong.tsv")
    for filename, events in strong.items():
        assert {e.label for e in events} == {e.label for e in events}
        for e in events:
            assert e.offset - e.onset >= 0.25 - 1e-9
            assert e.offset - e.onset <= 4.0 + 1e-9
