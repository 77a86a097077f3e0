"""Signal-layer contracts, each checked against a slow independent oracle."""
import wave

import numpy as np
import pytest

from toothsonic.dsp import (
    BIN_HZ, FRAME_LEN, HOP, SAMPLE_RATE,
    AudioClip, Spectrum, bandpass, frame_clip, frame_energies,
    normalized_autocorrelation, power_spectra, power_spectrum,
    read_wav, write_wav,
)
from toothsonic.errors import (
    EmptyInput, InvalidBand, InvalidInput, IoError, TooShort,
)


def sine(freq, dur_s=1.0, amp=0.5, rate=SAMPLE_RATE):
    t = np.arange(int(dur_s * rate)) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq * t))


def rms(x):
    return np.sqrt(np.mean(np.square(x)))


def dft_power_oracle(frame):
    """Brute-force one-sided squared-magnitude DFT, O(N^2)."""
    n = len(frame)
    out = np.empty(n // 2 + 1)
    for k in range(n // 2 + 1):
        acc = 0.0 + 0.0j
        for i in range(n):
            acc += frame[i] * np.exp(-2j * np.pi * k * i / n)
        out[k] = abs(acc) ** 2
    return out


def nccf_oracle(x, max_lag):
    """Double-loop normalized autocorrelation."""
    n = len(x)
    out = np.zeros(max_lag + 1)
    for tau in range(max_lag + 1):
        num = d1 = d2 = 0.0
        for i in range(n - tau):
            num += x[i] * x[i + tau]
            d1 += x[i] * x[i]
            d2 += x[i + tau] * x[i + tau]
        if d1 > 0 and d2 > 0:
            out[tau] = num / np.sqrt(d1 * d2)
    return out


class TestAudioClip:
    def test_rejects_nan_and_inf(self):
        with pytest.raises(InvalidInput):
            AudioClip(np.array([0.0, np.nan]))
        with pytest.raises(InvalidInput):
            AudioClip(np.array([np.inf]))

    def test_rejects_other_rates(self):
        with pytest.raises(InvalidInput):
            AudioClip(np.zeros(10), sample_rate=44100)

    def test_duration(self):
        assert sine(100, 0.5).duration_s == pytest.approx(0.5)


class TestBandpass:
    def test_passband_sine_within_1db(self):
        clip = sine(1000.0)
        out = bandpass(clip).samples[8000:]  # steady state half
        ratio_db = 20 * np.log10(rms(out) / rms(clip.samples[8000:]))
        assert abs(ratio_db) <= 1.0

    def test_stopband_sine_attenuated_30db(self):
        clip = sine(10.0)
        out = bandpass(clip).samples[8000:]
        ratio_db = 20 * np.log10(rms(out) / rms(clip.samples[8000:]))
        assert ratio_db <= -30.0

    def test_passband_flat_across_band(self):
        # +-1 dB over [2*low, 0.9*high] for a band whose low-pass is active
        low, high = 100.0, 4000.0
        for freq in [200.0, 500.0, 1000.0, 2000.0, 3000.0, 3600.0]:
            clip = sine(freq, dur_s=2.0)
            out = bandpass(clip, low, high).samples[16000:]
            ratio_db = 20 * np.log10(rms(out) / rms(clip.samples[16000:]))
            assert abs(ratio_db) <= 1.0, f"{freq} Hz off by {ratio_db:.2f} dB"

    def test_empty_clip(self):
        with pytest.raises(EmptyInput):
            bandpass(AudioClip(np.zeros(0)))

    def test_invalid_band_edges(self):
        clip = sine(100, 0.1)
        with pytest.raises(InvalidBand):
            bandpass(clip, 100.0, 100.0)
        with pytest.raises(InvalidBand):
            bandpass(clip, 300.0, 200.0)
        with pytest.raises(InvalidBand):
            bandpass(clip, 20.0, 9000.0)
        with pytest.raises(InvalidBand):
            bandpass(clip, 0.0, 8000.0)

    def test_linearity(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            x = rng.standard_normal(2000) * 0.3
            y = rng.standard_normal(2000) * 0.3
            a, b = rng.uniform(-2, 2, size=2)
            lhs = bandpass(AudioClip(a * x + b * y)).samples
            rhs = (a * bandpass(AudioClip(x)).samples
                   + b * bandpass(AudioClip(y)).samples)
            assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_deterministic(self):
        clip = sine(440, 0.3)
        first = bandpass(clip).samples
        second = bandpass(clip).samples
        assert np.array_equal(first, second)


class TestFraming:
    def test_frame_count_one_second(self):
        frames = frame_clip(sine(100, 1.0))
        assert len(frames) == (16000 - FRAME_LEN) // HOP + 1 == 98

    def test_exact_one_frame(self):
        clip = AudioClip(np.ones(FRAME_LEN) * 0.1)
        frames = frame_clip(clip)
        assert len(frames) == 1
        assert frames.starts[0] == 0

    def test_too_short(self):
        with pytest.raises(TooShort):
            frame_clip(AudioClip(np.zeros(FRAME_LEN - 1)))

    def test_window_applied(self):
        rng = np.random.default_rng(3)
        clip = AudioClip(rng.standard_normal(1000) * 0.2)
        frames = frame_clip(clip)
        w = np.hamming(FRAME_LEN)
        for f in frames:
            assert np.allclose(f.windowed, f.raw * w, atol=0)

    def test_frames_tile_with_hop(self):
        clip = AudioClip(np.arange(1200, dtype=float) / 1200)
        frames = frame_clip(clip)
        for i, f in enumerate(frames):
            assert f.start == i * HOP
            assert np.array_equal(f.raw, clip.samples[f.start:f.start + FRAME_LEN])

    def test_times(self):
        frames = frame_clip(sine(100, 0.5))
        assert frames.times_s[1] == pytest.approx(HOP / SAMPLE_RATE)


class TestPowerSpectrum:
    def test_matches_brute_force_dft(self):
        rng = np.random.default_rng(11)
        frame = rng.standard_normal(FRAME_LEN)
        fast = power_spectrum(frame).magnitudes
        slow = dft_power_oracle(frame)
        assert np.max(np.abs(fast - slow) / (np.abs(slow) + 1e-12)) < 1e-9

    def test_sine_at_bin_frequency(self):
        # 1000 Hz sits exactly on bin 25 at 40 Hz resolution
        t = np.arange(FRAME_LEN) / SAMPLE_RATE
        frame = np.sin(2 * np.pi * 1000.0 * t) * np.hamming(FRAME_LEN)
        mags = power_spectrum(frame).magnitudes
        assert np.argmax(mags) == 25
        assert 1000.0 / BIN_HZ == 25

    def test_impulse_is_flat(self):
        frame = np.zeros(FRAME_LEN)
        frame[37] = 1.0  # rectangular window for this check
        mags = power_spectrum(frame).magnitudes
        assert np.max(np.abs(mags - mags[0])) / mags[0] < 1e-9

    def test_parseval(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            frame = rng.standard_normal(FRAME_LEN) * rng.uniform(0.01, 3.0)
            spec = power_spectrum(frame)
            energy = np.sum(frame * frame)
            assert abs(spec.total_energy() - energy) / energy < 1e-6

    def test_bin_spacing(self):
        assert power_spectrum(np.zeros(FRAME_LEN)).bin_hz == pytest.approx(40.0)
        assert power_spectra(np.zeros((3, FRAME_LEN))).shape == (3, 201)

    def test_rejects_wrong_length(self):
        with pytest.raises(InvalidInput):
            power_spectrum(np.zeros(FRAME_LEN + 1))


class TestNormalizedAutocorrelation:
    def test_lag_zero_is_one(self):
        rng = np.random.default_rng(2)
        r = normalized_autocorrelation(rng.standard_normal(400), 320)
        assert r[0] == pytest.approx(1.0, abs=1e-12)

    def test_bounded(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            n = rng.integers(40, 401)
            x = rng.standard_normal(n) * rng.uniform(0.001, 10)
            r = normalized_autocorrelation(x, n - 1)
            assert np.all(r <= 1.0) and np.all(r >= -1.0)

    def test_sine_peak_at_period(self):
        t = np.arange(400) / SAMPLE_RATE
        x = np.sin(2 * np.pi * 200.0 * t)  # period = 80 samples
        r = normalized_autocorrelation(x, 320)
        assert int(np.argmax(r[16:])) + 16 == 80

    def test_zero_frame_convention(self):
        r = normalized_autocorrelation(np.zeros(400), 320)
        assert np.array_equal(r, np.zeros(321))

    def test_matches_double_loop(self):
        rng = np.random.default_rng(13)
        for n in [32, 57, 400]:
            x = rng.standard_normal(n)
            fast = normalized_autocorrelation(x, n - 1)
            slow = nccf_oracle(x, n - 1)
            assert np.max(np.abs(fast - slow)) < 1e-9

    def test_trailing_zeros_do_not_blow_up(self):
        x = np.zeros(400)
        x[:50] = np.random.default_rng(4).standard_normal(50)
        r = normalized_autocorrelation(x, 399)
        assert np.all(np.isfinite(r))
        assert np.array_equal(r[350:], np.zeros(50))  # empty overlap -> 0


class TestWavIo:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(21)
        ints = rng.integers(-32768, 32768, size=5000, dtype=np.int16)
        src = tmp_path / "src.wav"
        with wave.open(str(src), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(SAMPLE_RATE)
            f.writeframes(ints.astype("<i2").tobytes())
        clip = read_wav(src)
        dst = tmp_path / "dst.wav"
        write_wav(dst, clip)
        assert src.read_bytes() == dst.read_bytes()

    def test_write_then_read_quantization(self, tmp_path):
        clip = sine(333, 0.1, amp=0.7)
        p = tmp_path / "x.wav"
        write_wav(p, clip)
        back = read_wav(p)
        assert np.max(np.abs(back.samples - clip.samples)) <= 1.0 / 32768

    def test_rejects_stereo(self, tmp_path):
        p = tmp_path / "stereo.wav"
        with wave.open(str(p), "wb") as f:
            f.setnchannels(2)
            f.setsampwidth(2)
            f.setframerate(SAMPLE_RATE)
            f.writeframes(b"\x00\x00" * 200)
        with pytest.raises(InvalidInput):
            read_wav(p)

    def test_rejects_wrong_rate(self, tmp_path):
        p = tmp_path / "44k.wav"
        with wave.open(str(p), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(44100)
            f.writeframes(b"\x00\x00" * 200)
        with pytest.raises(InvalidInput):
            read_wav(p)

    def test_rejects_garbage_and_missing(self, tmp_path):
        p = tmp_path / "junk.wav"
        p.write_bytes(b"not a riff file at all")
        with pytest.raises(IoError):
            read_wav(p)
        with pytest.raises(IoError):
            read_wav(tmp_path / "absent.wav")

    def test_full_scale_clipping(self, tmp_path):
        clip = AudioClip(np.array([1.5, -1.5, 1.0, -1.0]))
        p = tmp_path / "hot.wav"
        write_wav(p, clip)
        back = read_wav(p)
        assert back.samples.max() <= 1.0 and back.samples.min() >= -1.0


class TestFrameEnergies:
    def test_matches_definition(self):
        rng = np.random.default_rng(17)
        raw = rng.standard_normal((5, FRAME_LEN))
        want = [np.mean(row ** 2) for row in raw]
        assert np.allclose(frame_energies(raw), want, rtol=1e-12)
