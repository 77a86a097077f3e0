"""Audio primitives: clips, band filtering, framing, spectra, autocorrelation.

Everything downstream (segmentation, features) is built on the operations in
this module, so the numeric conventions are pinned here:

- clips are float64 arrays at 16 kHz, values nominally within [-1, 1];
- frames are 400 samples (25 ms) advanced by 160 samples (10 ms);
- spectra store raw squared magnitudes of the one-sided DFT (201 bins,
  40 Hz apart); Parseval bookkeeping lives in ``Spectrum.total_energy``;
- autocorrelation is the normalized cross-correlation form, exactly
  reproducible by a double loop.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, sosfilt

from .errors import EmptyInput, InvalidBand, InvalidInput, IoError, TooShort

SAMPLE_RATE = 16000
FRAME_LEN = 400     # 25 ms
HOP = 160           # 10 ms
N_BINS = FRAME_LEN // 2 + 1
BIN_HZ = SAMPLE_RATE / FRAME_LEN

_WINDOW = np.hamming(FRAME_LEN)

# int16 <-> float scale; 32768 makes read->write round-trip bit exact
_PCM_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    """A mono clip. Rejects non-finite samples and non-16 kHz rates."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise InvalidInput(f"clip must be 1-d, got shape {s.shape}")
        if s.size and not np.all(np.isfinite(s)):
            raise InvalidInput("clip contains NaN or Inf samples")
        if self.sample_rate != SAMPLE_RATE:
            raise InvalidInput(
                f"sample_rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class Frame:
    """One analysis frame: raw samples plus the Hamming-windowed copy."""

    raw: np.ndarray
    windowed: np.ndarray
    start: int
    sample_rate: int = SAMPLE_RATE

    @property
    def start_s(self) -> float:
        return self.start / self.sample_rate


@dataclass(frozen=True)
class FrameSet:
    """All frames of a clip as two (n, FRAME_LEN) arrays.

    Raw frames are kept separately from the windowed copies because
    autocorrelation and energy tracking operate on unwindowed samples.
    Indexing returns a ``Frame`` view; the arrays are the fast path.
    """

    raw: np.ndarray
    windowed: np.ndarray
    starts: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __len__(self) -> int:
        return self.raw.shape[0]

    def __getitem__(self, i: int) -> Frame:
        return Frame(self.raw[i], self.windowed[i], int(self.starts[i]),
                     self.sample_rate)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def times_s(self) -> np.ndarray:
        """Start time of each frame in seconds."""
        return self.starts / self.sample_rate


@dataclass(frozen=True)
class Spectrum:
    """One-sided squared-magnitude spectrum of a single frame.

    ``magnitudes[k]`` is plain ``|X[k]|^2`` with no symmetry weighting, so a
    unit impulse gives a flat spectrum. ``total_energy`` applies the one-sided
    Parseval weights (interior bins doubled, then divided by the frame
    length) and equals the windowed-frame energy.
    """

    magnitudes: np.ndarray
    bin_hz: float = BIN_HZ
    frame_len: int = FRAME_LEN

    def total_energy(self) -> float:
        m = self.magnitudes
        return float((m[0] + 2.0 * m[1:-1].sum() + m[-1]) / self.frame_len)


def bandpass(clip: AudioClip, low_hz: float = 20.0,
             high_hz: float = 8000.0) -> AudioClip:
    """Band-limit a clip with a cascaded Butterworth section filter.

    The passband contract is +-1 dB on [2*low_hz, 0.9*high_hz] and >= 30 dB
    of attenuation one octave below low_hz. A 6th-order high-pass meets the
    30 dB figure (a 4th-order rolls off only ~24 dB/octave); the low-pass is
    8th order and is skipped when high_hz sits at the Nyquist frequency,
    where the default band [20, 8000] puts it.
    """
    if len(clip) == 0:
        raise EmptyInput("cannot filter an empty clip")
    nyq = clip.sample_rate / 2.0
    if not (0.0 < low_hz < high_hz <= nyq):
        raise InvalidBand(
            f"need 0 < low < high <= {nyq:g} Hz, got [{low_hz:g}, {high_hz:g}]")
    out = sosfilt(butter(6, low_hz / nyq, btype="highpass", output="sos"),
                  clip.samples)
    if high_hz < 0.999 * nyq:
        out = sosfilt(butter(8, high_hz / nyq, btype="lowpass", output="sos"),
                      out)
    return AudioClip(out, clip.sample_rate)


def frame_clip(clip: AudioClip) -> FrameSet:
    """Slice a clip into 25 ms frames with 10 ms hop.

    The trailing remainder shorter than one frame is dropped. Raises
    ``TooShort`` when the clip cannot fill a single frame.
    """
    n = len(clip)
    if n < FRAME_LEN:
        raise TooShort(f"clip has {n} samples, need >= {FRAME_LEN}")
    count = 1 + (n - FRAME_LEN) // HOP
    starts = np.arange(count) * HOP
    idx = starts[:, None] + np.arange(FRAME_LEN)[None, :]
    raw = clip.samples[idx]
    return FrameSet(raw=raw, windowed=raw * _WINDOW, starts=starts,
                    sample_rate=clip.sample_rate)


def power_spectra(windowed: np.ndarray) -> np.ndarray:
    """Squared-magnitude one-sided DFT per row of a (n, FRAME_LEN) array."""
    x = np.fft.rfft(windowed, axis=-1)
    return (x.real * x.real + x.imag * x.imag)


def power_spectrum(frame: Frame | np.ndarray) -> Spectrum:
    """Squared-magnitude spectrum of one windowed frame (201 bins, 40 Hz)."""
    w = frame.windowed if isinstance(frame, Frame) else np.asarray(frame)
    if w.ndim != 1:
        raise InvalidInput(f"expected one frame, got shape {w.shape}")
    if w.size != FRAME_LEN:
        raise InvalidInput(f"frame must have {FRAME_LEN} samples, got {w.size}")
    return Spectrum(power_spectra(w))


def autocorr_numerators(raw: np.ndarray, max_lag: int) -> np.ndarray:
    """Raw lagged products sum(x[n] x[n+tau]) for tau = 0..max_lag per row.

    Computed with an FFT of length >= 2 * FRAME_LEN; agrees with the direct
    double loop to ~1e-12 relative.
    """
    n = raw.shape[-1]
    nfft = 1
    while nfft < 2 * n:
        nfft *= 2
    spec = np.fft.rfft(raw, n=nfft, axis=-1)
    full = np.fft.irfft(spec.real * spec.real + spec.imag * spec.imag,
                        n=nfft, axis=-1)
    return full[..., :max_lag + 1]


def normalized_autocorrelation(frame: Frame | np.ndarray,
                               max_lag: int) -> np.ndarray:
    """Normalized autocorrelation of one raw frame over lags 0..max_lag.

    r[tau] = sum(x[n] x[n+tau]) / sqrt(sum(x[:n-tau]^2) sum(x[tau:]^2)),
    which keeps every value inside [-1, 1] and fixes r[0] = 1 for any
    nonzero frame. Zero-energy frames (and lags whose overlap has zero
    energy) map to 0 by convention.
    """
    x = frame.raw if isinstance(frame, Frame) else np.asarray(frame, float)
    if x.ndim != 1:
        raise InvalidInput(f"expected one frame, got shape {x.shape}")
    if not (0 <= max_lag < x.size):
        raise InvalidInput(f"max_lag must be in [0, {x.size - 1}], got {max_lag}")
    return _nccf(x[None, :], max_lag)[0]


def _nccf(raw: np.ndarray, max_lag: int, min_lag: int = 0) -> np.ndarray:
    """Batched normalized autocorrelation, lags min_lag..max_lag inclusive."""
    n = raw.shape[-1]
    nums = autocorr_numerators(raw, max_lag)[..., min_lag:]
    sq = raw * raw
    cs = np.concatenate([np.zeros(raw.shape[:-1] + (1,)), np.cumsum(sq, -1)], -1)
    lags = np.arange(min_lag, max_lag + 1)
    head = cs[..., n - lags]                  # sum of x[0 : n - tau]^2
    tail = cs[..., n:n + 1] - cs[..., lags]   # sum of x[tau : n]^2
    denom = np.sqrt(head * tail)
    out = np.zeros_like(nums)
    ok = denom > 0.0
    np.divide(nums, denom, out=out, where=ok)
    return np.clip(out, -1.0, 1.0)


def frame_energies(raw: np.ndarray) -> np.ndarray:
    """Mean squared sample value per raw frame."""
    return np.mean(raw * raw, axis=-1)


def read_wav(path) -> AudioClip:
    """Load a 16-bit PCM mono 16 kHz RIFF file; anything else is rejected."""
    try:
        with wave.open(str(path), "rb") as f:
            params = f.getparams()
            data = f.readframes(params.nframes)
    except FileNotFoundError as e:
        raise IoError(f"no such file: {path}") from e
    except (wave.Error, EOFError, OSError) as e:
        raise IoError(f"not a readable RIFF/WAVE file: {path} ({e})") from e
    if params.comptype != "NONE" or params.sampwidth != 2:
        raise InvalidInput(
            f"{path}: expected 16-bit PCM, got comptype={params.comptype!r} "
            f"sampwidth={params.sampwidth}")
    if params.nchannels != 1:
        raise InvalidInput(f"{path}: expected mono, got {params.nchannels} channels")
    if params.framerate != SAMPLE_RATE:
        raise InvalidInput(
            f"{path}: expected {SAMPLE_RATE} Hz, got {params.framerate} Hz")
    ints = np.frombuffer(data, dtype="<i2")
    return AudioClip(ints.astype(np.float64) / _PCM_SCALE)


def write_wav(path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM mono 16 kHz, clipping to full scale."""
    ints = np.round(clip.samples * _PCM_SCALE)
    ints = np.clip(ints, -32768, 32767).astype("<i2")
    try:
        with wave.open(str(path), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(clip.sample_rate)
            f.writeframes(ints.tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
