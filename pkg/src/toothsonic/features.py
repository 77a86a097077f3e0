"""Per-segment acoustic features and the fixed 66-dimensional layout.

The vector layout is a stable on-disk contract (CSV column order), so the
assembly order here must never change:

    mfcc_mean[14] | mfcc_std[14] | pitch_mean, pitch_std | hr_mean, hr_max |
    entropy, flatness, crest, centroid | sonorant_fricative_ratio |
    logspec_bands[16] | lpc[12] | active_fraction
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dsp import (
    BIN_HZ, FRAME_LEN, N_BINS, SAMPLE_RATE,
    autocorr_numerators, frame_energies, power_spectra,
)
from .errors import EmptyInput, InvalidInput, IoError
from .segment import GestureSegment

N_MEL_FILTERS = 26
N_MFCC = 14
N_LOGSPEC_BANDS = 16
LPC_ORDER = 12
MEL_LOW_HZ = 20.0
MEL_HIGH_HZ = 8000.0
LOG_FLOOR = 1e-10         # mel energies and band powers are floored here
SILENCE_FLOOR = 1e-10     # frames below this mean-square power are silent

THETA_ACTIVE = 0.5
THETA_S = 0.1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, float) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def mel_filterbank(n_filters: int = N_MEL_FILTERS, n_bins: int = N_BINS,
                   bin_hz: float = BIN_HZ, low_hz: float = MEL_LOW_HZ,
                   high_hz: float = MEL_HIGH_HZ) -> np.ndarray:
    """Triangular mel filters evaluated at bin centers, shape (filters, bins)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz),
                                  n_filters + 2))
    freqs = np.arange(n_bins) * bin_hz
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - left) / (center - left)
    down = (right - freqs[None, :]) / (right - center)
    return np.maximum(0.0, np.minimum(up, down))


@lru_cache(maxsize=4)
def dct_matrix(n: int = N_MEL_FILTERS) -> np.ndarray:
    """Orthonormal DCT-II matrix, rows are basis vectors."""
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    d = np.sqrt(2.0 / n) * np.cos(np.pi * i * (2 * j + 1) / (2 * n))
    d[0] *= np.sqrt(0.5)
    return d


def _check_frames(seg: GestureSegment):
    if len(seg.frames) == 0:
        raise EmptyInput("segment has no frames")


def mfcc_from_spectra(spectra: np.ndarray, n_coeffs: int = N_MFCC) -> np.ndarray:
    energies = spectra @ mel_filterbank().T
    logs = np.log(np.maximum(energies, LOG_FLOOR))
    return logs @ dct_matrix().T[:, :n_coeffs]


def mfcc(seg: GestureSegment, n_coeffs: int = N_MFCC) -> np.ndarray:
    """Mel cepstra per frame, shape (frames, n_coeffs).

    26 triangular mel filters over [20, 8000] Hz on the squared-magnitude
    spectrum, natural log with a 1e-10 floor, orthonormal DCT-II, lowest
    n_coeffs coefficients kept.
    """
    _check_frames(seg)
    if not 1 <= n_coeffs <= N_MEL_FILTERS:
        raise InvalidInput(f"n_coeffs must be in [1, {N_MEL_FILTERS}]")
    return mfcc_from_spectra(power_spectra(seg.frames.windowed), n_coeffs)


def delta_mfcc(coeffs: np.ndarray) -> np.ndarray:
    """Two-point central difference per coefficient, one-sided at the edges."""
    coeffs = np.asarray(coeffs, float)
    if coeffs.ndim != 2:
        raise InvalidInput(f"expected (frames, coeffs), got {coeffs.shape}")
    out = np.zeros_like(coeffs)
    if coeffs.shape[0] > 1:
        out[1:-1] = 0.5 * (coeffs[2:] - coeffs[:-2])
        out[0] = coeffs[1] - coeffs[0]
        out[-1] = coeffs[-1] - coeffs[-2]
    return out


def active_portion(delta: np.ndarray,
                   theta_active: float = THETA_ACTIVE) -> tuple[np.ndarray, float]:
    """Active-frame mask from delta magnitude, plus the active fraction.

    The delta matrix is scaled by its own RMS (no centering: centering would
    push dead-still frames over the threshold), then frame i is active when
    the scaled row norm exceeds theta_active. An all-zero delta yields no
    active frames and fraction 0.
    """
    delta = np.asarray(delta, float)
    rms = np.sqrt(np.mean(delta * delta))
    if rms <= 1e-12:
        return np.zeros(delta.shape[0], dtype=bool), 0.0
    norms = np.sqrt(np.sum(delta * delta, axis=1)) / rms
    mask = norms > theta_active
    return mask, float(np.mean(mask))


def pitch_track(seg: GestureSegment, hr_threshold: float = 0.3) -> np.ndarray:
    """Per-frame pitch in Hz from the refined autocorrelation lag.

    Frames whose harmonic ratio falls below the threshold are unvoiced and
    read 0. The searchable range is 50..1000 Hz (lags 16..320).
    """
    _check_frames(seg)
    hr, lag = seg.harmonic_ratio, seg.harmonic_lag
    return np.where(hr >= hr_threshold, SAMPLE_RATE / lag, 0.0)


@dataclass(frozen=True)
class SpectralStats:
    entropy: float
    flatness: float
    crest: float
    centroid_hz: float


def frame_spectral_stats(spectra: np.ndarray) -> tuple[np.ndarray, ...]:
    """Entropy, flatness, crest and centroid per spectrum row.

    Zero-energy rows follow the conventions (0, 1, 1, 0). Entropy is
    normalized by log(n_bins) so a flat spectrum reads exactly 1.
    """
    spectra = np.atleast_2d(np.asarray(spectra, float))
    n_bins = spectra.shape[1]
    tot = spectra.sum(axis=1)
    ok = tot > 0.0
    safe_tot = np.where(ok, tot, 1.0)
    p = spectra / safe_tot[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0.0, p * np.log(p), 0.0)
    entropy = np.where(ok, -plogp.sum(axis=1) / np.log(n_bins), 0.0)
    floored = np.maximum(spectra, 1e-12)
    gm = np.exp(np.mean(np.log(floored), axis=1))
    am = np.mean(floored, axis=1)
    flatness = np.where(ok, gm / am, 1.0)
    crest = np.where(ok, spectra.max(axis=1) / np.where(ok, spectra.mean(axis=1), 1.0), 1.0)
    freqs = np.arange(n_bins) * BIN_HZ
    centroid = np.where(ok, p @ freqs, 0.0)
    return entropy, flatness, crest, centroid


def spectral_stats(seg: GestureSegment) -> SpectralStats:
    """Segment-level spectral shape: per-frame stats averaged over frames."""
    _check_frames(seg)
    e, f, c, z = frame_spectral_stats(power_spectra(seg.frames.windowed))
    return SpectralStats(float(e.mean()), float(f.mean()),
                         float(c.mean()), float(z.mean()))


@dataclass(frozen=True)
class SonorantSplit:
    log_ratio: float          # log10(sonorant energy / fricative energy)
    sonorant: np.ndarray      # per-frame classification
    silent: np.ndarray        # frames excluded by the energy floor


def sonorant_fricative_split(seg: GestureSegment,
                             theta_s: float = THETA_S) -> SonorantSplit:
    """Split frames into sonorant and fricative by the cepstral peak.

    The real cepstrum of the base-10 log magnitude spectrum is searched over
    quefrencies 1..20 ms; a frame is sonorant when the peak is positive and
    at least theta_s. (Base-10 magnitude keeps white noise comfortably under
    the 0.1 default while harmonic combs land well above it.) Silent frames
    are excluded. The stored ratio is log10 of the energy quotient, clamped
    to [-6, 6], and 0 when no frame survives the silence gate.
    """
    _check_frames(seg)
    energies = frame_energies(seg.frames.raw)
    silent = energies <= SILENCE_FLOOR
    spectra = power_spectra(seg.frames.windowed)
    logmag = 0.5 * np.log10(np.maximum(spectra, 1e-12))
    ceps = np.fft.irfft(logmag, n=FRAME_LEN, axis=1)
    lo = int(round(0.001 * SAMPLE_RATE))   # 1 ms
    hi = int(round(0.020 * SAMPLE_RATE))   # 20 ms
    peaks = ceps[:, lo:hi + 1].max(axis=1)
    sonorant = (peaks > 0.0) & (peaks >= theta_s) & ~silent
    fricative = ~sonorant & ~silent
    if not np.any(~silent):
        return SonorantSplit(0.0, sonorant, silent)
    se = float(energies[sonorant].sum())
    fe = float(energies[fricative].sum())
    if se <= 0.0:
        return SonorantSplit(-6.0, sonorant, silent)
    ratio = np.log10(se / (fe + 1e-12))
    return SonorantSplit(float(np.clip(ratio, -6.0, 6.0)), sonorant, silent)


@lru_cache(maxsize=4)
def _band_matrix(n_bands: int = N_LOGSPEC_BANDS) -> np.ndarray:
    """Mean-per-bin pooling matrix over equal-width mel bands, (bands, bins)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ),
                                  n_bands + 1))
    freqs = np.arange(N_BINS) * BIN_HZ
    m = np.zeros((n_bands, N_BINS))
    idx = np.searchsorted(edges, freqs, side="right") - 1
    idx[freqs == edges[-1]] = n_bands - 1   # the 8000 Hz bin joins the top band
    for b in range(n_bands):
        cols = np.flatnonzero(idx == b)
        if cols.size == 0:
            raise InvalidInput(f"mel band {b} covers no spectrum bins")
        m[b, cols] = 1.0 / cols.size
    return m


def log_spectrum_bands(seg: GestureSegment,
                       n_bands: int = N_LOGSPEC_BANDS) -> np.ndarray:
    """Mean log band power (dB) in equal-width mel bands over [20, 8000] Hz.

    Band power is the mean bin power inside the band (not the sum), so white
    noise reads flat across bands despite their unequal Hz widths. Floored
    at 1e-10, which makes digital silence read exactly -100 dB.
    """
    _check_frames(seg)
    spectra = power_spectra(seg.frames.windowed)
    band_power = spectra @ _band_matrix(n_bands).T
    db = 10.0 * np.log10(np.maximum(band_power, LOG_FLOOR))
    return db.mean(axis=0)


def levinson_durbin(r: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Solve the Toeplitz normal equations for one autocorrelation vector.

    Returns (prediction coefficients, reflection coefficients, residual
    energy) in the positive-prediction convention: x_hat[n] = sum a_k x[n-k].
    Raises InvalidInput when r[0] <= 0. Callers detect instability through
    any reflection coefficient reaching magnitude 1.
    """
    r = np.asarray(r, float)
    if r.size < order + 1:
        raise InvalidInput(f"need {order + 1} autocorrelation lags, got {r.size}")
    if r[0] <= 0.0:
        raise InvalidInput("zero-energy frame has no predictor")
    a, k, e = _levinson_batch(r[None, :], order)
    return a[0], k[0], float(e[0])


def _levinson_batch(r: np.ndarray, order: int):
    """Levinson-Durbin over rows of r, shape (n, order + 1)."""
    n = r.shape[0]
    a = np.zeros((n, order + 1))
    a[:, 0] = 1.0
    e = r[:, 0].copy()
    ks = np.zeros((n, order))
    dead = e <= 0.0
    for i in range(1, order + 1):
        acc = np.einsum("nj,nj->n", a[:, 1:i], r[:, i - 1:0:-1]) if i > 1 else 0.0
        safe_e = np.where((e > 0.0) & ~dead, e, 1.0)
        k = (r[:, i] - acc) / safe_e
        k = np.where(dead, 0.0, k)
        ks[:, i - 1] = k
        prev = a[:, 1:i][:, ::-1].copy()
        a[:, 1:i] -= k[:, None] * prev
        a[:, i] = k
        e = e * (1.0 - k * k)
        dead |= np.abs(k) >= 1.0
    coeffs = np.where(dead[:, None], 0.0, a[:, 1:])
    return coeffs, ks, np.maximum(e, 0.0)


def lpc(seg: GestureSegment, order: int = LPC_ORDER) -> np.ndarray:
    """Mean linear-prediction coefficients over non-silent frames.

    Autocorrelation method on raw (unwindowed) frames. Frames where the
    recursion goes unstable contribute zero coefficients; a segment with no
    usable frames yields the zero vector.
    """
    _check_frames(seg)
    raw = seg.frames.raw
    keep = frame_energies(raw) > SILENCE_FLOOR
    if not np.any(keep):
        return np.zeros(order)
    r = autocorr_numerators(raw[keep], order)
    usable = r[:, 0] > 0.0
    if not np.any(usable):
        return np.zeros(order)
    coeffs, _, _ = _levinson_batch(r[usable], order)
    return coeffs.mean(axis=0)


FEATURE_NAMES: tuple[str, ...] = tuple(
    [f"mfcc_mean_{i:02d}" for i in range(N_MFCC)]
    + [f"mfcc_std_{i:02d}" for i in range(N_MFCC)]
    + ["pitch_mean_hz", "pitch_std_hz", "hr_mean", "hr_max",
       "spectral_entropy", "spectral_flatness", "spectral_crest",
       "spectral_centroid_hz", "sonorant_fricative_ratio"]
    + [f"logspec_band_{i:02d}" for i in range(N_LOGSPEC_BANDS)]
    + [f"lpc_{i:02d}" for i in range(1, LPC_ORDER + 1)]
    + ["active_fraction"])

N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class FeatureVector:
    """One gesture attempt reduced to the fixed 66-value layout."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.shape != (N_FEATURES,):
            raise InvalidInput(f"expected {N_FEATURES} values, got {v.shape}")
        object.__setattr__(self, "values", v)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values.tolist()))


def assemble(seg: GestureSegment, theta_active: float = THETA_ACTIVE,
             theta_s: float = THETA_S,
             hr_threshold: float = 0.3) -> FeatureVector:
    """Compute the full 66-dimensional vector for one segment.

    Pooled MFCC statistics cover active frames only, falling back to all
    frames when the activity detector fires nowhere. Pitch statistics cover
    voiced frames only and read 0 when nothing is voiced.
    """
    _check_frames(seg)
    coeffs = mfcc(seg)
    delta = delta_mfcc(coeffs)
    active, active_fraction = active_portion(delta, theta_active)
    pool = coeffs[active] if active.any() else coeffs
    mfcc_mean = pool.mean(axis=0)
    mfcc_std = pool.std(axis=0)

    pitch = pitch_track(seg, hr_threshold)
    voiced = pitch > 0.0
    pitch_mean = float(pitch[voiced].mean()) if voiced.any() else 0.0
    pitch_std = float(pitch[voiced].std()) if voiced.any() else 0.0

    hr = seg.harmonic_ratio
    stats = spectral_stats(seg)
    split = sonorant_fricative_split(seg, theta_s)
    bands = log_spectrum_bands(seg)
    pred = lpc(seg)

    values = np.concatenate([
        mfcc_mean, mfcc_std,
        [pitch_mean, pitch_std, float(hr.mean()), float(hr.max()),
         stats.entropy, stats.flatness, stats.crest, stats.centroid_hz,
         split.log_ratio],
        bands, pred, [active_fraction],
    ])
    return FeatureVector(values)


@dataclass
class FeatureTable:
    """Feature vectors with their attempt metadata, as read from CSV."""

    values: np.ndarray          # (n, N_FEATURES)
    subject_ids: list[str]
    gesture_ids: np.ndarray     # (n,) int
    reps: np.ndarray            # (n,) int
    kinds: list[str]

    def __len__(self) -> int:
        return self.values.shape[0]

    def select(self, mask: np.ndarray) -> "FeatureTable":
        idx = np.flatnonzero(mask)
        return FeatureTable(self.values[idx],
                            [self.subject_ids[i] for i in idx],
                            self.gesture_ids[idx], self.reps[idx],
                            [self.kinds[i] for i in idx])


_CSV_META = ("subject_id", "gesture_id", "rep", "kind")


def write_features_csv(path, table: FeatureTable, header_note: str = "") -> None:
    """Write a feature table; floats use repr so reads are bit exact."""
    try:
        with open(path, "w", newline="") as f:
            if header_note:
                f.write(f"# {header_note}\n")
            w = csv.writer(f)
            w.writerow(_CSV_META + FEATURE_NAMES)
            for i in range(len(table)):
                row = [table.subject_ids[i], int(table.gesture_ids[i]),
                       int(table.reps[i]), table.kinds[i]]
                row += [repr(float(v)) for v in table.values[i]]
                w.writerow(row)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_features_csv(path) -> FeatureTable:
    try:
        with open(path, "r", newline="") as f:
            rows = [r for r in csv.reader(l for l in f if not l.startswith("#"))]
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if not rows or tuple(rows[0]) != _CSV_META + FEATURE_NAMES:
        raise InvalidInput(f"{path}: not a feature table (bad header)")
    body = rows[1:]
    if not body:
        return FeatureTable(np.zeros((0, N_FEATURES)), [], np.zeros(0, int),
                            np.zeros(0, int), [])
    try:
        values = np.array([[float(v) for v in r[4:]] for r in body])
        gestures = np.array([int(r[1]) for r in body])
        reps = np.array([int(r[2]) for r in body])
    except ValueError as e:
        raise InvalidInput(f"{path}: malformed row ({e})") from e
    if values.shape[1] != N_FEATURES:
        raise InvalidInput(f"{path}: wrong column count")
    return FeatureTable(values, [r[0] for r in body], gestures, reps,
                        [r[3] for r in body])
