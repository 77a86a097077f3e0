"""Gesture event segmentation and per-frame harmonicity.

A clip is reduced to two observation tracks (log frame energy and spectral
flux), a background/event pair of diagonal Gaussians is calibrated from the
clip's own energy quantiles, and the maximum-likelihood state path is decoded
with Viterbi. A rule pass then drops too-short events, merges near-adjacent
ones, and discards events that never clear the clip's noise floor.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dsp import (
    FRAME_LEN, HOP, AudioClip, FrameSet, _nccf, frame_clip, frame_energies,
    power_spectra,
)
from .errors import EmptyInput, InvalidInput

# emission calibration quantiles: background from the quietest fifth of the
# frames, event from the loudest tenth
BACKGROUND_FRACTION = 0.20
EVENT_FRACTION = 0.10

# variance floors keep digital-silence pads from degenerating the Gaussians
_VAR_FLOOR = np.array([0.04, 1e-8])

MIN_PITCH_LAG = 16    # 1 ms, 1000 Hz
MAX_PITCH_LAG = 320   # 20 ms, 50 Hz


@dataclass(frozen=True)
class SegmenterConfig:
    min_event_s: float = 0.05
    merge_gap_s: float = 0.08
    min_peak_snr_db: float = 6.0
    hr_threshold: float = 0.3
    self_transition: float = 0.95


@dataclass(frozen=True)
class GestureSegment:
    """One detected gesture event, with per-frame harmonicity attached."""

    clip: AudioClip
    start_s: float
    end_s: float
    label: Optional[str]
    frames: FrameSet
    harmonic_ratio: np.ndarray
    harmonic_mask: np.ndarray
    harmonic_lag: np.ndarray
    peak_snr_db: float

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    @property
    def mean_hr(self) -> float:
        return float(np.mean(self.harmonic_ratio))


def observations(frames: FrameSet) -> np.ndarray:
    """Per-frame (log energy, spectral flux) observation rows."""
    energy = frame_energies(frames.raw)
    log_e = np.log(energy + 1e-12)
    spectra = power_spectra(frames.windowed)
    tot = spectra.sum(axis=1, keepdims=True)
    norm = np.where(tot > 0.0, spectra / np.where(tot > 0, tot, 1.0),
                    1.0 / spectra.shape[1])
    flux = np.zeros(len(frames))
    if len(frames) > 1:
        d = np.diff(norm, axis=0)
        flux[1:] = np.sum(d * d, axis=1)
    return np.column_stack([log_e, flux])


def viterbi_two_state(loglik: np.ndarray, log_trans: np.ndarray,
                      log_init: np.ndarray) -> np.ndarray:
    """Most likely state path for a 2-state chain; ties go to state 0."""
    n = loglik.shape[0]
    delta = log_init + loglik[0]
    psi = np.zeros((n, 2), dtype=np.int8)
    for t in range(1, n):
        cand = delta[:, None] + log_trans          # cand[i, j]
        psi[t] = np.argmax(cand, axis=0)
        delta = cand[psi[t], [0, 1]] + loglik[t]
    path = np.zeros(n, dtype=np.int8)
    path[-1] = int(np.argmax(delta))
    for t in range(n - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]
    return path


def _fit_emissions(obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Background/event Gaussians from the clip's own energy quantiles."""
    order = np.argsort(obs[:, 0], kind="stable")
    n = len(order)
    n_bg = max(1, int(np.ceil(n * BACKGROUND_FRACTION)))
    n_ev = max(1, int(np.ceil(n * EVENT_FRACTION)))
    sets = [obs[order[:n_bg]], obs[order[n - n_ev:]]]
    means = np.stack([s.mean(axis=0) for s in sets])
    var = np.stack([s.var(axis=0) for s in sets])
    return means, np.maximum(var, _VAR_FLOOR)


def _gaussian_loglik(obs, means, variances) -> np.ndarray:
    diff = obs[:, None, :] - means[None, :, :]
    return -0.5 * np.sum(diff * diff / variances + np.log(2 * np.pi * variances),
                         axis=2)


def harmonic_peaks(raw_frames: np.ndarray,
                   min_lag: int = MIN_PITCH_LAG,
                   max_lag: int = MAX_PITCH_LAG) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic ratio and refined peak lag per raw frame.

    The ratio is the maximum normalized autocorrelation over lags
    [min_lag, max_lag], refined with a three-point parabolic fit around the
    discrete peak and clamped to [0, 1]. Refinement never moves the peak by
    more than half a lag step; endpoint maxima are left unrefined.
    """
    raw = np.atleast_2d(np.asarray(raw_frames, dtype=np.float64))
    if raw.shape[1] <= max_lag:
        raise InvalidInput(
            f"frames of {raw.shape[1]} samples cannot cover lag {max_lag}")
    r = _nccf(raw, max_lag)
    region = r[:, min_lag:max_lag + 1]
    # first lag within 1e-9 of the maximum: periodic frames tie at every
    # period multiple, and the smallest one is the fundamental
    best = np.max(region, axis=1, keepdims=True)
    idx = np.argmax(region >= best - 1e-9, axis=1) + min_lag
    y0 = np.take_along_axis(r, idx[:, None], 1)[:, 0]
    interior = (idx > min_lag) & (idx < max_lag)
    ym1 = np.take_along_axis(r, np.maximum(idx - 1, 0)[:, None], 1)[:, 0]
    yp1 = np.take_along_axis(r, np.minimum(idx + 1, max_lag)[:, None], 1)[:, 0]
    denom = 2.0 * (2.0 * y0 - yp1 - ym1)
    safe = interior & (np.abs(denom) > 1e-12)
    p = np.where(safe, (yp1 - ym1) / np.where(safe, denom, 1.0), 0.0)
    p = np.clip(p, -0.5, 0.5)
    peak = y0 - 0.25 * (ym1 - yp1) * p
    hr = np.clip(peak, 0.0, 1.0)
    return hr, idx + p


def segment_gestures(clip: AudioClip, cfg: SegmenterConfig = SegmenterConfig(),
                     label: Optional[str] = None) -> list[GestureSegment]:
    """Detect gesture events in a clip.

    Returns segments sorted by start time, pairwise disjoint. The caller is
    expected to band-limit the clip first; this function only decodes and
    applies the duration / merge / peak-SNR rules, in that order.
    """
    if len(clip) == 0:
        raise EmptyInput("cannot segment an empty clip")
    frames = frame_clip(clip)
    obs = observations(frames)
    means, variances = _fit_emissions(obs)
    loglik = _gaussian_loglik(obs, means, variances)
    p_stay = cfg.self_transition
    log_trans = np.log(np.array([[p_stay, 1.0 - p_stay],
                                 [1.0 - p_stay, p_stay]]))
    log_init = np.log(np.array([0.99, 0.01]))
    path = viterbi_two_state(loglik, log_trans, log_init)

    runs = _event_runs(path)
    runs = [r for r in runs if _run_duration_s(r, clip.sample_rate) >= cfg.min_event_s]
    runs = _merge_runs(runs, cfg.merge_gap_s, clip.sample_rate)

    energy = frame_energies(frames.raw)
    n_bg = max(1, int(np.ceil(len(energy) * BACKGROUND_FRACTION)))
    noise_floor = float(np.mean(np.sort(energy)[:n_bg]))
    segments = []
    for f0, f1 in runs:
        peak = float(np.max(energy[f0:f1 + 1]))
        snr_db = float(10.0 * np.log10((peak + 1e-12) / (noise_floor + 1e-12)))
        if snr_db < cfg.min_peak_snr_db:
            continue
        segments.append(_build_segment(clip, frames, f0, f1, label, snr_db, cfg))
    return segments


def _event_runs(path: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, s in enumerate(path):
        if s == 1 and start is None:
            start = i
        elif s == 0 and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(path) - 1))
    return runs


def _run_duration_s(run: tuple[int, int], rate: int) -> float:
    # estimated signal support: a burst of b samples touches about
    # (b + FRAME_LEN) / HOP overlapping frames, so invert that smear
    # rather than crediting each frame its full window
    f0, f1 = run
    return max(0, (f1 - f0 + 1) * HOP - (FRAME_LEN - HOP)) / rate


def _merge_runs(runs, merge_gap_s: float, rate: int):
    merged: list[list[int]] = []
    for f0, f1 in runs:
        if merged:
            prev_end_s = (merged[-1][1] * HOP + FRAME_LEN) / rate
            if f0 * HOP / rate - prev_end_s < merge_gap_s:
                merged[-1][1] = f1
                continue
        merged.append([f0, f1])
    return [tuple(r) for r in merged]


def _build_segment(clip, frames, f0, f1, label, snr_db, cfg) -> GestureSegment:
    # Smear-corrected support, matching _run_duration_s: frame f0 fires for
    # any onset in its window, but frame f0 - 1 staying quiet bounds the
    # onset to the window's last hop.  Same argument at the far end.  Runs
    # touching the clip edges have no quiet neighbor, so no correction there.
    a = f0 * HOP + (FRAME_LEN - HOP if f0 > 0 else 0)
    b = f1 * HOP + (HOP if f1 < len(frames) - 1 else FRAME_LEN)
    if b - a < FRAME_LEN:       # tiny run: fall back to the raw frame window
        a, b = f0 * HOP, f1 * HOP + FRAME_LEN
    sub = AudioClip(clip.samples[a:b], clip.sample_rate)
    sub_frames = frame_clip(sub)
    hr, lag = harmonic_peaks(sub_frames.raw)
    return GestureSegment(
        clip=sub,
        start_s=a / clip.sample_rate,
        end_s=b / clip.sample_rate,
        label=label,
        frames=sub_frames,
        harmonic_ratio=hr,
        harmonic_mask=hr >= cfg.hr_threshold,
        harmonic_lag=lag,
        peak_snr_db=snr_db,
    )


def whole_clip_segment(clip: AudioClip, label: Optional[str] = None,
                       hr_threshold: float = 0.3) -> GestureSegment:
    """Wrap an already-cropped clip as a single segment, skipping detection."""
    frames = frame_clip(clip)
    hr, lag = harmonic_peaks(frames.raw)
    return GestureSegment(clip=clip, start_s=0.0, end_s=clip.duration_s,
                          label=label, frames=frames, harmonic_ratio=hr,
                          harmonic_mask=hr >= hr_threshold, harmonic_lag=lag,
                          peak_snr_db=float("inf"))


def harmonic_ratio_track(seg: GestureSegment) -> np.ndarray:
    """Per-frame harmonic ratio of a segment (recomputed from raw frames)."""
    hr, _ = harmonic_peaks(seg.frames.raw)
    return hr


def harmonic_mask(seg: GestureSegment, hr_threshold: float = 0.3) -> np.ndarray:
    """Boolean per-frame mask: harmonic ratio at or above the threshold."""
    return harmonic_ratio_track(seg) >= hr_threshold


def segments_to_json(segments: Sequence[GestureSegment]) -> str:
    """Serialize segments as a JSON array of {start_s, end_s, label, mean_hr}."""
    rows = [{"start_s": s.start_s, "end_s": s.end_s, "label": s.label,
             "mean_hr": s.mean_hr} for s in segments]
    return json.dumps(rows, sort_keys=True)
