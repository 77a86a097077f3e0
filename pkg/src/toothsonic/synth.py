"""Synthetic tooth-gesture corpus generator.

Each subject gets a randomly drawn but fully deterministic "toothprint":
per-tooth-group resonant modes, an enamel-rod comb filter, optional spacing
gaps, arch coordination, an occlusion class, per-axis mobility, and a private
bone-conduction (teeth-to-ear) channel.  Gestures are rendered as either
damped-sinusoid taps or comb/resonance-shaped noise slides, passed through a
conduction channel, and mixed with environment noise at a controlled SNR.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal as sps

from .dsp import SAMPLE_RATE, AudioClip, frame_clip, frame_energies, write_wav
from .errors import InvalidInput
from .gestures import (TOOTH_GROUPS, check_gesture_id, is_slide, mobility_axis,
                       participating_groups, uses_factor)
from .manifest import ManifestRow, write_manifest

# Toothprint parameter ranges.
MODE_COUNT_RANGE = (4, 7)
FREQ_RANGE_HZ = (300.0, 6000.0)          # global envelope of all mode bands
GROUP_FREQ_RANGES = {"incisor": (2000.0, 6000.0),
                     "canine": (1000.0, 3500.0),
                     "molar": (300.0, 1800.0)}
Q_RANGE = (5.0, 50.0)
DECAY_RANGE_MS = (5.0, 40.0)
FIRST_DECAY_RANGE_MS = (25.0, 40.0)      # dominant mode rings long enough to segment
ROD_DELAY_RANGE_MS = (0.4, 2.0)
ROD_FEEDBACK_RANGE = (0.2, 0.7)
MAX_GAPS = 3
GAP_WIDTH_FRAC_RANGE = (0.08, 0.14)      # dip width as a fraction of the slide
GAP_POSITION_RANGE = (0.15, 0.85)        # fraction of slide duration
GAP_MIN_SEPARATION = 0.22                # adjacent gaps cannot stack into silence
GAP_DEPTH = 0.7                          # fractional amplitude dip at gap center
ARCH_RANGE = (0.5, 1.0)
OCCLUSION_CLASSES = ("normal", "over", "under")
INNER_SURFACE_GAIN = {"normal": 1.0, "over": 0.35, "under": 0.0}
MOBILITY_RANGE = (0.7, 1.3)
SPEE_RANGE = (0.0, 1.0)
SPEE_ATTENUATION = 0.7                   # max gain loss for molar modes above the curve
SPEE_CUTOFF_HZ = 1200.0

# Rendering.
SLIDE_DURATION_RANGE_S = (0.3, 0.8)
TAP_AMP_RANGE = (0.3, 0.6)
SLIDE_RMS_RANGE = (0.05, 0.12)
FADE_S = 0.02
CLICK_S = 0.005
CLICK_TAU_S = 0.0015
TAP_ATTACK_S = 0.0005
AMP_JITTER = 0.10
DUR_JITTER = 0.05

# Channels.
EAR_POLE_BANDS = ((200.0, 700.0), (700.0, 2000.0),
                  (2000.0, 4000.0), (4000.0, 7000.0))
EAR_RADIUS_RANGE = (0.95, 0.99)
# Bone conduction colors strongly but never goes opaque: a broadband direct
# path rides under the canal resonances, bounding the channel's notch depth.
# Without it an unlucky subject's tap modes can fall between their own
# resonances and ring out 40 dB down, too briefly for any detector.
EAR_DIRECT_GAIN = 0.25
OCCLUSION_SHELF_HZ = 800.0
OCCLUSION_SHELF_DB = 12.0

# Corpus assembly.
LEAD_RANGE_S = (0.1, 0.3)
TAIL_RANGE_S = (0.1, 0.2)
PEAK_CEILING = 0.9
ACTIVE_ENERGY_FRACTION = 0.01            # frame is active above 1% of peak energy


@dataclass(frozen=True)
class Mode:
    """One resonant mode of a tooth group."""
    freq_hz: float
    q: float
    decay_ms: float
    amp: float


@dataclass(frozen=True)
class EnvProfile:
    name: str
    color: str      # white | pink | babble
    snr_db: float


ENV_PROFILES = {
    "living_room": EnvProfile("living_room", "white", 20.0),
    "lab": EnvProfile("lab", "babble", 15.0),
    "grocery": EnvProfile("grocery", "babble", 12.0),
    "vehicle": EnvProfile("vehicle", "pink", 8.0),
    "park": EnvProfile("park", "white", 14.0),
}


@dataclass(frozen=True, eq=False)
class ToothprintParams:
    """Deterministic per-subject anatomy draw; every field follows from subject_seed."""
    subject_seed: int
    modes: dict                 # group name -> tuple[Mode, ...]
    rod_delay_ms: float
    rod_feedback: float
    gap_pattern: tuple          # ((position fraction, width fraction), ...)
    arch_coordination: float
    occlusion_class: str
    mobility: dict              # axis name -> factor
    spee_depth: float
    ear_b: np.ndarray           # private bone-conduction channel
    ear_a: np.ndarray
    air_b: np.ndarray           # shared through-the-air channel
    air_a: np.ndarray


def _plain(obj):
    # numpy scalars serialize like their Python twins, so seeds match.
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"cannot derive a seed from {type(obj).__name__}")


def derive_seed(*parts) -> int:
    """Stable 64-bit child seed from hashable parts; independent of PYTHONHASHSEED."""
    blob = json.dumps(parts, sort_keys=True, default=_plain).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def _low_shelf(freq_hz: float, gain_db: float) -> tuple[np.ndarray, np.ndarray]:
    # Biquad low shelf (slope 1), boosting below freq_hz by gain_db.
    amp = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * math.pi * freq_hz / SAMPLE_RATE
    cw, sw = math.cos(w0), math.sin(w0)
    alpha = sw / 2.0 * math.sqrt(2.0)  # shelf slope 1
    sq = 2.0 * math.sqrt(amp) * alpha
    b = np.array([amp * ((amp + 1) - (amp - 1) * cw + sq),
                  2 * amp * ((amp - 1) - (amp + 1) * cw),
                  amp * ((amp + 1) - (amp - 1) * cw - sq)])
    a = np.array([(amp + 1) + (amp - 1) * cw + sq,
                  -2 * ((amp - 1) + (amp + 1) * cw),
                  (amp + 1) + (amp - 1) * cw - sq])
    return b / a[0], a / a[0]


_SHELF_B, _SHELF_A = _low_shelf(OCCLUSION_SHELF_HZ, OCCLUSION_SHELF_DB)

# One fixed through-the-air channel shared by every subject.  A replay rig is
# a small loudspeaker across an air gap: no body conduction below a few
# hundred hertz and little output above the driver's passband, so the lows
# the occlusion effect would amplify (and the molar fundamentals living
# there) simply never arrive.
AIR_BAND_HZ = (450.0, 4000.0)
_AIR_B, _AIR_A = sps.butter(2, AIR_BAND_HZ, btype="bandpass", fs=SAMPLE_RATE)
SPEAKER_DRIVE = 3.0                      # replay-rig saturation, see _loudspeaker
# Teeth sounds ride bone conduction; what leaks into the air is faint, so a
# covert recording sits well below the wearer's own in-ear SNR.
REPLAY_RECORDING_PENALTY_DB = 14.0


def make_ear_filter(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw an 8-pole ear-canal channel: one conjugate pole pair per band.

    The resonant branch is normalized to unit peak and mixed with a flat
    direct path at EAR_DIRECT_GAIN, so the response is peaky on top of a
    bounded floor rather than vanishing between resonances.
    """
    a = np.array([1.0])
    for lo, hi in EAR_POLE_BANDS:
        f = rng.uniform(lo, hi)
        r = rng.uniform(*EAR_RADIUS_RANGE)
        w = 2.0 * math.pi * f / SAMPLE_RATE
        a = np.convolve(a, [1.0, -2.0 * r * math.cos(w), r * r])
    _, h = sps.freqz(1.0, a, worN=2048, fs=SAMPLE_RATE)
    k = 1.0 / np.abs(h).max()
    # H = g + (1 - g) k / A, written as one rational filter over A.
    b = EAR_DIRECT_GAIN * a
    b[0] += (1.0 - EAR_DIRECT_GAIN) * k
    return b, a


def _draw_modes(rng: np.random.Generator, group: str) -> tuple:
    lo, hi = GROUP_FREQ_RANGES[group]
    count = int(rng.integers(MODE_COUNT_RANGE[0], MODE_COUNT_RANGE[1] + 1))
    min_sep = (hi - lo) / (3.0 * count)
    freqs: list[float] = []
    while len(freqs) < count:
        f = float(rng.uniform(lo, hi))
        if all(abs(f - g) >= min_sep for g in freqs):
            freqs.append(f)
    freqs.sort()
    modes = []
    for i, f in enumerate(freqs):
        q = float(rng.uniform(*Q_RANGE))
        d_lo, d_hi = FIRST_DECAY_RANGE_MS if i == 0 else DECAY_RANGE_MS
        decay = float(rng.uniform(d_lo, d_hi))
        amp = 1.0 if i == 0 else float(rng.uniform(0.2, 0.8))
        modes.append(Mode(freq_hz=f, q=q, decay_ms=decay, amp=amp))
    return tuple(modes)


def make_subject(subject_seed: int) -> ToothprintParams:
    """Expand one seed into a full toothprint.  Same seed, same print, always."""
    rng = np.random.default_rng(subject_seed)
    # Draw order is fixed and append-only; changing it would silently re-roll
    # every existing subject.
    modes = {group: _draw_modes(rng, group) for group in TOOTH_GROUPS}
    rod_delay_ms = float(rng.uniform(*ROD_DELAY_RANGE_MS))
    rod_feedback = float(rng.uniform(*ROD_FEEDBACK_RANGE))
    n_gaps = int(rng.integers(0, MAX_GAPS + 1))
    # Resample the whole set: greedy one-at-a-time placement can paint
    # itself into a corner where no further position fits.
    while True:
        positions = sorted(float(rng.uniform(*GAP_POSITION_RANGE))
                           for _ in range(n_gaps))
        if all(b - a >= GAP_MIN_SEPARATION
               for a, b in zip(positions, positions[1:])):
            break
    gaps = tuple((p, float(rng.uniform(*GAP_WIDTH_FRAC_RANGE)))
                 for p in positions)
    arch = float(rng.uniform(*ARCH_RANGE))
    occlusion = OCCLUSION_CLASSES[int(rng.integers(len(OCCLUSION_CLASSES)))]
    mobility = {axis: float(rng.uniform(*MOBILITY_RANGE))
                for axis in ("fb", "ud", "lr")}
    spee = float(rng.uniform(*SPEE_RANGE))
    ear_b, ear_a = make_ear_filter(rng)
    return ToothprintParams(subject_seed=subject_seed, modes=modes,
                            rod_delay_ms=rod_delay_ms, rod_feedback=rod_feedback,
                            gap_pattern=gaps, arch_coordination=arch,
                            occlusion_class=occlusion, mobility=mobility,
                            spee_depth=spee, ear_b=ear_b, ear_a=ear_a,
                            air_b=_AIR_B.copy(), air_a=_AIR_A.copy())


def pole_radii(params: ToothprintParams) -> np.ndarray:
    """Magnitudes of every pole in the subject's filters (all must be < 1)."""
    radii = [np.abs(np.roots(params.ear_a)), np.abs(np.roots(params.air_a))]
    # Comb feedback y[n] = x[n] + fb * y[n - d] has d poles of radius fb^(1/d).
    d = max(1, round(params.rod_delay_ms * 1e-3 * SAMPLE_RATE))
    radii.append(np.full(d, params.rod_feedback ** (1.0 / d)))
    for modes in params.modes.values():
        radii.append(np.array([_mode_radius(m) for m in modes]))
    return np.concatenate(radii)


def _mode_radius(mode: Mode) -> float:
    return math.exp(-math.pi * mode.freq_hz / (mode.q * SAMPLE_RATE))


def _resonator(mode: Mode) -> tuple[np.ndarray, np.ndarray]:
    # Constant-peak-gain two-pole resonator.
    r = _mode_radius(mode)
    w = 2.0 * math.pi * mode.freq_hz / SAMPLE_RATE
    amp = (1.0 - r * r) / 2.0
    return np.array([amp, 0.0, -amp]), np.array([1.0, -2.0 * r * math.cos(w), r * r])


def _primary_group(gesture_id: int) -> str:
    # The group leading the gesture; others are scaled by arch coordination.
    if gesture_id in (2, 8):
        return "molar"
    if gesture_id in (3, 9):
        return "canine"
    return "incisor"


def _group_gain(params: ToothprintParams, gesture_id: int, group: str) -> float:
    gain = 1.0 if group == _primary_group(gesture_id) else params.arch_coordination
    return gain


def _mode_gain(params: ToothprintParams, gesture_id: int, group: str,
               mode: Mode) -> float:
    gain = mode.amp
    # A deep curve of spee pulls high molar modes out of contact.
    if group == "molar" and uses_factor(gesture_id, 6) and mode.freq_hz > SPEE_CUTOFF_HZ:
        gain *= 1.0 - SPEE_ATTENUATION * params.spee_depth
    return gain


def _comb(params: ToothprintParams, x: np.ndarray) -> np.ndarray:
    # Enamel-rod micro-texture: feedback comb with sub-2 ms delay.
    d = max(1, round(params.rod_delay_ms * 1e-3 * SAMPLE_RATE))
    a = np.zeros(d + 1)
    a[0] = 1.0
    a[d] = -params.rod_feedback
    return sps.lfilter([1.0], a, x)


def _fade(y: np.ndarray) -> np.ndarray:
    n = min(int(FADE_S * SAMPLE_RATE), len(y) // 2)
    if n > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / n)
        y[:n] *= ramp
        y[-n:] *= ramp[::-1]
    return y


def _gap_envelope(params: ToothprintParams, gesture_id: int,
                  n: int) -> np.ndarray:
    env = np.ones(n)
    if not (is_slide(gesture_id) and uses_factor(gesture_id, 8)):
        return env
    t = np.arange(n) / SAMPLE_RATE
    dur = n / SAMPLE_RATE
    for pos, width_frac in params.gap_pattern:
        # Width rides the slide duration: a faster stroke crosses the same
        # gap in less time.
        sigma = width_frac * dur / 2.0
        env *= 1.0 - GAP_DEPTH * np.exp(-0.5 * ((t - pos * dur) / sigma) ** 2)
    return env


def _synth_slide(params: ToothprintParams, gesture_id: int,
                 rng: np.random.Generator, dur_s: float,
                 rms: float) -> np.ndarray:
    n = int(round(dur_s * SAMPLE_RATE))
    x = _comb(params, rng.standard_normal(n))
    y = np.zeros(n)
    for group in participating_groups(gesture_id):
        g = _group_gain(params, gesture_id, group)
        for mode in params.modes[group]:
            b, a = _resonator(mode)
            y += g * _mode_gain(params, gesture_id, group, mode) * sps.lfilter(b, a, x)
    y *= _gap_envelope(params, gesture_id, n)
    _fade(y)
    scale = rms / max(math.sqrt(float(np.mean(y * y))), 1e-12)
    return y * scale


def _synth_tap(params: ToothprintParams, gesture_id: int,
               rng: np.random.Generator, amp: float,
               dur_factor: float) -> np.ndarray:
    groups = participating_groups(gesture_id)
    parts = []       # (gain, freq, decay_s) per rendered mode
    for group in groups:
        g = _group_gain(params, gesture_id, group)
        for mode in params.modes[group]:
            parts.append((g * _mode_gain(params, gesture_id, group, mode),
                          mode.freq_hz, mode.decay_ms * 1e-3 * dur_factor))
    # An occlusion-dependent inner-surface strike excites incisor modes an
    # octave down; class "under" misses them entirely.
    if gesture_id == 7:
        inner = INNER_SURFACE_GAIN[params.occlusion_class]
        if inner > 0.0:
            for mode in params.modes["incisor"]:
                parts.append((0.6 * inner * mode.amp, 0.5 * mode.freq_hz,
                              mode.decay_ms * 1e-3 * dur_factor))
    max_decay = max(decay for _, _, decay in parts)
    n = int(round((CLICK_S + 5.0 * max_decay) * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    # Sub-ms attack: an instant-on envelope would splash energy far above the
    # modal band.
    envelope_attack = 1.0 - np.exp(-t / TAP_ATTACK_S)
    y = np.zeros(n)
    for gain, freq, decay in parts:
        phase = rng.uniform(0.0, 2.0 * math.pi)
        y += (gain * np.sin(2.0 * math.pi * freq * t + phase)
              * np.exp(-t / decay) * envelope_attack)
    # Broadband contact click over the first few milliseconds.  The click
    # travels through the same teeth, so its bandwidth ends where the struck
    # group's modes do.
    n_click = int(CLICK_S * SAMPLE_RATE)
    cutoff = min(1.25 * max(freq for _, freq, _ in parts), 7000.0)
    lp_b, lp_a = sps.butter(2, cutoff, btype="lowpass", fs=SAMPLE_RATE)
    click = sps.lfilter(lp_b, lp_a, rng.standard_normal(n_click))
    click *= np.exp(-t[:n_click] / CLICK_TAU_S)
    y[:n_click] += 0.12 * np.abs(y).max() * click / max(np.abs(click).max(), 1e-12)
    return y * (amp / max(np.abs(y).max(), 1e-12))


def synth_gesture(params: ToothprintParams, gesture_id: int, seed: int,
                  amp_jitter: float = AMP_JITTER,
                  dur_jitter: float = DUR_JITTER) -> AudioClip:
    """Render one repetition of a gesture at the teeth (before any channel)."""
    check_gesture_id(gesture_id)
    base_rng = np.random.default_rng(
        derive_seed(params.subject_seed, "base", gesture_id))
    base_dur = float(base_rng.uniform(*SLIDE_DURATION_RANGE_S))
    base_amp = float(base_rng.uniform(*TAP_AMP_RANGE))
    base_rms = float(base_rng.uniform(*SLIDE_RMS_RANGE))
    mob = params.mobility[mobility_axis(gesture_id)]

    rng = np.random.default_rng(seed)
    amp_f = 1.0 + float(rng.uniform(-amp_jitter, amp_jitter))
    dur_f = 1.0 + float(rng.uniform(-dur_jitter, dur_jitter))
    if is_slide(gesture_id):
        samples = _synth_slide(params, gesture_id, rng,
                               dur_s=base_dur * mob * dur_f,
                               rms=base_rms * amp_f)
    else:
        samples = _synth_tap(params, gesture_id, rng,
                             amp=base_amp * mob * amp_f, dur_factor=dur_f)
    return AudioClip(samples=samples.astype(np.float64))


def apply_channel(clip: AudioClip, params: ToothprintParams,
                  path: str) -> AudioClip:
    """Propagate an at-the-teeth clip through "teeth_ear" or "air"."""
    if path == "teeth_ear":
        y = sps.lfilter(params.ear_b, params.ear_a, clip.samples)
        y = sps.lfilter(_SHELF_B, _SHELF_A, y)
    elif path == "air":
        y = sps.lfilter(params.air_b, params.air_a, clip.samples)
    else:
        raise InvalidInput(f"unknown propagation path {path!r}")
    return AudioClip(samples=y)


def _loudspeaker(clip: AudioClip) -> AudioClip:
    # Memoryless soft saturation of a small driver pushed hard: transient
    # peaks clip, smearing energy into odd harmonics and intermodulation
    # products that a linear channel would never produce.
    peak = float(np.abs(clip.samples).max())
    if peak == 0.0:
        return AudioClip(samples=clip.samples.copy())
    y = np.tanh(SPEAKER_DRIVE * clip.samples / peak)
    y *= peak / math.tanh(SPEAKER_DRIVE)
    return AudioClip(samples=y)


def _make_noise(color: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if color == "white":
        y = rng.standard_normal(n)
    elif color == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        k = np.arange(len(spec), dtype=np.float64)
        k[0] = 1.0
        y = np.fft.irfft(spec / np.sqrt(k), n=n)
    elif color == "babble":
        sos = sps.butter(4, (300.0, 3400.0), btype="bandpass",
                         fs=SAMPLE_RATE, output="sos")
        y = sps.sosfilt(sos, rng.standard_normal(n))
        # Slow syllabic amplitude churn.
        coarse = np.abs(rng.standard_normal(max(2, n // 2000 + 2)))
        env = np.interp(np.linspace(0.0, 1.0, n),
                        np.linspace(0.0, 1.0, len(coarse)), coarse)
        y *= 0.3 + 0.7 * env / max(env.max(), 1e-12)
    else:
        raise InvalidInput(f"unknown noise color {color!r}")
    return y / max(math.sqrt(float(np.mean(y * y))), 1e-12)


def _active_mask(samples: np.ndarray) -> np.ndarray:
    energies = frame_energies(frame_clip(AudioClip(samples=samples)).raw)
    return energies > ACTIVE_ENERGY_FRACTION * energies.max()


def add_noise(clip: AudioClip, env: EnvProfile, seed: int) -> AudioClip:
    """Mix environment noise so the SNR over the active region hits env.snr_db."""
    if math.isinf(env.snr_db) and env.snr_db > 0:
        return AudioClip(samples=clip.samples.copy())
    if not math.isfinite(env.snr_db):
        raise InvalidInput(f"snr_db must be finite or +inf, got {env.snr_db}")
    sig_energy = frame_energies(frame_clip(clip).raw)
    if sig_energy.max() <= 0.0:
        raise InvalidInput("cannot set an SNR on a zero-energy clip")
    active = sig_energy > ACTIVE_ENERGY_FRACTION * sig_energy.max()
    noise = _make_noise(env.color, len(clip.samples), np.random.default_rng(seed))
    noise_energy = frame_energies(frame_clip(AudioClip(samples=noise)).raw)
    p_sig = float(np.mean(sig_energy[active]))
    p_noise = float(np.mean(noise_energy[active]))
    scale = math.sqrt(p_sig / (p_noise * 10.0 ** (env.snr_db / 10.0)))
    return AudioClip(samples=clip.samples + scale * noise)


def add_body_motion(clip: AudioClip, seed: int, bursts_per_s: float = 0.5,
                    level: float = 0.02) -> AudioClip:
    """Optionally overlay sub-150 Hz motion rumble bursts (disabled by default)."""
    rng = np.random.default_rng(seed)
    n = len(clip.samples)
    dur = n / SAMPLE_RATE
    sos = sps.butter(4, (20.0, 140.0), btype="bandpass", fs=SAMPLE_RATE,
                     output="sos")
    out = clip.samples.copy()
    for _ in range(max(1, round(bursts_per_s * dur))):
        width = min(n, int(rng.uniform(0.1, 0.3) * SAMPLE_RATE))
        start = int(rng.uniform(0.0, max(1, n - width)))
        burst = sps.sosfilt(sos, rng.standard_normal(width))
        burst *= np.hanning(width)
        rms = math.sqrt(float(np.mean(burst * burst)))
        out[start:start + width] += burst * (level / max(rms, 1e-12))
    return AudioClip(samples=out)


def make_noise_clip(dur_s: float, env: EnvProfile, seed: int,
                    rms: float = 0.02) -> AudioClip:
    """A pure-noise clip (no gesture) for false-detection checks."""
    n = int(round(dur_s * SAMPLE_RATE))
    noise = _make_noise(env.color, n, np.random.default_rng(seed))
    return AudioClip(samples=noise * rms)


def _mimic_params(params: ToothprintParams, master_seed: int, subject_id: str,
                  rep: int) -> ToothprintParams:
    # An advanced mimic replays the victim's toothprint through someone
    # else's ear canal: same anatomy, different private channel.
    rng = np.random.default_rng(derive_seed(master_seed, "mimic_ear",
                                            subject_id, rep))
    ear_b, ear_a = make_ear_filter(rng)
    return replace(params, ear_b=ear_b, ear_a=ear_a)


def _assemble_clip(raw: AudioClip, env: EnvProfile, rng_seed: int) -> tuple[AudioClip, float]:
    """Pad with silence, add noise, cap the peak.  Returns (clip, onset seconds)."""
    pad_rng = np.random.default_rng(derive_seed(rng_seed, "pad"))
    lead = int(pad_rng.uniform(*LEAD_RANGE_S) * SAMPLE_RATE)
    tail = int(pad_rng.uniform(*TAIL_RANGE_S) * SAMPLE_RATE)
    padded = AudioClip(samples=np.concatenate(
        [np.zeros(lead), raw.samples, np.zeros(tail)]))
    noisy = add_noise(padded, env, seed=derive_seed(rng_seed, "noise"))
    peak = float(np.abs(noisy.samples).max())
    if peak > PEAK_CEILING:
        noisy = AudioClip(samples=noisy.samples * (PEAK_CEILING / peak))
    return noisy, lead / SAMPLE_RATE


ATTACK_KINDS = ("replay", "advanced_mimic")


def generate_corpus(out_dir, master_seed: int, n_subjects: int = 25,
                    gestures: tuple = tuple(range(1, 11)), reps: int = 50,
                    envs: tuple = ("living_room",),
                    attack_kinds: tuple = ATTACK_KINDS,
                    attack_reps: int | None = None,
                    profiles: dict | None = None,
                    extra_meta: dict | None = None) -> str:
    """Write a WAV corpus plus JSONL manifest; byte-identical for a given seed.

    Each (subject, gesture) directory holds `reps` genuine repetitions cycled
    across `envs`, plus `attack_reps` attempts of each kind in `attack_kinds`
    (pass an empty tuple for a genuine-only corpus).  Returns the manifest
    path.
    """
    if n_subjects < 1 or reps < 1 or not gestures:
        raise InvalidInput("corpus needs at least one subject, gesture and rep")
    for g in gestures:
        check_gesture_id(g)
    for kind in attack_kinds:
        if kind not in ATTACK_KINDS:
            raise InvalidInput(f"unknown attack kind {kind!r}")
    table = ENV_PROFILES if profiles is None else profiles
    selected = []
    for name in envs:
        if name not in table:
            raise InvalidInput(f"unknown environment {name!r}")
        selected.append(table[name])
    if attack_reps is None:
        attack_reps = max(1, reps // 10)
    if not attack_kinds:
        attack_reps = 0

    os.makedirs(out_dir, exist_ok=True)
    rows = []
    subject_ids = [f"s{i + 1:02d}" for i in range(n_subjects)]
    for sid_index, sid in enumerate(subject_ids):
        params = make_subject(derive_seed(master_seed, "subject", sid))
        for g in gestures:
            rel_dir = os.path.join(f"subj_{sid}", f"g{g}")
            os.makedirs(os.path.join(out_dir, rel_dir), exist_ok=True)
            for rep in range(reps):
                env = selected[rep % len(selected)]
                clip_seed = derive_seed(master_seed, sid, g, rep)
                raw = synth_gesture(params, g, seed=clip_seed)
                heard = apply_channel(raw, params, "teeth_ear")
                clip, onset = _assemble_clip(heard, env, clip_seed)
                rel = os.path.join(rel_dir, f"rep{rep}_genuine.wav")
                write_wav(os.path.join(out_dir, rel), clip)
                rows.append(ManifestRow(subject_id=sid, gesture_id=g, rep=rep,
                                        kind="genuine", env=env.name, path=rel,
                                        onset_s=(onset,)))
            for rep in range(attack_reps):
                env = selected[rep % len(selected)]
                clip_seed = derive_seed(master_seed, sid, g, rep)
                if "replay" in attack_kinds:
                    # Replay: a recording of the victim captured through the
                    # air, then pushed back out of a small loudspeaker.  The
                    # driver saturates on the transients and the attack picks
                    # up environment noise twice, once while recording and
                    # once while playing back.
                    raw = synth_gesture(params, g, seed=clip_seed)
                    aired = apply_channel(raw, params, "air")
                    recorded = replace(
                        env, snr_db=env.snr_db - REPLAY_RECORDING_PENALTY_DB)
                    aired = add_noise(aired, recorded,
                                      derive_seed(clip_seed, "replay_rec"))
                    aired = _loudspeaker(aired)
                    clip, onset = _assemble_clip(
                        aired, env, derive_seed(clip_seed, "replay"))
                    rel = os.path.join(rel_dir, f"rep{rep}_replay.wav")
                    write_wav(os.path.join(out_dir, rel), clip)
                    rows.append(ManifestRow(subject_id=sid, gesture_id=g,
                                            rep=rep, kind="replay",
                                            env=env.name, path=rel,
                                            onset_s=(onset,)))
                if "advanced_mimic" in attack_kinds:
                    # Advanced mimic: victim anatomy, attacker's ear canal.
                    mimic = _mimic_params(params, master_seed, sid, rep)
                    raw_m = synth_gesture(mimic, g,
                                          seed=derive_seed(clip_seed, "mimic"))
                    heard_m = apply_channel(raw_m, mimic, "teeth_ear")
                    clip_m, onset_m = _assemble_clip(
                        heard_m, env, derive_seed(clip_seed, "mimic_mix"))
                    rel_m = os.path.join(rel_dir, f"rep{rep}_advanced_mimic.wav")
                    write_wav(os.path.join(out_dir, rel_m), clip_m)
                    rows.append(ManifestRow(subject_id=sid, gesture_id=g,
                                            rep=rep, kind="advanced_mimic",
                                            env=env.name, path=rel_m,
                                            onset_s=(onset_m,)))
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    meta = {"master_seed": master_seed, "n_subjects": n_subjects,
            "gestures": list(gestures), "reps": reps, "envs": list(envs),
            "attack_kinds": list(attack_kinds), "attack_reps": attack_reps}
    meta.update(extra_meta or {})
    write_manifest(manifest_path, rows, meta=meta)
    return manifest_path
