"""One JSON document holding every tunable; defaults bake the shipped values.

Loading rejects unknown keys so a typo in a config file fails loudly instead
of silently running with defaults.  Every artifact the pipeline writes embeds
`config_hash()` so results stay traceable to the exact configuration.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

from .dsp import FRAME_LEN, HOP
from .errors import InvalidInput, IoError
from .evaluation import FUSION_RULES, AuthPolicy
from .gestures import check_gesture_id
from .model import TrainConfig
from .segment import SegmenterConfig
from .synth import ENV_PROFILES, EnvProfile

NOISE_COLORS = ("white", "pink", "babble")


def _default_env_profiles() -> dict:
    return {name: {"color": p.color, "snr_db": p.snr_db}
            for name, p in ENV_PROFILES.items()}


@dataclass(frozen=True)
class PipelineConfig:
    # signal
    band_low_hz: float = 20.0
    band_high_hz: float = 8000.0
    frame_len: int = FRAME_LEN     # fixed by the 16 kHz analysis front end
    hop: int = HOP
    # segmenter
    self_transition: float = 0.95
    min_event_s: float = 0.05
    merge_gap_s: float = 0.08
    min_peak_snr_db: float = 6.0
    # features
    theta_active: float = 0.5
    theta_s: float = 0.1
    hr_threshold: float = 0.3
    # model
    hidden_sizes: tuple = (128, 64)
    learning_rate: float = 0.01
    max_iters: int = 500
    lbfgs_history: int = 10
    tolerance: float = 1e-5
    l2_weight: float = 1e-4
    # authentication
    confidence_threshold: float = 0.5
    fusion: str = "mean_log"
    k_values: tuple = (1, 3, 5)
    folds: int = 10
    # corpus
    n_subjects: int = 25
    gestures: tuple = tuple(range(1, 11))
    reps: int = 50
    envs: tuple = ("living_room",)
    attack_kinds: tuple = ("replay", "advanced_mimic")
    attack_reps: int | None = None          # None -> reps // 10
    env_profiles: dict = field(default_factory=_default_env_profiles)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        object.__setattr__(self, "k_values", tuple(self.k_values))
        object.__setattr__(self, "gestures", tuple(self.gestures))
        object.__setattr__(self, "envs", tuple(self.envs))
        object.__setattr__(self, "attack_kinds", tuple(self.attack_kinds))
        if not 0 < self.band_low_hz < self.band_high_hz <= 8000.0:
            raise InvalidInput("band edges must satisfy 0 < low < high <= 8000")
        if (self.frame_len, self.hop) != (FRAME_LEN, HOP):
            raise InvalidInput(
                f"this build's analysis front end is calibrated for "
                f"frame_len={FRAME_LEN}, hop={HOP}")
        if not 0.0 < self.self_transition < 1.0:
            raise InvalidInput("self_transition must be in (0, 1)")
        for name in ("min_event_s", "merge_gap_s", "theta_active", "theta_s",
                     "hr_threshold"):
            if getattr(self, name) < 0:
                raise InvalidInput(f"{name} must be >= 0")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise InvalidInput("hidden_sizes must be positive")
        if self.fusion not in FUSION_RULES:
            raise InvalidInput(f"fusion must be one of {FUSION_RULES}")
        if not 0.0 <= self.confidence_threshold < 1.0:
            raise InvalidInput("confidence_threshold must be in [0, 1)")
        if not self.k_values or any(k < 1 for k in self.k_values):
            raise InvalidInput("k_values must be >= 1")
        if self.folds < 2:
            raise InvalidInput("folds must be >= 2")
        if self.n_subjects < 1 or self.reps < 1:
            raise InvalidInput("n_subjects and reps must be >= 1")
        for g in self.gestures:
            check_gesture_id(g)
        for name, profile in self.env_profiles.items():
            extra = set(profile) - {"color", "snr_db"}
            if extra:
                raise InvalidInput(f"env profile {name!r}: unknown keys {extra}")
            if profile.get("color") not in NOISE_COLORS:
                raise InvalidInput(f"env profile {name!r}: color must be one "
                                   f"of {NOISE_COLORS}")
            snr = profile.get("snr_db")
            if not isinstance(snr, (int, float)):
                raise InvalidInput(f"env profile {name!r}: snr_db must be a number")
        for env in self.envs:
            if env not in self.env_profiles:
                raise InvalidInput(f"unknown environment {env!r}")
        for kind in self.attack_kinds:
            if kind not in ("replay", "advanced_mimic"):
                raise InvalidInput(f"unknown attack kind {kind!r}")
        if self.attack_reps is not None and self.attack_reps < 0:
            raise InvalidInput("attack_reps must be >= 0")
        # TrainConfig re-validates the optimizer block.
        self.train_config()

    # Views onto the per-module config types.

    def segmenter_config(self) -> SegmenterConfig:
        return SegmenterConfig(min_event_s=self.min_event_s,
                               merge_gap_s=self.merge_gap_s,
                               min_peak_snr_db=self.min_peak_snr_db,
                               hr_threshold=self.hr_threshold,
                               self_transition=self.self_transition)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate,
                           max_iters=self.max_iters,
                           lbfgs_history=self.lbfgs_history,
                           tolerance=self.tolerance,
                           l2_weight=self.l2_weight,
                           seed=self.seed if seed is None else seed)

    def auth_policy(self, k: int | None = None) -> AuthPolicy:
        return AuthPolicy(confidence_threshold=self.confidence_threshold,
                          fusion=self.fusion,
                          k=self.k_values[0] if k is None else k)

    def synth_profiles(self) -> dict:
        return {name: EnvProfile(name, p["color"], float(p["snr_db"]))
                for name, p in self.env_profiles.items()}

    def to_dict(self) -> dict:
        doc = {}
        for f in fields(self):
            value = getattr(self, f.name)
            doc[f.name] = list(value) if isinstance(value, tuple) else value
        return doc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise InvalidInput("config must be a JSON object")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**doc)


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InvalidInput(f"{path}: not valid JSON ({e})") from e
    return config_from_dict(doc)


def save_config(path, config: PipelineConfig) -> None:
    try:
        with open(path, "w") as f:
            json.dump(config.to_dict(), f, indent=1, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
