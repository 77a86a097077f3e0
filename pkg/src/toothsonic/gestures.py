"""The ten teeth gestures and the factor columns each one excites.

The binary table is transcribed data, embedded verbatim as sets of factor
column numbers (1..14). Everything else in the package derives gesture
behavior from these sets rather than hard-coding per-gesture rules.
"""
from __future__ import annotations

from .errors import InvalidGesture

FACTOR_NAMES: tuple[str, ...] = (
    "dental_mobility_fb",      # 1
    "dental_mobility_ud",      # 2
    "dental_mobility_lr",      # 3
    "propagation_channel",     # 4
    "dental_arch_shape",       # 5
    "depth_of_spee",           # 6
    "occlusion_classes",       # 7
    "dental_spacing",          # 8
    "incisor_shape_size",      # 9
    "canine_shape_size",       # 10
    "molar_shape_size",        # 11
    "cusp",                    # 12
    "enamel_thickness",        # 13
    "enamel_rod_patterns",     # 14
)

GESTURE_NAMES: dict[int, str] = {
    1: "occlusion sliding",
    2: "molar sliding",
    3: "canine sliding",
    4: "incisor sliding F/B",
    5: "incisor sliding U/D",
    6: "incisor sliding L/R",
    7: "occlusion tapping",
    8: "molar tapping",
    9: "canine tapping",
    10: "incisor tapping",
}

# checked factor columns per gesture, exactly as printed in the source table
GESTURE_FACTORS: dict[int, frozenset[int]] = {
    1: frozenset({3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14}),
    2: frozenset({1, 4, 6, 8, 11, 12, 13, 14}),
    3: frozenset({1, 4, 7, 8, 9, 13, 14}),
    4: frozenset({1, 4, 6, 7, 8, 9, 13, 14}),
    5: frozenset({2, 4, 6, 7, 8, 9, 13, 14}),
    6: frozenset({3, 4, 6, 7, 8, 9, 13, 14}),
    7: frozenset({2, 4, 5, 6, 7, 9, 10, 11, 12, 13}),
    8: frozenset({2, 4, 6, 11, 12, 13}),
    9: frozenset({2, 4, 6, 9, 10, 11, 13}),
    10: frozenset({2, 4, 6, 8, 9, 10, 12, 13}),
}

SLIDING_GESTURES = frozenset(range(1, 7))
TAPPING_GESTURES = frozenset(range(7, 11))

TOOTH_GROUPS = ("incisor", "canine", "molar")
_GROUP_COLUMN = {"incisor": 9, "canine": 10, "molar": 11}
_AXIS_COLUMNS = {1: "fb", 2: "ud", 3: "lr"}


def check_gesture_id(gesture_id: int) -> int:
    if gesture_id not in GESTURE_FACTORS:
        raise InvalidGesture(f"gesture id must be 1..10, got {gesture_id!r}")
    return gesture_id


def participating_groups(gesture_id: int) -> tuple[str, ...]:
    """Tooth groups whose shape/size column is checked for this gesture."""
    factors = GESTURE_FACTORS[check_gesture_id(gesture_id)]
    return tuple(g for g in TOOTH_GROUPS if _GROUP_COLUMN[g] in factors)


def mobility_axis(gesture_id: int) -> str:
    """The single mobility axis (fb/ud/lr) the gesture exercises."""
    factors = GESTURE_FACTORS[check_gesture_id(gesture_id)]
    axes = [axis for col, axis in _AXIS_COLUMNS.items() if col in factors]
    if len(axes) != 1:
        raise InvalidGesture(f"gesture {gesture_id} has no unique axis")
    return axes[0]


def is_slide(gesture_id: int) -> bool:
    return check_gesture_id(gesture_id) in SLIDING_GESTURES


def uses_factor(gesture_id: int, column: int) -> bool:
    return column in GESTURE_FACTORS[check_gesture_id(gesture_id)]
