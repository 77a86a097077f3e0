"""Corpus manifest: JSON lines, one header record then one record per clip."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .errors import InvalidInput, IoError

MANIFEST_FORMAT_VERSION = 1
_HEADER_KIND = "toothsonic_manifest"
CLIP_KINDS = ("genuine", "replay", "advanced_mimic")


@dataclass(frozen=True)
class ManifestRow:
    subject_id: str
    gesture_id: int
    rep: int
    kind: str                  # one of CLIP_KINDS
    env: str
    path: str                  # relative to the manifest's directory
    onset_s: tuple[float, ...]  # ground-truth event onsets within the clip

    def __post_init__(self):
        if self.kind not in CLIP_KINDS:
            raise InvalidInput(f"unknown clip kind {self.kind!r}")
        object.__setattr__(self, "onset_s", tuple(float(t) for t in self.onset_s))


def write_manifest(path, rows, meta: dict | None = None) -> None:
    header = {"format_version": MANIFEST_FORMAT_VERSION, "kind": _HEADER_KIND,
              **(meta or {})}
    try:
        with open(path, "w") as f:
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for row in rows:
                doc = asdict(row)
                doc["onset_s"] = list(doc["onset_s"])
                f.write(json.dumps(doc, sort_keys=True) + "\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_manifest(path) -> tuple[dict, list[ManifestRow]]:
    try:
        with open(path) as f:
            lines = [l for l in f if l.strip()]
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if not lines:
        raise InvalidInput(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
        docs = [json.loads(l) for l in lines[1:]]
    except json.JSONDecodeError as e:
        raise InvalidInput(f"{path}: not a manifest ({e})") from e
    if not isinstance(header, dict) or header.get("kind") != _HEADER_KIND:
        raise InvalidInput(f"{path}: missing manifest header record")
    if header.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise InvalidInput(f"{path}: unsupported manifest format_version "
                           f"{header.get('format_version')!r}")
    try:
        rows = [ManifestRow(subject_id=d["subject_id"],
                            gesture_id=int(d["gesture_id"]),
                            rep=int(d["rep"]), kind=d["kind"], env=d["env"],
                            path=d["path"], onset_s=tuple(d["onset_s"]))
                for d in docs]
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInput(f"{path}: malformed manifest row ({e})") from e
    return header, rows
