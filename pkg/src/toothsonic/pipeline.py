"""Manifest-driven batch stages: segmentation and feature extraction.

Each stage reads files named by a manifest and writes a file the next stage
reads; there is no state between invocations.  Clips yielding zero segments
are skipped and logged, never silently dropped into the feature table.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import PipelineConfig
from .dsp import bandpass, read_wav
from .features import N_FEATURES, FeatureTable, assemble
from .manifest import read_manifest
from .segment import GestureSegment, segment_gestures

log = logging.getLogger("toothsonic")


def segment_wav(path, config: PipelineConfig) -> list:
    """Detect gesture events in one WAV: band-limit, then segment."""
    clip = read_wav(path)
    filtered = bandpass(clip, config.band_low_hz, config.band_high_hz)
    return segment_gestures(filtered, config.segmenter_config())


def _best_segment(segments) -> GestureSegment:
    # One attempt per clip: keep the most prominent event.
    return max(segments, key=lambda s: (s.peak_snr_db, -s.start_s))


def _featurize_row(args):
    root, row_path, config = args
    segments = segment_wav(os.path.join(root, row_path), config)
    if not segments:
        return None
    seg = _best_segment(segments)
    vector = assemble(seg, theta_active=config.theta_active,
                      theta_s=config.theta_s,
                      hr_threshold=config.hr_threshold)
    return vector.values


def featurize_manifest(manifest_path, config: PipelineConfig,
                       jobs: int = 1) -> tuple[FeatureTable, list]:
    """One 66-dim feature row per manifest clip that yields a segment.

    Returns (table, skipped manifest rows).  Output order follows the
    manifest regardless of job count.
    """
    root = os.path.dirname(os.path.abspath(manifest_path))
    _, rows = read_manifest(manifest_path)
    tasks = [(root, row.path, config) for row in rows]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_featurize_row, tasks, chunksize=16))
    else:
        results = [_featurize_row(t) for t in tasks]
    values, subject_ids, gesture_ids, reps, kinds, skipped = [], [], [], [], [], []
    for row, vec in zip(rows, results):
        if vec is None:
            skipped.append(row)
            log.info("no gesture event found, skipping %s", row.path)
            continue
        values.append(vec)
        subject_ids.append(row.subject_id)
        gesture_ids.append(row.gesture_id)
        reps.append(row.rep)
        kinds.append(row.kind)
    stacked = (np.array(values, dtype=np.float64) if values
               else np.empty((0, N_FEATURES)))
    table = FeatureTable(values=stacked, subject_ids=subject_ids,
                         gesture_ids=np.array(gesture_ids, dtype=int),
                         reps=np.array(reps, dtype=int), kinds=kinds)
    if skipped:
        log.warning("skipped %d of %d clips with no detected events",
                    len(skipped), len(rows))
    return table, skipped


def segment_manifest(manifest_path, config: PipelineConfig,
                     jobs: int = 1) -> dict:
    """Run the segmenter over every manifest clip; JSON-ready summary."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    _, rows = read_manifest(manifest_path)
    tasks = [(root, row.path, config) for row in rows]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_segment_row, tasks, chunksize=16))
    else:
        summaries = [_segment_row(t) for t in tasks]
    clips = []
    for row, events in zip(rows, summaries):
        clips.append({"path": row.path, "subject_id": row.subject_id,
                      "gesture_id": row.gesture_id, "kind": row.kind,
                      "true_onset_s": list(row.onset_s), "events": events})
    return {"clips": clips}


def _segment_row(args):
    root, row_path, config = args
    segments = segment_wav(os.path.join(root, row_path), config)
    return [{"start_s": s.start_s, "end_s": s.end_s,
             "peak_snr_db": s.peak_snr_db, "mean_hr": s.mean_hr}
            for s in segments]


def write_segments_json(path, summary: dict, meta: dict | None = None) -> None:
    doc = dict(summary)
    doc.update(meta or {})
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
