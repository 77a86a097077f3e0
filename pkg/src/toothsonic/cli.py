"""Command-line front end: synth, segment, featurize, train, eval, correlation.

Commands compose through files only.  Every command takes --config and --seed
and is deterministic given both; artifacts embed the config hash and tool
version.  Errors print one JSON object to stderr and exit nonzero.

Exit codes: 0 success, 1 pipeline error, 2 usage error, 3 gates failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from ._version import __version__
from .config import PipelineConfig, config_from_dict, load_config
from .errors import InvalidInput, ToothsonicError
from .evaluation import (check_gates, crossvalidate, gesture_correlation,
                         write_report_csv, write_report_json)
from .features import read_features_csv, write_features_csv
from .model import save_model, train_subjects
from .pipeline import featurize_manifest, segment_manifest, segment_wav, \
    write_segments_json
from .synth import generate_corpus

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_GATES = 3


def _setup_logging() -> None:
    name = os.environ.get("TOOTHSONIC_LOG", "error").lower()
    if name not in LOG_LEVELS:
        raise InvalidInput(f"TOOTHSONIC_LOG must be one of "
                           f"{sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(stream=sys.stderr, level=LOG_LEVELS[name],
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config = config_from_dict({**config.to_dict(), "seed": args.seed})
    return config


def _provenance(config: PipelineConfig) -> dict:
    return {"config_hash": config.config_hash(), "tool_version": __version__}


def _emit(doc: dict) -> None:
    json.dump(doc, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


def _parse_int_list(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise InvalidInput(f"expected a comma-separated integer list, got "
                           f"{text!r}") from None


def cmd_synth(args) -> int:
    config = _load_config(args)
    gestures = _parse_int_list(args.gestures) if args.gestures else config.gestures
    manifest = generate_corpus(
        args.out, master_seed=config.seed,
        n_subjects=args.subjects or config.n_subjects,
        gestures=gestures, reps=args.reps or config.reps,
        envs=tuple(args.envs.split(",")) if args.envs else config.envs,
        attack_kinds=config.attack_kinds,
        attack_reps=config.attack_reps if args.attack_reps is None
        else args.attack_reps,
        profiles=config.synth_profiles(), extra_meta=_provenance(config))
    _emit({"manifest": manifest})
    return EXIT_OK


def cmd_segment(args) -> int:
    config = _load_config(args)
    if (args.manifest is None) == (args.wav is None):
        raise InvalidInput("segment needs exactly one of --manifest or --wav")
    if args.wav:
        events = [{"start_s": s.start_s, "end_s": s.end_s,
                   "peak_snr_db": s.peak_snr_db, "mean_hr": s.mean_hr}
                  for s in segment_wav(args.wav, config)]
        summary = {"clips": [{"path": args.wav, "events": events}]}
    else:
        summary = segment_manifest(args.manifest, config, jobs=args.jobs)
    write_segments_json(args.out, summary, meta=_provenance(config))
    n_events = sum(len(c["events"]) for c in summary["clips"])
    _emit({"segments": args.out, "clips": len(summary["clips"]),
           "events": n_events})
    return EXIT_OK


def cmd_featurize(args) -> int:
    config = _load_config(args)
    table, skipped = featurize_manifest(args.manifest, config, jobs=args.jobs)
    note = " ".join(f"{k}={v}" for k, v in sorted(_provenance(config).items()))
    write_features_csv(args.out, table, header_note=note)
    _emit({"features": args.out, "rows": len(table), "skipped": len(skipped)})
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    table = read_features_csv(args.features)
    genuine = table.select(np.array([k == "genuine" for k in table.kinds]))
    clf = train_subjects(genuine.values, genuine.subject_ids,
                         config.train_config(), hidden=config.hidden_sizes)
    save_model(args.out, clf, extra=_provenance(config))
    _emit({"model": args.out, "subjects": len(clf.subjects),
           "rows": len(genuine), "iterations": len(clf.model.loss_curve),
           "final_loss": clf.model.loss_curve[-1]})
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args)
    table = read_features_csv(args.features)
    report = crossvalidate(table.values, table.subject_ids,
                           folds=config.folds, seed=config.seed,
                           gesture_ids=list(table.gesture_ids),
                           kinds=table.kinds, ks=config.k_values,
                           policy=config.auth_policy(),
                           hidden=config.hidden_sizes,
                           train_config=config.train_config())
    write_report_json(args.out, report, meta=_provenance(config))
    csv_path = os.path.splitext(args.out)[0] + ".csv"
    write_report_csv(csv_path, report)
    summary = {"report": args.out, "summary_csv": csv_path,
               "by_k": {str(k): {"frr": report.by_k[k].overall.frr,
                                 "far": report.by_k[k].overall.far,
                                 "bac": report.by_k[k].overall.bac}
                        for k in report.k_values}}
    if args.gates:
        with open(args.gates) as f:
            gates = json.load(f)
        failures = check_gates(report, gates)
        summary["gate_failures"] = failures
        _emit(summary)
        return EXIT_GATES if failures else EXIT_OK
    _emit(summary)
    return EXIT_OK


def cmd_correlation(args) -> int:
    config = _load_config(args)
    corr = gesture_correlation()
    with open(args.out, "w") as f:
        f.write("# " + " ".join(f"{k}={v}" for k, v in
                                sorted(_provenance(config).items())) + "\n")
        f.write("gesture," + ",".join(f"g{i}" for i in range(1, 11)) + "\n")
        for i in range(10):
            f.write(f"g{i + 1},"
                    + ",".join(repr(float(v)) for v in corr[i]) + "\n")
    _emit({"correlation": args.out})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toothsonic",
        description="Offline toolkit for acoustic-toothprint authentication "
                    "experiments on synthetic corpora.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults built in)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for per-clip stages")
        p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("synth", help="generate a synthetic WAV corpus")
    common(p)
    p.add_argument("--subjects", type=int, help="number of subjects")
    p.add_argument("--reps", type=int, help="genuine repetitions per gesture")
    p.add_argument("--gestures", help="comma-separated gesture ids, e.g. 1,7")
    p.add_argument("--envs", help="comma-separated environment names")
    p.add_argument("--attack-reps", type=int, dest="attack_reps",
                   help="attack repetitions per gesture")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="detect gesture events")
    common(p)
    p.add_argument("--manifest", help="corpus manifest to segment")
    p.add_argument("--wav", help="single WAV file to segment")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("featurize", help="extract 66-dim feature vectors")
    common(p)
    p.add_argument("--manifest", required=True, help="corpus manifest")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train the subject classifier")
    common(p)
    p.add_argument("--features", required=True, help="features CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="cross-validated authentication report")
    common(p)
    p.add_argument("--features", required=True, help="features CSV")
    p.add_argument("--gates", help="JSON bounds; exit 3 if any fail")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("correlation", help="gesture factor-overlap matrix CSV")
    common(p)
    p.set_defaults(func=cmd_correlation)
    return parser


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ToothsonicError as e:
        json.dump({"error": e.code, "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
