"""Authentication decisions, attack protocols, cross-validation and metrics.

An attempt presents k feature vectors under a claimed identity.  Per-vector
class log-probabilities are fused (mean log-probability by default, majority
vote as an alternative) and the claim is accepted only when the claimed
subject both wins the fused ranking and clears a confidence threshold, so
off-manifold inputs can be rejected even when they accidentally rank first.
"""
from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (EmptyInput, EmptyProtocol, InvalidInput, InvalidProtocol,
                     IoError)
from .gestures import GESTURE_FACTORS
from .model import DEFAULT_HIDDEN, SubjectClassifier, TrainConfig, train_subjects
from .synth import derive_seed

FUSION_RULES = ("mean_log", "majority")
ATTEMPT_KINDS = ("genuine", "mimic", "replay", "advanced_mimic")
DEFAULT_KS = (1, 3, 5)
REPORT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AuthPolicy:
    """Decision rule: fuse k per-gesture probability vectors, then threshold.

    confidence_threshold = 0 degenerates to plain argmax matching.
    """
    confidence_threshold: float = 0.5
    fusion: str = "mean_log"
    k: int = 1

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold < 1.0:
            raise InvalidInput("confidence_threshold must be in [0, 1), got "
                               f"{self.confidence_threshold}")
        if self.fusion not in FUSION_RULES:
            raise InvalidInput(f"fusion must be one of {FUSION_RULES}, got "
                               f"{self.fusion!r}")
        if self.k < 1:
            raise InvalidInput(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class AttemptRecord:
    """One authentication attempt and its outcome."""
    claimed_id: str
    true_id: str
    kind: str                    # one of ATTEMPT_KINDS
    gesture_ids: tuple[int, ...]
    decision: bool
    fused_probability: float     # fused probability assigned to the claim
    predicted_id: str            # fused top-ranked subject
    fold: int = -1

    def __post_init__(self):
        if self.kind not in ATTEMPT_KINDS:
            raise InvalidInput(f"unknown attempt kind {self.kind!r}")
        object.__setattr__(self, "gesture_ids",
                           tuple(int(g) for g in self.gesture_ids))

    @property
    def k(self) -> int:
        return len(self.gesture_ids)


def _fuse(logp_rows: np.ndarray, policy: AuthPolicy) -> np.ndarray:
    """Fused per-class probabilities for a (k, n_classes) block of log-probs."""
    if policy.fusion == "mean_log":
        fused = logp_rows.mean(axis=0)
        fused = fused - fused.max()
        probs = np.exp(fused)
        return probs / probs.sum()
    votes = np.argmax(logp_rows, axis=1)
    counts = np.bincount(votes, minlength=logp_rows.shape[1])
    return counts / len(votes)


def _decide(logp_rows: np.ndarray, claimed: int,
            policy: AuthPolicy) -> tuple[bool, np.ndarray]:
    probs = _fuse(logp_rows, policy)
    accept = bool(int(np.argmax(probs)) == claimed
                  and probs[claimed] >= policy.confidence_threshold)
    return accept, probs


def authenticate(classifier: SubjectClassifier, claimed_id: str,
                 feature_vectors, policy: AuthPolicy = AuthPolicy()
                 ) -> tuple[bool, np.ndarray]:
    """Decide one claim from k >= 1 gesture feature vectors.

    Returns (accept, fused per-class probabilities in classifier.subjects
    order).  With mean-log fusion the probabilities are the normalized
    geometric mean of the per-gesture posteriors; with majority fusion they
    are the vote fractions.
    """
    claimed = classifier.class_of(claimed_id)
    vectors = np.atleast_2d(np.asarray(feature_vectors, dtype=np.float64))
    if vectors.shape[0] < 1:
        raise EmptyInput("need at least one feature vector")
    return _decide(classifier.log_probs(vectors), claimed, policy)


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class MetricBlock:
    """FRR/FAR/BAC/accuracy over one attempt subset; None when undefined."""
    frr: float | None
    far: float | None
    bac: float | None
    accuracy: float | None
    n_genuine: int
    n_adversarial: int


def _metric_block(attempts) -> MetricBlock:
    genuine = [a for a in attempts if a.kind == "genuine"]
    adversarial = [a for a in attempts if a.kind != "genuine"]
    frr = far = bac = accuracy = None
    if genuine:
        frr = sum(1 for a in genuine if not a.decision) / len(genuine)
    if adversarial:
        far = sum(1 for a in adversarial if a.decision) / len(adversarial)
    if frr is not None and far is not None:
        bac = ((1.0 - frr) + (1.0 - far)) / 2.0
    if attempts:
        correct = sum(1 for a in attempts if a.decision == (a.kind == "genuine"))
        accuracy = correct / len(attempts)
    return MetricBlock(frr=frr, far=far, bac=bac, accuracy=accuracy,
                       n_genuine=len(genuine), n_adversarial=len(adversarial))


@dataclass(frozen=True, eq=False)
class KBlock:
    """All metrics for one fusion size k."""
    k: int
    overall: MetricBlock
    confusion: np.ndarray        # rows: true subject, cols: predicted
    per_gesture: dict
    per_protocol: dict


@dataclass(frozen=True, eq=False)
class EvalReport:
    subjects: tuple[str, ...]
    folds: int
    k_values: tuple[int, ...]
    by_k: dict                   # k -> KBlock
    attempts: tuple[AttemptRecord, ...] = field(repr=False)

    def block(self, k: int | None = None) -> KBlock:
        key = self.k_values[0] if k is None else k
        if key not in self.by_k:
            raise InvalidInput(f"report has no k={key} block")
        return self.by_k[key]

    @property
    def frr(self):
        return self.block().overall.frr

    @property
    def far(self):
        return self.block().overall.far

    @property
    def bac(self):
        return self.block().overall.bac

    @property
    def accuracy(self):
        return self.block().overall.accuracy

    @property
    def confusion(self) -> np.ndarray:
        return self.block().confusion


def compute_metrics(attempts) -> EvalReport:
    """Reduce an attempt log to a report; every number is a plain recount."""
    attempts = tuple(attempts)
    if not attempts:
        raise EmptyInput("no attempts to score")
    subjects = tuple(sorted({a.true_id for a in attempts}
                            | {a.claimed_id for a in attempts}))
    index = {s: i for i, s in enumerate(subjects)}
    k_values = tuple(sorted({a.k for a in attempts}))
    by_k = {}
    for k in k_values:
        sub = [a for a in attempts if a.k == k]
        confusion = np.zeros((len(subjects), len(subjects)), dtype=int)
        for a in sub:
            confusion[index[a.true_id], index[a.predicted_id]] += 1
        per_gesture = {g: _metric_block([a for a in sub if g in a.gesture_ids])
                       for g in sorted({g for a in sub for g in a.gesture_ids})}
        per_protocol = {kind: _metric_block([a for a in sub if a.kind == kind])
                        for kind in ATTEMPT_KINDS
                        if any(a.kind == kind for a in sub)}
        by_k[k] = KBlock(k=k, overall=_metric_block(sub), confusion=confusion,
                         per_gesture=per_gesture, per_protocol=per_protocol)
    folds = len({a.fold for a in attempts if a.fold >= 0})
    return EvalReport(subjects=subjects, folds=folds, k_values=k_values,
                      by_k=by_k, attempts=attempts)


# ---------------------------------------------------------------------------
# Attack protocols


def _chunks(rows, k: int):
    return [rows[i:i + k] for i in range(0, len(rows) - k + 1, k)]


def _subject_attempts(classifier, logp, gesture_ids, rows, claimed_id,
                      true_id, kind, policy, ks, fold):
    """Chunk one subject's rows into non-overlapping k-gesture attempts."""
    claimed = classifier.class_of(claimed_id)
    out = []
    for k in ks:
        pol = AuthPolicy(policy.confidence_threshold, policy.fusion, k)
        for chunk in _chunks(rows, k):
            accept, probs = _decide(logp[chunk], claimed, pol)
            out.append(AttemptRecord(
                claimed_id=claimed_id, true_id=true_id, kind=kind,
                gesture_ids=tuple(gesture_ids[i] for i in chunk),
                decision=accept, fused_probability=float(probs[claimed]),
                predicted_id=classifier.subjects[int(np.argmax(probs))],
                fold=fold))
    return out


def _by_subject(subject_ids):
    groups: dict = {}
    for i, s in enumerate(subject_ids):
        groups.setdefault(s, []).append(i)
    return dict(sorted(groups.items()))


def genuine_protocol(classifier: SubjectClassifier, features, subject_ids,
                     gesture_ids=None, policy: AuthPolicy = AuthPolicy(),
                     ks=(1,), fold: int = -1) -> list:
    """Held-out genuine vectors claim their own subject."""
    features = np.asarray(features, dtype=np.float64)
    subject_ids = list(subject_ids)
    if not subject_ids:
        return []
    gesture_ids = list(gesture_ids) if gesture_ids is not None else [0] * len(subject_ids)
    logp = classifier.log_probs(features)
    out = []
    for subject, rows in _by_subject(subject_ids).items():
        out.extend(_subject_attempts(classifier, logp, gesture_ids, rows,
                                     claimed_id=subject, true_id=subject,
                                     kind="genuine", policy=policy, ks=ks,
                                     fold=fold))
    return out


def mimic_protocol(classifier: SubjectClassifier, features, subject_ids,
                   gesture_ids=None, policy: AuthPolicy = AuthPolicy(),
                   ks=(1,), fold: int = -1) -> list:
    """Every subject attacks every other subject with their own gestures.

    `features` must be held-out genuine vectors the classifier never saw.
    N subjects with m chunks each yield N*(N-1)*m attempts.
    """
    features = np.asarray(features, dtype=np.float64)
    subject_ids = list(subject_ids)
    if not subject_ids:
        return []
    gesture_ids = list(gesture_ids) if gesture_ids is not None else [0] * len(subject_ids)
    logp = classifier.log_probs(features)
    out = []
    for attacker, rows in _by_subject(subject_ids).items():
        for victim in classifier.subjects:
            if victim == attacker:
                continue
            out.extend(_subject_attempts(classifier, logp, gesture_ids, rows,
                                         claimed_id=victim, true_id=attacker,
                                         kind="mimic", policy=policy, ks=ks,
                                         fold=fold))
    return out


def replay_protocol(classifier: SubjectClassifier, features, subject_ids,
                    gesture_ids=None, policy: AuthPolicy = AuthPolicy(),
                    ks=(1,), fold: int = -1, kind: str = "replay") -> list:
    """Recorded-and-replayed clips claim their own true subject.

    Also used for advanced-mimic clips via kind="advanced_mimic"; only the
    synthesis differs, the claim structure is the same.
    """
    features = np.asarray(features, dtype=np.float64)
    subject_ids = list(subject_ids)
    if not subject_ids:
        raise EmptyProtocol(f"no {kind} attempts in the dataset")
    gesture_ids = list(gesture_ids) if gesture_ids is not None else [0] * len(subject_ids)
    logp = classifier.log_probs(features)
    out = []
    for subject, rows in _by_subject(subject_ids).items():
        out.extend(_subject_attempts(classifier, logp, gesture_ids, rows,
                                     claimed_id=subject, true_id=subject,
                                     kind=kind, policy=policy, ks=ks,
                                     fold=fold))
    return out


# ---------------------------------------------------------------------------
# Cross-validation


def _fold_assignment(subject_ids, gesture_ids, kinds, folds: int,
                     seed: int) -> np.ndarray:
    """Deal every (subject, gesture, kind) group round-robin into folds."""
    groups: dict = {}
    for i, key in enumerate(zip(subject_ids, gesture_ids, kinds)):
        groups.setdefault(key, []).append(i)
    assignment = np.full(len(subject_ids), -1, dtype=int)
    for key in sorted(groups):
        rows = groups[key]
        rng = np.random.default_rng(derive_seed(seed, *key))
        order = rng.permutation(len(rows))
        for pos, j in enumerate(order):
            assignment[rows[j]] = pos % folds
    return assignment


def _interleave_gestures(rows, gesture_ids):
    """Order rows g1, g2, ... g10, g1, ... so k-chunks span distinct gestures."""
    buckets: dict = {}
    for i in rows:
        buckets.setdefault(gesture_ids[i], []).append(i)
    queues = [buckets[g] for g in sorted(buckets)]
    out = []
    depth = 0
    while True:
        layer = [q[depth] for q in queues if depth < len(q)]
        if not layer:
            return out
        out.extend(layer)
        depth += 1


def crossvalidate(features, labels, folds: int = 10, seed: int = 0, *,
                  gesture_ids=None, kinds=None, ks=DEFAULT_KS,
                  policy: AuthPolicy = AuthPolicy(), hidden=DEFAULT_HIDDEN,
                  train_config: TrainConfig | None = None) -> EvalReport:
    """K-fold evaluation with per-subject stratified, seeded fold assignment.

    Every fold trains on the other folds' genuine vectors and scores the
    held-out fold: genuine claims, all-ordered-pairs mimic attacks, and any
    replay / advanced-mimic rows (which never enter training).  Metrics
    aggregate the full attempt log over all folds.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = list(labels)
    if features.ndim != 2 or features.shape[0] != len(labels):
        raise InvalidInput("features must be 2-d with one row per label")
    if folds < 2:
        raise InvalidProtocol(f"folds must be >= 2, got {folds}")
    n = len(labels)
    gesture_ids = list(gesture_ids) if gesture_ids is not None else [0] * n
    kinds = list(kinds) if kinds is not None else ["genuine"] * n
    if len(gesture_ids) != n or len(kinds) != n:
        raise InvalidInput("labels, gesture_ids and kinds must align")

    genuine_counts: dict = {}
    for s, g, kind in zip(labels, gesture_ids, kinds):
        if kind == "genuine":
            genuine_counts[(s, g)] = genuine_counts.get((s, g), 0) + 1
    if not genuine_counts:
        raise InvalidProtocol("no genuine rows to train on")
    for (s, g), count in sorted(genuine_counts.items()):
        if count < folds:
            raise InvalidProtocol(
                f"subject {s!r} has {count} genuine samples of gesture {g}, "
                f"needs >= {folds} for {folds}-fold evaluation")

    assignment = _fold_assignment(labels, gesture_ids, kinds, folds, seed)
    genuine_mask = np.array([k == "genuine" for k in kinds])
    attempts = []
    for fold in range(folds):
        held = assignment == fold
        train_rows = np.flatnonzero(~held & genuine_mask)
        base_cfg = train_config if train_config is not None else TrainConfig()
        cfg = dataclasses.replace(base_cfg, seed=derive_seed(seed, "fold", fold))
        clf = train_subjects(features[train_rows],
                             [labels[i] for i in train_rows], cfg, hidden)

        held_genuine = np.flatnonzero(held & genuine_mask)
        ordered = _interleave_gestures(list(held_genuine), gesture_ids)
        sub_feat = features[ordered]
        sub_ids = [labels[i] for i in ordered]
        sub_gest = [gesture_ids[i] for i in ordered]
        attempts += genuine_protocol(clf, sub_feat, sub_ids, sub_gest,
                                     policy, ks, fold)
        attempts += mimic_protocol(clf, sub_feat, sub_ids, sub_gest,
                                   policy, ks, fold)
        for attack in ("replay", "advanced_mimic"):
            rows = [i for i in np.flatnonzero(held)
                    if kinds[i] == attack]
            if not rows:
                continue
            rows = _interleave_gestures(rows, gesture_ids)
            attempts += replay_protocol(clf, features[rows],
                                        [labels[i] for i in rows],
                                        [gesture_ids[i] for i in rows],
                                        policy, ks, fold, kind=attack)
    return compute_metrics(attempts)


# ---------------------------------------------------------------------------
# Gesture correlation


def gesture_correlation() -> np.ndarray:
    """10x10 percentage matrix: Jaccard overlap of the gestures' factor sets."""
    ids = sorted(GESTURE_FACTORS)
    corr = np.zeros((len(ids), len(ids)))
    for i, gi in enumerate(ids):
        for j, gj in enumerate(ids):
            a, b = GESTURE_FACTORS[gi], GESTURE_FACTORS[gj]
            corr[i, j] = 100.0 * len(a & b) / len(a | b)
    return corr


# ---------------------------------------------------------------------------
# Report serialization and gates


def _block_doc(block: MetricBlock) -> dict:
    return {"frr": block.frr, "far": block.far, "bac": block.bac,
            "accuracy": block.accuracy, "n_genuine": block.n_genuine,
            "n_adversarial": block.n_adversarial}


def report_to_dict(report: EvalReport, include_attempts: bool = True) -> dict:
    doc = {"format_version": REPORT_FORMAT_VERSION,
           "subjects": list(report.subjects), "folds": report.folds,
           "k_values": list(report.k_values), "by_k": {}}
    for k, block in report.by_k.items():
        doc["by_k"][str(k)] = {
            "overall": _block_doc(block.overall),
            "confusion": block.confusion.tolist(),
            "per_gesture": {str(g): _block_doc(b)
                            for g, b in block.per_gesture.items()},
            "per_protocol": {kind: _block_doc(b)
                             for kind, b in block.per_protocol.items()},
        }
    if include_attempts:
        doc["attempts"] = [
            {"claimed_id": a.claimed_id, "true_id": a.true_id, "kind": a.kind,
             "gesture_ids": list(a.gesture_ids), "decision": a.decision,
             "fused_probability": repr(a.fused_probability),
             "predicted_id": a.predicted_id, "fold": a.fold}
            for a in report.attempts]
    return doc


def write_report_json(path, report: EvalReport, include_attempts: bool = True,
                      meta: dict | None = None) -> None:
    doc = report_to_dict(report, include_attempts)
    doc.update(meta or {})
    try:
        with open(path, "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def write_report_csv(path, report: EvalReport) -> None:
    """Summary: one row per protocol x k plus an overall row per k."""
    def fmt(v):
        return "" if v is None else repr(v)

    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["protocol", "k", "frr", "far", "bac", "accuracy",
                        "n_genuine", "n_adversarial"])
            for k in report.k_values:
                block = report.by_k[k]
                w.writerow(["overall", k, fmt(block.overall.frr),
                            fmt(block.overall.far), fmt(block.overall.bac),
                            fmt(block.overall.accuracy),
                            block.overall.n_genuine,
                            block.overall.n_adversarial])
                for kind, b in block.per_protocol.items():
                    w.writerow([kind, k, fmt(b.frr), fmt(b.far), fmt(b.bac),
                                fmt(b.accuracy), b.n_genuine, b.n_adversarial])
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def check_gates(report: EvalReport, gates: dict) -> list:
    """Compare a report against bounds; returns a list of failure strings.

    Gates look like {"k": 1, "frr_max": 0.1, "far_max": 0.1, "bac_min": 0.9,
    "protocols": {"replay": {"far_max": 0.05}}}.
    """
    failures = []
    k = gates.get("k")
    try:
        block = report.block(k)
    except InvalidInput:
        return [f"report has no k={k} block"]

    def check(scope: str, metrics: MetricBlock, spec: dict):
        bounds = (("frr_max", metrics.frr, "<="), ("far_max", metrics.far, "<="),
                  ("bac_min", metrics.bac, ">="),
                  ("accuracy_min", metrics.accuracy, ">="))
        for key, value, op in bounds:
            if key not in spec:
                continue
            bound = spec[key]
            if value is None:
                failures.append(f"{scope}: {key}={bound} but metric undefined")
            elif op == "<=" and value > bound:
                failures.append(f"{scope}: {key} violated ({value} > {bound})")
            elif op == ">=" and value < bound:
                failures.append(f"{scope}: {key} violated ({value} < {bound})")

    check("overall", block.overall, gates)
    for kind, spec in gates.get("protocols", {}).items():
        if kind not in block.per_protocol:
            failures.append(f"{kind}: no attempts of this protocol in report")
            continue
        check(kind, block.per_protocol[kind], spec)
    return failures
