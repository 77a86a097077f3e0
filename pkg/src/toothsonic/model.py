"""Standardizer, fully connected softmax classifier, and an L-BFGS trainer.

The network and the optimizer are written out explicitly (no autograd, no
external solver) because their exact arithmetic is part of the contract:
the gradient must match finite differences and training must be bit
reproducible from a seed.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._version import __version__
from .errors import (
    EmptyInput, InvalidDataset, InvalidInput, InvalidLabel, IoError,
    UnknownSubject,
)

MODEL_FORMAT_VERSION = 1
DEFAULT_HIDDEN = (128, 64)


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension affine normalizer, fit on training data only."""

    mean: np.ndarray
    std: np.ndarray   # floored at 1e-8 so constant columns stay finite

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, float)
        if x.size == 0:
            raise EmptyInput("cannot fit a standardizer on no rows")
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), 1e-8))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, float) - self.mean) / self.std


@dataclass(frozen=True, eq=False)
class TrainConfig:
    learning_rate: float = 0.01   # initial line-search step on iteration one
    max_iters: int = 500
    lbfgs_history: int = 10
    tolerance: float = 1e-5       # on the gradient infinity norm
    l2_weight: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        vals = (self.learning_rate, self.max_iters, self.lbfgs_history,
                self.tolerance)
        if any(v <= 0 for v in vals) or self.l2_weight < 0:
            raise InvalidInput("train config values must be positive")


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Feed-forward net: ReLU hidden layers, softmax output."""

    sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]   # each (fan_out, fan_in)
    biases: tuple[np.ndarray, ...]
    seed: int
    loss_curve: tuple[float, ...] = field(default=(), repr=False)

    @property
    def n_classes(self) -> int:
        return self.sizes[-1]


def init_model(sizes, seed: int) -> MlpModel:
    """Seeded Xavier-normal weights (std sqrt(2/(fan_in+fan_out))), zero biases."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise InvalidInput(f"bad layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, tuple(weights), tuple(biases), seed)


def _logits(model: MlpModel, x: np.ndarray) -> np.ndarray:
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
    return h @ model.weights[-1].T + model.biases[-1]


def _check_input(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.sizes[0]:
        raise InvalidInput(f"expected {model.sizes[0]} inputs, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("non-finite input")
    return x, single


def log_forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Log-softmax class scores; shape follows the input (row or batch)."""
    x, single = _check_input(model, x)
    z = _logits(model, x)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return logp[0] if single else logp


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities; positive, each row sums to 1."""
    return np.exp(log_forward(model, x))


def loss_and_gradient(model: MlpModel, x: np.ndarray, labels: np.ndarray,
                      l2_weight: float = 0.0):
    """Mean cross-entropy plus l2/2 on weights, with its exact gradient.

    Returns (loss, [(dW, db) per layer]) from one reverse pass over the
    explicit layer structure.
    """
    x = np.atleast_2d(np.asarray(x, float))
    labels = np.asarray(labels, int)
    n = x.shape[0]
    if n == 0:
        raise EmptyInput("empty batch")
    if labels.shape != (n,):
        raise InvalidInput("one label per row required")
    if labels.min() < 0 or labels.max() >= model.n_classes:
        raise InvalidLabel(f"labels must lie in [0, {model.n_classes})")

    acts = [x]
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        acts.append(np.maximum(acts[-1] @ w.T + b, 0.0))
    z = acts[-1] @ model.weights[-1].T + model.biases[-1]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    ce = -float(np.mean(logp[np.arange(n), labels]))
    reg = 0.5 * l2_weight * sum(float(np.sum(w * w)) for w in model.weights)

    delta = np.exp(logp)
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(len(model.weights) - 1, -1, -1):
        dw = delta.T @ acts[i] + l2_weight * model.weights[i]
        db = delta.sum(axis=0)
        grads.append((dw, db))
        if i > 0:
            delta = (delta @ model.weights[i]) * (acts[i] > 0.0)
    return ce + reg, grads[::-1]


def _flatten(parts) -> np.ndarray:
    return np.concatenate([p.ravel() for pair in parts for p in pair])


def _unflatten(theta: np.ndarray, sizes) -> tuple[tuple, tuple]:
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(theta[pos:pos + fan_out * fan_in]
                       .reshape(fan_out, fan_in).copy())
        pos += fan_out * fan_in
        biases.append(theta[pos:pos + fan_out].copy())
        pos += fan_out
    return tuple(weights), tuple(biases)


def _two_loop(grad: np.ndarray, history) -> np.ndarray:
    """L-BFGS implicit Hessian product H g via the two-loop recursion."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if history:
        s, y, _ = history[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        q += (a - rho * (y @ q)) * s
    return q


ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
CURVATURE_FLOOR = 1e-10
MAX_BACKTRACKS = 60


def _minimize(fun, theta: np.ndarray, cfg: TrainConfig):
    """Full-batch L-BFGS with backtracking Armijo line search.

    Accepted steps always decrease the loss, so the returned curve is
    strictly decreasing. Stops on the gradient tolerance, the iteration cap,
    or a line search that cannot make progress.
    """
    loss, grad = fun(theta)
    curve = [loss]
    history: deque = deque(maxlen=cfg.lbfgs_history)
    for it in range(cfg.max_iters):
        if np.max(np.abs(grad)) <= cfg.tolerance:
            break
        d = -_two_loop(grad, history)
        gd = float(grad @ d)
        if gd >= 0.0:
            # curvature memory gave a non-descent direction, start over
            history.clear()
            d = -grad
            gd = float(grad @ d)
        step = cfg.learning_rate / np.linalg.norm(grad) if it == 0 else 1.0
        for _ in range(MAX_BACKTRACKS):
            cand = theta + step * d
            new_loss, new_grad = fun(cand)
            if new_loss <= loss + ARMIJO_C * step * gd:
                break
            step *= ARMIJO_SHRINK
        else:
            break
        s = cand - theta
        y = new_grad - grad
        sy = float(s @ y)
        if sy > CURVATURE_FLOOR:
            history.append((s, y, 1.0 / sy))
        theta, loss, grad = cand, new_loss, new_grad
        curve.append(loss)
    return theta, curve


def train(features: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
          hidden=DEFAULT_HIDDEN) -> tuple[Standardizer, MlpModel]:
    """Fit the standardizer and the classifier on one training split."""
    x = np.atleast_2d(np.asarray(features, float))
    labels = np.asarray(labels, int)
    if x.shape[0] != labels.shape[0]:
        raise InvalidDataset("features and labels disagree on row count")
    if labels.size == 0:
        raise InvalidDataset("empty training set")
    n_classes = int(labels.max()) + 1 if labels.size else 0
    counts = np.bincount(labels[labels >= 0], minlength=n_classes)
    if labels.min() < 0:
        raise InvalidLabel("negative label")
    if n_classes < 2 or np.any(counts == 0):
        raise InvalidDataset("need at least two classes, all present")
    if np.any(counts < 2):
        raise InvalidDataset("every class needs at least two samples")

    std = Standardizer.fit(x)
    xs = std.transform(x)
    sizes = (x.shape[1], *hidden, n_classes)
    model0 = init_model(sizes, cfg.seed)

    def fun(theta):
        w, b = _unflatten(theta, sizes)
        probe = MlpModel(sizes, w, b, cfg.seed)
        loss, grads = loss_and_gradient(probe, xs, labels, cfg.l2_weight)
        return loss, _flatten(grads)

    theta0 = _flatten(list(zip(model0.weights, model0.biases)))
    theta, curve = _minimize(fun, theta0, cfg)
    w, b = _unflatten(theta, sizes)
    return std, MlpModel(sizes, w, b, cfg.seed, tuple(curve))


def predict(model: MlpModel, standardizer: Standardizer,
            x: np.ndarray) -> tuple[int, np.ndarray]:
    """Most probable class for one vector; ties break to the lowest index."""
    probs = forward(model, standardizer.transform(x))
    if probs.ndim != 1:
        raise InvalidInput("predict takes a single vector")
    return int(np.argmax(probs)), probs


@dataclass(frozen=True, eq=False)
class SubjectClassifier:
    """Trained model plus the subject-id ordering that defines its classes."""

    subjects: tuple[str, ...]
    standardizer: Standardizer
    model: MlpModel

    def class_of(self, subject_id: str) -> int:
        try:
            return self.subjects.index(subject_id)
        except ValueError:
            raise UnknownSubject(f"model does not cover {subject_id!r}") from None

    def log_probs(self, x: np.ndarray) -> np.ndarray:
        return log_forward(self.model, self.standardizer.transform(x))


def train_subjects(features: np.ndarray, subject_ids, cfg: TrainConfig,
                   hidden=DEFAULT_HIDDEN) -> SubjectClassifier:
    """Train a classifier whose classes are the sorted unique subject ids."""
    subjects = tuple(sorted(set(subject_ids)))
    index = {s: i for i, s in enumerate(subjects)}
    labels = np.array([index[s] for s in subject_ids], int)
    std, model = train(features, labels, cfg, hidden)
    return SubjectClassifier(subjects, std, model)


def save_model(path, clf: SubjectClassifier, extra: dict | None = None) -> None:
    """Versioned JSON; floats serialize via repr so loads are bit exact.

    `extra` adds provenance keys (e.g. a config hash); the loader ignores
    anything it does not recognize.
    """
    doc = {
        **(extra or {}),
        "format_version": MODEL_FORMAT_VERSION,
        "tool": "toothsonic",
        "tool_version": __version__,
        "subjects": list(clf.subjects),
        "sizes": list(clf.model.sizes),
        "seed": clf.model.seed,
        "weights": [w.tolist() for w in clf.model.weights],
        "biases": [b.tolist() for b in clf.model.biases],
        "standardizer": {"mean": clf.standardizer.mean.tolist(),
                         "std": clf.standardizer.std.tolist()},
    }
    try:
        with open(path, "w") as f:
            json.dump(doc, f)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_model(path) -> SubjectClassifier:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InvalidInput(f"{path}: not a model file ({e})") from e
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise InvalidInput(
            f"{path}: unsupported model format_version {version!r}")
    try:
        sizes = tuple(int(s) for s in doc["sizes"])
        model = MlpModel(sizes,
                         tuple(np.array(w, float) for w in doc["weights"]),
                         tuple(np.array(b, float) for b in doc["biases"]),
                         int(doc["seed"]))
        std = Standardizer(np.array(doc["standardizer"]["mean"], float),
                           np.array(doc["standardizer"]["std"], float))
        subjects = tuple(str(s) for s in doc["subjects"])
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInput(f"{path}: malformed model file ({e})") from e
    for w, (fan_in, fan_out) in zip(model.weights,
                                    zip(sizes[:-1], sizes[1:])):
        if w.shape != (fan_out, fan_in):
            raise InvalidInput(f"{path}: weight shape mismatch")
    return SubjectClassifier(subjects, std, model)
