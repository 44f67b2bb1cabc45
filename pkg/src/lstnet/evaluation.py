"""Source-domain classifiers and translate-then-classify evaluation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from .autograd import Parameter, no_grad
from .data import Batcher, LabeledDataset
from .functional import cross_entropy, softmax
from .layers import Conv, Dense, LeakyReLU, MaxPool, Network
from .optim import Adam

log = logging.getLogger(__name__)

N_CLASSES = 10

REFERENCE_ACCURACY = {
    "2to1": 0.9701,  # USPS -> MNIST
    "1to2": 0.9761,  # MNIST -> USPS
    "classifier_1": 0.9941,
    "classifier_2": 0.9751,
}


@dataclass
class ClassifierHyper:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    max_steps: Optional[int] = None
    patience: int = 2
    min_delta: float = 1e-3
    time_budget: Optional[float] = None
    seed: int = 0


class Classifier:
    """conv(32, K5) + pool, conv(64, K5) + pool, FC-256 LeakyReLU, FC-10 softmax."""

    def __init__(self, input_shape: tuple, seed: int = 0, slope: float = 0.2, dtype=np.float32):
        rng = np.random.default_rng(seed)
        h, w, c = input_shape
        layers = [
            Conv("C.1.conv", c, 32, 5, 1, "same", True, rng, slope, dtype), LeakyReLU(slope), MaxPool(2, 2),
            Conv("C.2.conv", 32, 64, 5, 1, "same", True, rng, slope, dtype), LeakyReLU(slope), MaxPool(2, 2),
        ]
        flat = int(np.prod(Network("probe", layers, input_shape).output_shape))
        layers += [Dense("C.3.fc", flat, 256, rng, slope, dtype), LeakyReLU(slope), Dense("C.4.fc", 256, N_CLASSES, rng, slope, dtype)]
        self.net = Network("C", layers, input_shape)
        self.input_shape = tuple(input_shape)
        self.seed = seed
        self.slope = slope

    def params(self) -> list[Parameter]:
        return self.net.params()

    def logits(self, x, training=False):
        return self.net(x, training)

    def predict_proba(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = []
        with no_grad():
            for i in range(0, len(images), batch_size):
                out.append(softmax(self.net(images[i:i + batch_size]).data.astype(np.float64)))
        return np.concatenate(out) if out else np.zeros((0, N_CLASSES))

    def predict(self, images: np.ndarray) -> np.ndarray:
        return self.predict_proba(images).argmax(axis=1)

    def accuracy(self, dataset: LabeledDataset) -> float:
        return float(np.mean(self.predict(dataset.images) == dataset.labels))

    def save(self, path, extra: Optional[dict] = None) -> None:
        header = {"kind": "classifier", "input_shape": list(self.input_shape), "seed": self.seed, "slope": self.slope, **(extra or {})}
        ckpt.save(path, header, [ckpt.Entry(p.name, p.data, p.m, p.v, p.t) for p in self.params()])

    @classmethod
    def load(cls, path) -> tuple["Classifier", dict]:
        header, entries = ckpt.load(path)
        if header.get("kind") != "classifier":
            raise ckpt.CheckpointError(f"{path} is not a classifier checkpoint")
        clf = cls(tuple(header["input_shape"]), header["seed"], header["slope"])
        by_name = {e.name: e for e in entries}
        for p in clf.params():
            if p.name not in by_name:
                raise ckpt.CheckpointError(f"{path}: missing tensor {p.name}")
            p.data[...] = by_name[p.name].value
        return clf, header


def train_classifier(train: LabeledDataset, hyper: Optional[ClassifierHyper] = None, test: Optional[LabeledDataset] = None) -> tuple[Classifier, Optional[float]]:
    """Cross-entropy training with Adam; stops early once the epoch loss plateaus.

    Returns the classifier and its accuracy on ``test`` (``None`` without a test set).
    """
    hyper = hyper or ClassifierHyper()
    labels = np.asarray(train.labels)
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise ValueError(f"labels must lie in 0..{N_CLASSES - 1}")
    clf = Classifier(train.image_shape, hyper.seed)
    opt = Adam(clf.params(), hyper.lr, 0.9, 0.999)
    batches = Batcher(len(train), min(hyper.batch_size, len(train)), hyper.seed)
    best, stale, steps = np.inf, 0, 0
    started = time.perf_counter()
    done = False
    for epoch in range(hyper.max_epochs):
        losses = []
        for idx in batches.epoch_indices(epoch):
            opt.zero_grad()
            loss = cross_entropy(clf.logits(train.images[idx], training=True), labels[idx])
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
            steps += 1
            if hyper.max_steps is not None and steps >= hyper.max_steps:
                done = True
            if hyper.time_budget is not None and time.perf_counter() - started > hyper.time_budget:
                done = True
            if done:
                break
        epoch_loss = float(np.mean(losses))
        log.info("classifier epoch %d  loss %.4f", epoch + 1, epoch_loss)
        if done:
            break
        if epoch_loss < best - hyper.min_delta:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if stale >= hyper.patience:
                break
    acc = clf.accuracy(test) if test is not None else None
    return clf, acc


def translate_dataset(images: np.ndarray, direction: str, model, batch_size: int = 128) -> np.ndarray:
    """Map images across domains with batch norm in eval mode.

    ``direction`` is ``"2to1"`` (G1 after E2) or ``"1to2"`` (G2 after E1).
    """
    if direction not in ("2to1", "1to2"):
        raise ValueError(f"direction must be '2to1' or '1to2', got {direction!r}")
    source, target = (2, 1) if direction == "2to1" else (1, 2)
    if tuple(images.shape[1:]) != model.image_shape(source):
        raise ValueError(f"direction {direction} expects images of shape {model.image_shape(source)}, got {images.shape[1:]}")
    dtype = np.dtype(model.config.dtype)
    out = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            chunk = np.asarray(images[i:i + batch_size], dtype=dtype)
            out.append(model.translate(chunk, source, target, training=False).data)
    if not out:
        return np.zeros((0, *model.image_shape(target)), dtype=dtype)
    return np.concatenate(out)


@dataclass
class EvalReport:
    direction: str
    accuracy: float
    confusion: list
    n: int
    source_accuracy: Optional[float] = None
    baseline_accuracy: Optional[float] = None
    reference: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "direction": self.direction,
            "accuracy": self.accuracy,
            "n": self.n,
            "confusion": self.confusion,
            "source_accuracy": self.source_accuracy,
            "baseline_accuracy": self.baseline_accuracy,
            "reference": self.reference,
        }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def confusion_matrix(labels: np.ndarray, predictions: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


def evaluate_adaptation(classifier, translated: np.ndarray, labels: np.ndarray, direction: str = "2to1",
                        source_accuracy: Optional[float] = None) -> EvalReport:
    """Accuracy and confusion matrix of ``classifier`` on already-translated images.

    ``classifier`` may be a :class:`Classifier` or any callable returning
    class predictions for an image batch.
    """
    labels = np.asarray(labels)
    if len(translated) != len(labels):
        raise ValueError(f"{len(translated)} images but {len(labels)} labels")
    preds = classifier.predict(translated) if hasattr(classifier, "predict") else np.asarray(classifier(translated))
    cm = confusion_matrix(labels, preds)
    acc = float(np.trace(cm) / max(len(labels), 1))
    return EvalReport(direction, acc, cm.tolist(), int(len(labels)), source_accuracy,
                      reference=REFERENCE_ACCURACY.get(direction))
