"""Two-phase alternating optimisation of the translation network."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from .augment import AugmentConfig, augment_batch
from .autograd import NonFiniteError, frozen
from .data import Batcher
from .networks import BuildConfig, LSTNet, build_lstnet
from .objective import (
    TERMS,
    LossReport,
    ObjectiveWeights,
    Translation,
    adversarial_terms,
    balanced_accuracy,
    discriminator_outputs,
    phase_losses,
    total_objective,
)
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.8
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    max_steps: int = 1000
    log_interval: int = 10
    checkpoint_interval: int = 0
    seed: int = 0
    augment: bool = True
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    nonsaturating: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = ObjectiveWeights(**d["weights"])
        d["augmentation"] = AugmentConfig(**d["augmentation"])
        return cls(**d)


def _check(value, term: str) -> float:
    value = float(value.data if hasattr(value, "data") else value)
    if not np.isfinite(value):
        raise NonFiniteError(f"loss term {term} is not finite ({value})")
    return value


def train_step(x1: np.ndarray, x2: np.ndarray, model: LSTNet, opt_d: Adam, opt_eg: Adam, config: TrainConfig, step: int = 0) -> LossReport:
    """One discriminator update followed by one encoder/generator update on the same batches.

    The encoder/generator forward pass is computed once; the discriminator
    phase sees detached copies, so E/G receive no gradient there.
    """
    w = config.weights
    d_team = model.team("discriminator")

    try:
        tr = Translation(model, x1, x2, training=True)
    except NonFiniteError as exc:
        raise NonFiniteError(f"step {step}: encoder/generator forward pass: {exc}") from None

    # phase one: discriminators
    opt_d.zero_grad()
    out_d = discriminator_outputs(model, tr, detach=True)
    adv_d = adversarial_terms(out_d)
    for k, v in adv_d.items():
        _check(v, f"{k} (discriminator phase)")
    d_loss = phase_losses(adv_d, "discriminator", w)
    d_loss.backward()
    opt_d.step()
    dl_acc = balanced_accuracy(out_d["dl_1"].data, out_d["dl_2"].data)

    # phase two: encoders and generators against the updated discriminators
    opt_eg.zero_grad()
    with frozen(d_team):
        out = discriminator_outputs(model, tr, detach=False)
        terms = {**adversarial_terms(out), **tr.cycle_terms()}
        values = {k: _check(terms[k], k) for k in TERMS}
        eg_loss = phase_losses(terms, "encoder_generator", w, config.nonsaturating, out)
        _check(eg_loss, "encoder/generator phase loss")
        eg_loss.backward()
    opt_eg.step()

    return LossReport(
        **values,
        total=total_objective(w, values),
        d_loss=_check(d_loss, "discriminator phase loss"),
        eg_loss=float(eg_loss.data),
        dl_balanced_acc=dl_acc,
        step=step,
    )


class Trainer:
    """Owns the model, both optimisers, and the per-domain data streams."""

    def __init__(self, model: LSTNet, images1: np.ndarray, images2: np.ndarray, config: TrainConfig):
        if len(images1) == 0 or len(images2) == 0:
            raise ValueError("both training sets must be non-empty")
        for d, imgs in ((1, images1), (2, images2)):
            if tuple(imgs.shape[1:]) != model.image_shape(d):
                raise ValueError(f"domain {d} images have shape {imgs.shape[1:]}, model expects {model.image_shape(d)}")
        self.model = model
        self.config = config
        self.images = {1: images1, 2: images2}
        dtype = np.dtype(model.config.dtype)
        self.images = {d: np.asarray(x, dtype=dtype) for d, x in self.images.items()}
        self.batchers = {d: Batcher(len(self.images[d]), config.batch_size, config.seed * 10 + d) for d in (1, 2)}
        self.opt_d = Adam(model.team("discriminator"), config.lr, config.beta1, config.beta2, config.epsilon)
        self.opt_eg = Adam(model.team("encoder_generator"), config.lr, config.beta1, config.beta2, config.epsilon)
        self.step = 0
        self.reports: list[LossReport] = []
        self.history: list[LossReport] = []

    def next_batch(self, domain: int) -> np.ndarray:
        batch = self.images[domain][self.batchers[domain].next_indices()]
        if self.config.augment:
            rng = np.random.default_rng([self.config.seed, self.step, domain])
            batch = augment_batch(batch, rng, self.config.augmentation)
        return batch

    def train_step(self) -> LossReport:
        x1 = self.next_batch(1)
        x2 = self.next_batch(2)
        self.step += 1
        report = train_step(x1, x2, self.model, self.opt_d, self.opt_eg, self.config, self.step)
        self.reports.append(report)
        return report

    def run(self, steps: Optional[int] = None, log_file=None, checkpoint_dir=None) -> list[LossReport]:
        steps = self.config.max_steps - self.step if steps is None else steps
        cfg = self.config
        started = time.perf_counter()
        for _ in range(steps):
            report = self.train_step()
            if cfg.log_interval and self.step % cfg.log_interval == 0:
                self.history.append(report)
                if log_file is not None:
                    log_file.write(report.to_json() + "\n")
                    log_file.flush()
                log.info("step %d  total %.4f  cc1 %.4f  cc2 %.4f  anl %.4f  D_l acc %.2f  (%.1fs)",
                         self.step, report.total, report.j_cc1, report.j_cc2, report.j_anl,
                         report.dl_balanced_acc, time.perf_counter() - started)
            if checkpoint_dir is not None and cfg.checkpoint_interval and self.step % cfg.checkpoint_interval == 0:
                self.save(Path(checkpoint_dir) / f"checkpoint_{self.step:07d}.lstn")
        return self.history

    # persistence -------------------------------------------------------------

    def header(self) -> dict:
        return {
            "kind": "lstnet",
            "build": self.model.config.to_dict(),
            "train": self.config.to_dict(),
            "step": self.step,
            "streams": {str(d): b.state() for d, b in self.batchers.items()},
        }

    def save(self, path) -> None:
        ckpt.save(path, self.header(), ckpt.model_entries(self.model))

    @classmethod
    def resume(cls, path, images1: np.ndarray, images2: np.ndarray) -> "Trainer":
        header, entries = ckpt.load(path)
        if header.get("kind") != "lstnet":
            raise ckpt.CheckpointError(f"{path} is not a translation-network checkpoint")
        model = build_lstnet(BuildConfig.from_dict(header["build"]))
        ckpt.restore_model(model, entries)
        trainer = cls(model, images1, images2, TrainConfig.from_dict(header["train"]))
        trainer.step = int(header["step"])
        for d, state in header["streams"].items():
            trainer.batchers[int(d)].restore(state)
        return trainer


def save_checkpoint(path, model: LSTNet, extra: Optional[dict] = None) -> None:
    header = {"kind": "lstnet", "build": model.config.to_dict(), **(extra or {})}
    ckpt.save(path, header, ckpt.model_entries(model))


def load_checkpoint(path, expect: Optional[BuildConfig] = None) -> tuple[LSTNet, dict]:
    """Rebuild a model from a checkpoint; ``expect`` guards against a mismatched build config."""
    header, entries = ckpt.load(path)
    if header.get("kind") != "lstnet":
        raise ckpt.CheckpointError(f"{path} is not a translation-network checkpoint")
    build = BuildConfig.from_dict(header["build"])
    if expect is not None:
        wanted = expect.to_dict()
        if expect.padding is None:
            wanted["padding"] = build.padding
        if wanted != build.to_dict():
            diff = sorted(k for k in wanted if wanted[k] != build.to_dict()[k])
            raise ckpt.CheckpointError(f"{path}: build config mismatch in {diff}")
    model = build_lstnet(build)
    ckpt.restore_model(model, entries)
    return model, header


def train_loop(images1: np.ndarray, images2: np.ndarray, config: TrainConfig, build: Optional[BuildConfig] = None,
               log_file=None, checkpoint_dir=None) -> tuple[Trainer, list[LossReport]]:
    """Build a model, train it for ``config.max_steps`` and return the trainer and logged history."""
    build = build or BuildConfig(domain_shapes={1: tuple(images1.shape[1:]), 2: tuple(images2.shape[1:])}, seed=config.seed)
    trainer = Trainer(build_lstnet(build), images1, images2, config)
    history = trainer.run(log_file=log_file, checkpoint_dir=checkpoint_dir)
    if checkpoint_dir is not None:
        trainer.save(Path(checkpoint_dir) / "final.lstn")
    return trainer, history
