"""Adversarial and cycle-consistency terms of the translation objective.

Sign conventions: every ``j_an*`` term is a sum of two batch-mean log
probabilities (so it is <= 0), every ``j_cc*`` term is a mean absolute error
(>= 0).  The discriminator team minimises the negated weighted adversarial
sum; the encoder/generator team minimises its fooling terms plus the weighted
cycle terms.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor, clamped_log, frozen, no_grad

PHASES = ("discriminator", "encoder_generator")


@dataclass
class ObjectiveWeights:
    w1: float = 20.0
    w2: float = 20.0
    wl: float = 30.0
    w3: float = 100.0
    w4: float = 100.0
    w5: float = 100.0
    w6: float = 100.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"objective weight {f.name} must be non-negative")

    def scaled(self, factor: float) -> "ObjectiveWeights":
        return ObjectiveWeights(**{k: v * factor for k, v in asdict(self).items()})


TERMS = ("j_an1", "j_an2", "j_anl", "j_cc1", "j_cc2", "j_cc3", "j_cc4")
_WEIGHT_OF = dict(zip(TERMS, ("w1", "w2", "wl", "w3", "w4", "w5", "w6")))


@dataclass
class LossReport:
    j_an1: float
    j_an2: float
    j_anl: float
    j_cc1: float
    j_cc2: float
    j_cc3: float
    j_cc4: float
    total: float
    d_loss: float = float("nan")
    eg_loss: float = float("nan")
    dl_balanced_acc: float = float("nan")
    step: int = 0

    def to_json(self) -> str:
        d = {"step": self.step}
        d.update({k: getattr(self, k) for k in TERMS})
        d.update(total=self.total, d_loss=self.d_loss, eg_loss=self.eg_loss, dl_balanced_acc=self.dl_balanced_acc)
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "LossReport":
        return cls(**json.loads(line))


def total_objective(weights: ObjectiveWeights, terms) -> float:
    """Weighted sum of the seven terms (``terms`` is a LossReport or a mapping)."""
    get = terms.get if isinstance(terms, dict) else lambda k: getattr(terms, k)
    total = sum(getattr(weights, _WEIGHT_OF[k]) * float(get(k)) for k in TERMS)
    if not np.isfinite(total):
        raise ag.NonFiniteError("objective total is not finite")
    return total


# building blocks -----------------------------------------------------------

def _check_batch(*batches) -> None:
    for b in batches:
        if b.shape[0] == 0:
            raise ValueError("empty batch")


def adversarial_value(p_real: Tensor, p_fake: Tensor) -> Tensor:
    """E[log p_real] + E[log(1 - p_fake)] with logs clamped at 1e-7."""
    _check_batch(p_real, p_fake)
    return ag.mean(clamped_log(p_real)) + ag.mean(clamped_log(1.0 - p_fake))


def fooling_value(p_fake: Tensor) -> Tensor:
    """Non-saturating generator loss -E[log p_fake]."""
    _check_batch(p_fake)
    return -ag.mean(clamped_log(p_fake))


def confusion_value(p1: Tensor, p2: Tensor) -> Tensor:
    """Cross-entropy of latent-discriminator outputs against 1/2 for both domains.

    Minimised exactly when the discriminator cannot tell the domains apart.
    """
    _check_batch(p1, p2)
    half = lambda p: 0.5 * (ag.mean(clamped_log(p)) + ag.mean(clamped_log(1.0 - p)))  # noqa: E731
    return -(half(p1) + half(p2))


def mae(x: Tensor, reconstruction: Tensor) -> Tensor:
    if tuple(x.shape) != tuple(reconstruction.shape):
        raise ValueError(
            f"reconstruction shape {reconstruction.shape} differs from input shape {x.shape}; "
            "check the padding assignment"
        )
    _check_batch(x)
    return ag.mean(ag.abs_(ag.as_tensor(x, reconstruction.dtype) - reconstruction))


# standalone terms over explicit networks -----------------------------------

def j_an1(x1, x2, E2, G1, D1, training=False) -> Tensor:
    x1, x2 = ag.as_tensor(x1), ag.as_tensor(x2)
    return adversarial_value(D1(x1, training), D1(G1(E2(x2, training), training), training))


def j_an2(x1, x2, E1, G2, D2, training=False) -> Tensor:
    x1, x2 = ag.as_tensor(x1), ag.as_tensor(x2)
    return adversarial_value(D2(x2, training), D2(G2(E1(x1, training), training), training))


def j_anl(x1, x2, E1, E2, Dl, training=False) -> Tensor:
    x1, x2 = ag.as_tensor(x1), ag.as_tensor(x2)
    return adversarial_value(Dl(E1(x1, training), training), Dl(E2(x2, training), training))


def j_cc(k: int, x1, x2, E1, E2, G1, G2, training=False) -> Tensor:
    """Cycle term ``k``: 1 = G1.E1 on x1, 2 = G2.E2 on x2, 3 = G1.E2.G2.E1 on x1, 4 = G2.E1.G1.E2 on x2."""
    t = training
    if k == 1:
        return mae(x1, G1(E1(ag.as_tensor(x1), t), t))
    if k == 2:
        return mae(x2, G2(E2(ag.as_tensor(x2), t), t))
    if k == 3:
        return mae(x1, G1(E2(G2(E1(ag.as_tensor(x1), t), t), t), t))
    if k == 4:
        return mae(x2, G2(E1(G1(E2(ag.as_tensor(x2), t), t), t), t))
    raise ValueError(f"cycle index must be 1..4, got {k}")


# one forward pass shared by both phases ------------------------------------

class Translation:
    """Encoder/generator activations for one pair of mini-batches.

    Computed once with the graph attached; the discriminator phase consumes
    detached copies, the encoder/generator phase the live tensors.
    """

    def __init__(self, model, x1, x2, training=True):
        self.x1, self.x2 = ag.as_tensor(x1), ag.as_tensor(x2)
        _check_batch(self.x1, self.x2)
        t = training
        self.z1 = model.E1(self.x1, t)
        self.z2 = model.E2(self.x2, t)
        self.rec1 = model.G1(self.z1, t)
        self.rec2 = model.G2(self.z2, t)
        self.fake2 = model.G2(self.z1, t)  # x1 translated to domain 2
        self.fake1 = model.G1(self.z2, t)  # x2 translated to domain 1
        self.cyc1 = model.G1(model.E2(self.fake2, t), t)
        self.cyc2 = model.G2(model.E1(self.fake1, t), t)

    def cycle_terms(self) -> dict[str, Tensor]:
        return {
            "j_cc1": mae(self.x1, self.rec1),
            "j_cc2": mae(self.x2, self.rec2),
            "j_cc3": mae(self.x1, self.cyc1),
            "j_cc4": mae(self.x2, self.cyc2),
        }


def discriminator_outputs(model, tr: Translation, detach: bool, training=True) -> dict[str, Tensor]:
    pick = (lambda t: t.detach()) if detach else (lambda t: t)
    return {
        "d1_real": model.D1(tr.x1, training),
        "d1_fake": model.D1(pick(tr.fake1), training),
        "d2_real": model.D2(tr.x2, training),
        "d2_fake": model.D2(pick(tr.fake2), training),
        "dl_1": model.Dl(pick(tr.z1), training),
        "dl_2": model.Dl(pick(tr.z2), training),
    }


def adversarial_terms(out: dict[str, Tensor]) -> dict[str, Tensor]:
    return {
        "j_an1": adversarial_value(out["d1_real"], out["d1_fake"]),
        "j_an2": adversarial_value(out["d2_real"], out["d2_fake"]),
        "j_anl": adversarial_value(out["dl_1"], out["dl_2"]),
    }


def phase_losses(terms: dict[str, Tensor], phase: str, weights: ObjectiveWeights, nonsaturating: bool = True,
                 outputs: Optional[dict[str, Tensor]] = None) -> Tensor:
    """Scalar each team minimises.

    ``terms`` holds the literal adversarial (and, for the encoder/generator
    phase, cycle) terms.  The non-saturating variant needs the raw
    discriminator ``outputs`` to form its fooling terms.
    """
    w = weights
    if phase == "discriminator":
        return -(w.w1 * terms["j_an1"] + w.w2 * terms["j_an2"] + w.wl * terms["j_anl"])
    if phase != "encoder_generator":
        raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")
    if nonsaturating:
        if outputs is None:
            raise ValueError("the non-saturating form needs the discriminator outputs")
        adv = (w.w1 * fooling_value(outputs["d1_fake"]) + w.w2 * fooling_value(outputs["d2_fake"])
               + w.wl * confusion_value(outputs["dl_1"], outputs["dl_2"]))
    else:
        adv = w.w1 * terms["j_an1"] + w.w2 * terms["j_an2"] + w.wl * terms["j_anl"]
    return adv + (w.w3 * terms["j_cc1"] + w.w4 * terms["j_cc2"] + w.w5 * terms["j_cc3"] + w.w6 * terms["j_cc4"])


def balanced_accuracy(p_domain1: np.ndarray, p_domain2: np.ndarray) -> float:
    """Mean of per-domain accuracies of the rule ``p >= 0.5 -> domain 1``."""
    return 0.5 * (float(np.mean(p_domain1 >= 0.5)) + float(np.mean(p_domain2 < 0.5)))


def phase_gradients(model, x1, x2, phase: str, weights: ObjectiveWeights, nonsaturating: bool = True,
                    wrt=None, training: bool = True) -> Tensor:
    """Zero the gradients of ``phase``'s team and backpropagate that team's loss.

    The opposing team is frozen: its parameters receive no gradient.  Asking
    for gradients of a frozen parameter via ``wrt`` is an error.
    """
    own = model.team(phase)
    other = model.team("encoder_generator" if phase == "discriminator" else "discriminator")
    if wrt is not None:
        other_ids = {id(p) for p in other}
        bad = [p.name for p in wrt if id(p) in other_ids]
        if bad:
            raise ValueError(f"parameters {bad} belong to the team frozen during the {phase} phase")
    for p in own:
        p.zero_grad()
    with frozen(other):
        if phase == "discriminator":
            with no_grad():
                tr = Translation(model, x1, x2, training)
            out = discriminator_outputs(model, tr, detach=True, training=training)
            loss = phase_losses(adversarial_terms(out), phase, weights)
        else:
            tr = Translation(model, x1, x2, training)
            out = discriminator_outputs(model, tr, detach=False, training=training)
            terms = {**adversarial_terms(out), **tr.cycle_terms()}
            loss = phase_losses(terms, phase, weights, nonsaturating, out)
        loss.backward()
    return loss
