"""Central finite-difference checks of every differentiable op and phase loss.

All checks run in float64.  The error measure is
``||analytic - numeric|| / max(||analytic||, ||numeric||)`` over all inputs
of a check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from . import functional as F
from .autograd import Parameter, Tensor, default_dtype

SMOOTH_TOL = 1e-5
KINKED_TOL = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<36} max rel err {self.max_rel_err:.2e}  (tol {self.tolerance:.0e})"


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``arr``, perturbed in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def check_gradients(name: str, fn: Callable[..., Tensor], inputs: Sequence[Tensor], tolerance: float,
                    h: float = STEP, seed: int = 0) -> CheckResult:
    """Compare backprop against finite differences for a tensor-valued ``fn``.

    The output is contracted with a fixed random weighting so every output
    element contributes.
    """
    with default_dtype(np.float64):
        out = fn(*inputs)
        weight = np.random.default_rng(seed).standard_normal(out.shape)

        def scalar() -> float:
            with ag.no_grad():
                return float((fn(*inputs).data * weight).sum())

        for t in inputs:
            t.grad = np.zeros_like(t.data) if t.requires_grad else None
        ag.backward(out, weight)
        errs = []
        for t in inputs:
            if not t.requires_grad:
                continue
            numeric = numerical_gradient(scalar, t.data, h)
            errs.append(relative_error(t.grad, numeric))
    return CheckResult(name, max(errs) if errs else 0.0, tolerance)


def _var(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _away_from_zero(rng, *shape, margin=1e-3) -> Tensor:
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)
    return Tensor(x, requires_grad=True, dtype=np.float64)


def _tie_free(rng, *shape) -> Tensor:
    # distinct values spaced far beyond the finite-difference step
    n = int(np.prod(shape))
    vals = rng.permutation(n).astype(np.float64) * 0.01 + rng.uniform(0, 1e-3, n)
    return Tensor(vals.reshape(shape), requires_grad=True, dtype=np.float64)


def op_checks(seed: int = 0) -> list[tuple[str, Callable, list, float]]:
    """(name, fn, inputs, tolerance) for each primitive.  Ops are looked up at call
    time so a patched implementation is the one being checked."""
    rng = np.random.default_rng(seed)
    f = F
    stats = _stats(rng, 3)
    return [
        ("conv2d same S1", lambda x, w: f.conv2d(x, w, 1, "same"), [_var(rng, 2, 5, 5, 2), _var(rng, 3, 3, 2, 3)], SMOOTH_TOL),
        ("conv2d same S2 + bias", lambda x, w, b: f.conv2d(x, w, 2, "same", b), [_var(rng, 2, 6, 5, 2), _var(rng, 3, 3, 2, 2), _var(rng, 2)], SMOOTH_TOL),
        ("conv2d valid S3", lambda x, w: f.conv2d(x, w, 3, "valid"), [_var(rng, 1, 7, 7, 2), _var(rng, 2, 2, 2, 2)], SMOOTH_TOL),
        ("deconv2d same S1", lambda y, w: f.deconv2d(y, w, 1, "same"), [_var(rng, 2, 3, 3, 2), _var(rng, 3, 3, 2, 2)], SMOOTH_TOL),
        ("deconv2d same S2 op1 + bias", lambda y, w, b: f.deconv2d(y, w, 2, "same", 1, b), [_var(rng, 2, 3, 3, 2), _var(rng, 3, 3, 3, 2), _var(rng, 3)], SMOOTH_TOL),
        ("deconv2d valid S1 K2", lambda y, w: f.deconv2d(y, w, 1, "valid"), [_var(rng, 1, 3, 3, 2), _var(rng, 2, 2, 2, 2)], SMOOTH_TOL),
        ("batch_norm train", lambda x, g, b: f.batch_norm(x, g, b, "train", None), [_var(rng, 4, 5, 5, 3), _var(rng, 3), _var(rng, 3)], SMOOTH_TOL),
        ("batch_norm eval", lambda x, g, b: f.batch_norm(x, g, b, "eval", stats), [_var(rng, 2, 3, 3, 3), _var(rng, 3), _var(rng, 3)], SMOOTH_TOL),
        ("leaky_relu", lambda x: ag.leaky_relu(x, 0.2), [_away_from_zero(rng, 3, 4, 4, 2)], KINKED_TOL),
        ("max_pool K2 S2", lambda x: f.max_pool(x, 2, 2), [_tie_free(rng, 2, 4, 4, 2)], KINKED_TOL),
        ("max_pool K2 S1 same", lambda x: f.max_pool(x, 2, 1, "same"), [_tie_free(rng, 1, 3, 3, 2)], KINKED_TOL),
        ("fully_connected", lambda x, w, b: f.fully_connected(x, w, b), [_var(rng, 3, 2, 2, 2), _var(rng, 8, 4), _var(rng, 4)], KINKED_TOL),
        ("sigmoid", ag.sigmoid, [_var(rng, 3, 5, scale=3)], SMOOTH_TOL),
        ("tanh", ag.tanh, [_var(rng, 3, 5, scale=2)], SMOOTH_TOL),
        ("clamped_log", ag.clamped_log, [Tensor(rng.uniform(0.1, 2, (3, 4)), requires_grad=True, dtype=np.float64)], SMOOTH_TOL),
        ("abs", ag.abs_, [_away_from_zero(rng, 3, 4)], KINKED_TOL),
        ("cross_entropy", lambda z: f.cross_entropy(z, np.array([0, 3, 1])), [_var(rng, 3, 10)], SMOOTH_TOL),
        ("sigmoid(conv2d) composite", lambda x, w: ag.mean(ag.sigmoid(f.conv2d(x, w, 1, "same")) * 3.0),
         [_var(rng, 2, 4, 4, 2), _var(rng, 3, 3, 2, 2)], SMOOTH_TOL),
    ]


def _stats(rng, channels):
    s = F.RunningStats(channels, dtype=np.float64)
    s.mean[:] = rng.standard_normal(channels)
    s.var[:] = rng.uniform(0.5, 2.0, channels)
    return s


def run_op_checks(seed: int = 0) -> list[CheckResult]:
    with default_dtype(np.float64):
        checks = op_checks(seed)
        return [check_gradients(name, fn, inputs, tol) for name, fn, inputs, tol in checks]


def _tiny_model(seed: int):
    from .networks import BuildConfig, build_lstnet

    return build_lstnet(BuildConfig(domain_shapes={1: (4, 4, 1), 2: (4, 4, 1)}, arch="tiny", dtype="float64", seed=seed))


def _param_check(name: str, loss_fn: Callable[[], Tensor], params: list[Parameter], tolerance: float) -> CheckResult:
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]

    def scalar():
        with ag.no_grad():
            return float(loss_fn().data)

    numeric = [numerical_gradient(scalar, p.data) for p in params]
    err = relative_error(np.concatenate([a.ravel() for a in analytic]), np.concatenate([n.ravel() for n in numeric]))
    return CheckResult(name, err, tolerance)


def run_objective_checks(seed: int = 0) -> list[CheckResult]:
    """Phase losses and each adversarial/cycle term on a network of a few hundred parameters."""
    from .objective import (ObjectiveWeights, Translation, adversarial_terms, discriminator_outputs, j_an1, j_an2,
                            j_anl, j_cc, phase_losses)

    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        model = _tiny_model(seed)
        x1 = np.tanh(rng.standard_normal((3, 4, 4, 1)))
        x2 = np.tanh(rng.standard_normal((3, 4, 4, 1)))
        w = ObjectiveWeights()
        d_team = model.team("discriminator")
        eg_team = model.team("encoder_generator")
        results = []

        def d_loss():
            with ag.frozen(eg_team):
                tr = Translation(model, x1, x2, True)
                return phase_losses(adversarial_terms(discriminator_outputs(model, tr, detach=True)), "discriminator", w)

        def eg_loss(nonsat):
            def fn():
                with ag.frozen(d_team):
                    tr = Translation(model, x1, x2, True)
                    out = discriminator_outputs(model, tr, detach=False)
                    terms = {**adversarial_terms(out), **tr.cycle_terms()}
                    return phase_losses(terms, "encoder_generator", w, nonsat, out)
            return fn

        m = model
        results.append(_param_check("discriminator phase loss", d_loss, d_team, KINKED_TOL))
        results.append(_param_check("encoder/generator phase (non-saturating)", eg_loss(True), eg_team, KINKED_TOL))
        results.append(_param_check("encoder/generator phase (literal)", eg_loss(False), eg_team, KINKED_TOL))
        results.append(_param_check("j_an1", lambda: j_an1(x1, x2, m.E2, m.G1, m.D1, True), m.E2.params() + m.G1.params() + m.D1.params(), KINKED_TOL))
        results.append(_param_check("j_an2", lambda: j_an2(x1, x2, m.E1, m.G2, m.D2, True), m.E1.params() + m.G2.params() + m.D2.params(), KINKED_TOL))
        results.append(_param_check("j_anl", lambda: j_anl(x1, x2, m.E1, m.E2, m.Dl, True), m.E1.params() + m.E2.params() + m.Dl.params(), KINKED_TOL))
        for k in (1, 2, 3, 4):
            results.append(_param_check(f"j_cc{k}", lambda k=k: j_cc(k, x1, x2, m.E1, m.E2, m.G1, m.G2, True), eg_team, KINKED_TOL))
    return results


def run_full_tiny_check(seed: int = 0) -> list[CheckResult]:
    """Gradient of the weighted total objective w.r.t. every parameter of the tiny network."""
    from .objective import ObjectiveWeights, Translation, adversarial_terms, discriminator_outputs

    rng = np.random.default_rng(seed + 1)
    with default_dtype(np.float64):
        model = _tiny_model(seed + 1)
        x1 = np.tanh(rng.standard_normal((2, 4, 4, 1)))
        x2 = np.tanh(rng.standard_normal((2, 4, 4, 1)))
        w = ObjectiveWeights()

        def total():
            tr = Translation(model, x1, x2, True)
            t = {**adversarial_terms(discriminator_outputs(model, tr, detach=False)), **tr.cycle_terms()}
            return (w.w1 * t["j_an1"] + w.w2 * t["j_an2"] + w.wl * t["j_anl"] + w.w3 * t["j_cc1"]
                    + w.w4 * t["j_cc2"] + w.w5 * t["j_cc3"] + w.w6 * t["j_cc4"])

        params = list(model.store)
        return [_param_check(f"full objective ({sum(p.data.size for p in params)} params)", total, params, KINKED_TOL)]


SCOPES = {
    "ops": run_op_checks,
    "objective": run_objective_checks,
    "full-tiny": run_full_tiny_check,
}


def run_suite(scope: str = "all", seed: int = 0) -> list[CheckResult]:
    if scope == "all":
        names = list(SCOPES)
    elif scope in SCOPES:
        names = [scope]
    else:
        raise ValueError(f"unknown gradcheck scope {scope!r}; choose from {['all', *SCOPES]}")
    results = []
    for name in names:
        results.extend(SCOPES[name](seed))
    return results


def report(results: list[CheckResult], elapsed: float | None = None) -> str:
    lines = [r.line() for r in results]
    failed = [r for r in results if not r.passed]
    summary = f"{len(results) - len(failed)}/{len(results)} checks passed"
    if elapsed is not None:
        summary += f" in {elapsed:.1f}s"
    return "\n".join(lines + [summary])


def main_suite(scope: str = "all", seed: int = 0) -> tuple[bool, str]:
    started = time.perf_counter()
    results = run_suite(scope, seed)
    return all(r.passed for r in results), report(results, time.perf_counter() - started)
