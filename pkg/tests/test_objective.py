"""Adversarial and cycle terms, their weighted sum and the two phase losses."""

from types import SimpleNamespace

import numpy as np
import pytest

from lstnet.autograd import Tensor, default_dtype, no_grad
from lstnet.gradcheck import run_objective_checks
from lstnet.networks import BuildConfig, build_lstnet
from lstnet.objective import (TERMS, LossReport, ObjectiveWeights, Translation, adversarial_terms, balanced_accuracy,
                              discriminator_outputs, j_an1, j_an2, j_anl, j_cc, mae, phase_gradients, phase_losses,
                              total_objective)

LOG_HALF = np.log(0.5)


def const(value):
    """A stand-in network returning ``value`` for every batch item."""
    return lambda x, training=False: Tensor(np.full((x.shape[0], 1), value), dtype=np.float64)


identity = lambda x, training=False: x  # noqa: E731


@pytest.fixture
def tiny():
    with default_dtype(np.float64):
        yield build_lstnet(BuildConfig(domain_shapes={1: (4, 4, 1), 2: (4, 4, 1)}, arch="tiny", dtype="float64", seed=5))


@pytest.fixture
def batches():
    rng = np.random.default_rng(11)
    return np.tanh(rng.standard_normal((3, 4, 4, 1))), np.tanh(rng.standard_normal((3, 4, 4, 1)))


def _np_log(p):
    return np.log(np.maximum(p, 1e-7))


class TestAdversarialTerms:
    x = np.zeros((4, 2, 2, 1))

    def test_constant_half(self):
        for fn in (j_an1, j_an2):
            assert float(fn(self.x, self.x, identity, identity, const(0.5)).data) == pytest.approx(2 * LOG_HALF)
        assert float(j_anl(self.x, self.x, identity, identity, const(0.5)).data) == pytest.approx(-2 * np.log(2))

    def test_perfect_discriminator_limit(self):
        d = lambda x, training=False: Tensor(np.where(x.data[:, :1, 0, 0] > 0, 1 - 1e-9, 1e-9), dtype=np.float64)  # noqa: E731
        real, fake = np.ones((3, 2, 2, 1)), -np.ones((3, 2, 2, 1))
        val = float(j_an1(real, fake, identity, identity, d).data)
        assert -1e-6 < val <= 0

    def test_log_is_clamped(self):
        val = float(j_an1(self.x, self.x, identity, identity, const(0.0)).data)
        assert val == pytest.approx(np.log(1e-7))

    def test_empty_batch(self):
        with pytest.raises(ValueError, match="empty"):
            j_an1(np.zeros((0, 2, 2, 1)), self.x, identity, identity, const(0.5))

    def test_mirror_symmetry(self, tiny, batches):
        x1, x2 = batches
        a = j_an1(x1, x2, tiny.E2, tiny.G1, tiny.D1)
        b = j_an2(x2, x1, tiny.E2, tiny.G1, tiny.D1)
        assert float(a.data) == float(b.data)

    def test_matches_straight_line_oracle(self, tiny, batches):
        x1, x2 = batches
        with no_grad():
            d1_real = tiny.D1(Tensor(x1)).data
            d1_fake = tiny.D1(tiny.G1(tiny.E2(Tensor(x2)))).data
            d2_real = tiny.D2(Tensor(x2)).data
            d2_fake = tiny.D2(tiny.G2(tiny.E1(Tensor(x1)))).data
            dl1 = tiny.Dl(tiny.E1(Tensor(x1))).data
            dl2 = tiny.Dl(tiny.E2(Tensor(x2))).data
            got = [float(j_an1(x1, x2, tiny.E2, tiny.G1, tiny.D1).data), float(j_an2(x1, x2, tiny.E1, tiny.G2, tiny.D2).data),
                   float(j_anl(x1, x2, tiny.E1, tiny.E2, tiny.Dl).data)]
        want = [_np_log(d1_real).mean() + _np_log(1 - d1_fake).mean(), _np_log(d2_real).mean() + _np_log(1 - d2_fake).mean(),
                _np_log(dl1).mean() + _np_log(1 - dl2).mean()]
        np.testing.assert_allclose(got, want, rtol=1e-6)
        assert all(v <= 0 for v in got)


class TestCycleTerms:
    def test_identity_is_zero(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 3, 1))
        assert float(mae(x, Tensor(x)).data) == 0.0

    def test_constant_offset(self):
        assert float(mae(np.zeros((2, 3, 3, 1)), Tensor(np.full((2, 3, 3, 1), 0.5))).data) == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="padding"):
            mae(np.zeros((2, 4, 4, 1)), Tensor(np.zeros((2, 3, 3, 1))))

    def test_bad_index(self, tiny, batches):
        with pytest.raises(ValueError):
            j_cc(5, *batches, tiny.E1, tiny.E2, tiny.G1, tiny.G2)

    def test_matches_mae_oracle(self, tiny, batches):
        x1, x2 = batches
        f = {n: (lambda net: (lambda a: net(Tensor(a)).data))(getattr(tiny, n)) for n in ("E1", "E2", "G1", "G2")}
        with no_grad():
            want = [np.abs(x1 - f["G1"](f["E1"](x1))).mean(), np.abs(x2 - f["G2"](f["E2"](x2))).mean(),
                    np.abs(x1 - f["G1"](f["E2"](f["G2"](f["E1"](x1))))).mean(),
                    np.abs(x2 - f["G2"](f["E1"](f["G1"](f["E2"](x2))))).mean()]
            got = [float(j_cc(k, x1, x2, tiny.E1, tiny.E2, tiny.G1, tiny.G2).data) for k in (1, 2, 3, 4)]
            tr = Translation(tiny, x1, x2, training=False)
            shared = [float(v.data) for v in tr.cycle_terms().values()]
        np.testing.assert_allclose(got, want, rtol=1e-6)
        np.testing.assert_allclose(shared, want, rtol=1e-6)
        assert all(v >= 0 for v in got)

    def test_domain_swap(self, tiny, batches):
        x1, x2 = batches
        swapped = SimpleNamespace(E1=tiny.E2, E2=tiny.E1, G1=tiny.G2, G2=tiny.G1, D1=tiny.D2, D2=tiny.D1, Dl=tiny.Dl)
        with no_grad():
            a = Translation(tiny, x1, x2, training=False)
            b = Translation(swapped, x2, x1, training=False)
            ta = {**a.cycle_terms(), **adversarial_terms(discriminator_outputs(tiny, a, True, False))}
            tb = {**b.cycle_terms(), **adversarial_terms(discriminator_outputs(swapped, b, True, False))}
        for p, q in (("j_cc1", "j_cc2"), ("j_cc3", "j_cc4"), ("j_an1", "j_an2")):
            assert float(ta[p].data) == pytest.approx(float(tb[q].data), rel=1e-12)
            assert float(ta[q].data) == pytest.approx(float(tb[p].data), rel=1e-12)


class TestTotal:
    ones = {k: 1.0 for k in TERMS}

    def test_default_weights_sum(self):
        assert total_objective(ObjectiveWeights(), self.ones) == 470.0

    def test_zero_weights(self):
        w = ObjectiveWeights(*([0.0] * 7))
        assert total_objective(w, {k: 3.7 for k in TERMS}) == 0.0

    def test_linearity(self):
        rng = np.random.default_rng(0)
        terms = dict(zip(TERMS, rng.standard_normal(7)))
        w = ObjectiveWeights(*rng.uniform(0, 5, 7))
        assert total_objective(w.scaled(2.0), terms) == pytest.approx(2 * total_objective(w, terms), rel=1e-12)
        other = dict(zip(TERMS, rng.standard_normal(7)))
        both = {k: terms[k] + other[k] for k in TERMS}
        assert total_objective(w, both) == pytest.approx(total_objective(w, terms) + total_objective(w, other), rel=1e-12)

    def test_each_weight_hits_its_term(self):
        defaults = ObjectiveWeights()
        for i, k in enumerate(TERMS):
            terms = {t: float(t == k) for t in TERMS}
            assert total_objective(defaults, terms) == [20, 20, 30, 100, 100, 100, 100][i]

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            ObjectiveWeights(w1=-1.0)

    def test_nonfinite_total(self):
        with pytest.raises(FloatingPointError):
            total_objective(ObjectiveWeights(), {**self.ones, "j_an1": float("nan")})

    def test_report_json_round_trip(self):
        rep = LossReport(*range(7), total=470.0, d_loss=1.5, eg_loss=2.5, dl_balanced_acc=0.5, step=9)
        assert LossReport.from_json(rep.to_json()) == rep


class TestPhases:
    def test_discriminator_phase_is_negated_sum(self):
        terms = {"j_an1": Tensor(-1.0), "j_an2": Tensor(-2.0), "j_anl": Tensor(-3.0)}
        loss = phase_losses(terms, "discriminator", ObjectiveWeights())
        assert float(loss.data) == 20 + 40 + 90

    def test_literal_eg_phase(self):
        terms = {k: Tensor(1.0) for k in TERMS}
        assert float(phase_losses(terms, "encoder_generator", ObjectiveWeights(), nonsaturating=False).data) == 470.0

    def test_nonsaturating_requires_outputs(self):
        with pytest.raises(ValueError, match="outputs"):
            phase_losses({k: Tensor(1.0) for k in TERMS}, "encoder_generator", ObjectiveWeights())

    def test_nonsaturating_at_half(self):
        half = Tensor(np.full((2, 1), 0.5))
        out = {"d1_fake": half, "d2_fake": half, "dl_1": half, "dl_2": half}
        terms = {k: Tensor(0.0) for k in TERMS}
        loss = float(phase_losses(terms, "encoder_generator", ObjectiveWeights(), True, out).data)
        # fooling terms give -log 1/2 each; the confusion term is -2 log 1/2
        assert loss == pytest.approx(-(20 + 20 + 2 * 30) * LOG_HALF, rel=1e-6)

    def test_unknown_phase(self):
        with pytest.raises(ValueError):
            phase_losses({}, "both", ObjectiveWeights())

    @pytest.mark.parametrize("phase", ["discriminator", "encoder_generator"])
    def test_only_own_team_gets_gradient(self, tiny, batches, phase):
        other = "encoder_generator" if phase == "discriminator" else "discriminator"
        for p in tiny.store:
            p.grad[...] = 0.0
        phase_gradients(tiny, *batches, phase, ObjectiveWeights())
        assert any(np.any(p.grad != 0) for p in tiny.team(phase))
        assert all(np.all(p.grad == 0) for p in tiny.team(other))
        assert all(p.requires_grad for p in tiny.store)

    def test_frozen_team_request_rejected(self, tiny, batches):
        with pytest.raises(ValueError, match="frozen"):
            phase_gradients(tiny, *batches, "discriminator", ObjectiveWeights(), wrt=tiny.team("encoder_generator")[:1])

    def test_term_separation_on_d1(self, tiny, batches):
        x1, x2 = batches
        w = ObjectiveWeights()
        phase_gradients(tiny, x1, x2, "discriminator", w)
        full = {p.name: p.grad.copy() for p in tiny.D1.params()}
        for p in tiny.store:
            p.zero_grad()
        with no_grad():
            fake1 = tiny.G1(tiny.E2(Tensor(x2), True), True)
        from lstnet.objective import adversarial_value
        (-w.w1 * adversarial_value(tiny.D1(Tensor(x1), True), tiny.D1(fake1, True))).backward()
        for p in tiny.D1.params():
            np.testing.assert_allclose(p.grad, full[p.name], rtol=1e-10, atol=1e-14)

    def test_frozen_half_discriminator_gives_no_d_gradient(self, tiny, batches):
        for net in (tiny.D1, tiny.D2, tiny.Dl):
            for p in net.params():
                p.data[...] = 0.0  # sigmoid(0) = 0.5 everywhere
        phase_gradients(tiny, *batches, "encoder_generator", ObjectiveWeights())
        assert all(np.all(p.grad == 0) for p in tiny.team("discriminator"))


class TestBalancedAccuracy:
    def test_values(self):
        assert balanced_accuracy(np.array([0.9, 0.8]), np.array([0.1, 0.2])) == 1.0
        assert balanced_accuracy(np.array([0.1, 0.2]), np.array([0.9, 0.8])) == 0.0
        assert balanced_accuracy(np.full(4, 0.7), np.full(8, 0.7)) == 0.5


class TestObjectiveGradients:
    @pytest.mark.parametrize("result", run_objective_checks(), ids=lambda r: r.name)
    def test_phase_losses(self, result):
        assert result.passed, result.line()

    def test_tiny_model_is_tiny(self, tiny):
        assert tiny.store.count() <= 500
