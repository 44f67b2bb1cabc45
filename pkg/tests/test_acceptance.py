"""Acceptance criteria 1-8.

Each test carries a ``criterion`` marker; the run ends with one PASS/FAIL line
per criterion (see ``conftest.py``).  Parts that need the real MNIST/USPS files
skip with a reason when ``LSTNET_DATA_DIR`` is not set.
"""

import json
import time

import numpy as np
import pytest

from lstnet import cli
from lstnet.autograd import Tensor, no_grad
from lstnet.data import (MNIST_COUNTS, USPS_COUNTS, load_mnist, load_usps, toy_labeled, write_idx, write_usps_csv)
from lstnet.evaluation import REFERENCE_ACCURACY, ClassifierHyper, train_classifier
from lstnet.gradcheck import KINKED_TOL, SMOOTH_TOL, run_suite
from lstnet.networks import BuildConfig, build_lstnet
from lstnet.objective import TERMS, ObjectiveWeights, total_objective
from lstnet.trainer import TrainConfig, Trainer


def criterion(n, title):
    return pytest.mark.criterion(n, title)


def detail(record_property, text):
    record_property("detail", text)


# 1 ---------------------------------------------------------------------------

@criterion(1, "gradient correctness (float64 finite differences, < 2 min)")
def test_gradients(record_property):
    started = time.perf_counter()
    results = run_suite("all")
    elapsed = time.perf_counter() - started
    failed = [r.line() for r in results if not r.passed]
    assert not failed, "\n".join(failed)
    assert {r.tolerance for r in results} <= {SMOOTH_TOL, KINKED_TOL}
    assert SMOOTH_TOL == 1e-5 and KINKED_TOL == 1e-4
    assert elapsed < 120
    worst = max(r.max_rel_err for r in results)
    detail(record_property, f"{len(results)} checks, worst rel err {worst:.1e}, {elapsed:.1f}s")


# 2 ---------------------------------------------------------------------------

@criterion(2, "weighted objective arithmetic")
def test_objective_arithmetic(record_property):
    w = ObjectiveWeights()
    assert (w.w1, w.w2, w.wl, w.w3, w.w4, w.w5, w.w6) == (20, 20, 30, 100, 100, 100, 100)
    ones = dict.fromkeys(TERMS, 1.0)
    assert total_objective(w, ones) == 470.0

    rng = np.random.default_rng(0)
    a = dict(zip(TERMS, rng.standard_normal(7)))
    b = dict(zip(TERMS, rng.standard_normal(7)))
    both = {k: a[k] + b[k] for k in TERMS}
    assert total_objective(w, both) == pytest.approx(total_objective(w, a) + total_objective(w, b), rel=1e-12)
    assert total_objective(w.scaled(3.0), a) == pytest.approx(3 * total_objective(w, a), rel=1e-12)
    assert total_objective(ObjectiveWeights(*([0.0] * 7)), a) == 0.0
    detail(record_property, "stubbed total 470.0; additivity, scaling and zero weights hold")


# 3 ---------------------------------------------------------------------------

@criterion(3, "cycle compositions preserve shape at 28x28 and 16x16")
def test_cycle_shapes(record_property):
    model = build_lstnet(BuildConfig(seed=5))
    rng = np.random.default_rng(5)
    x1 = Tensor(rng.uniform(-1, 1, (3, 28, 28, 1)))
    x2 = Tensor(rng.uniform(-1, 1, (3, 16, 16, 1)))
    E1, E2, G1, G2 = model.E1, model.E2, model.G1, model.G2
    with no_grad():
        z1, z2 = E1(x1), E2(x2)
        assert z1.shape == z2.shape
        outputs = {
            "G1(E1(x1))": (G1(z1), x1),
            "G2(E2(x2))": (G2(z2), x2),
            "G1(E2(G2(E1(x1))))": (G1(E2(G2(z1))), x1),
            "G2(E1(G1(E2(x2))))": (G2(E1(G1(z2))), x2),
        }
    for name, (y, x) in outputs.items():
        assert y.shape == x.shape, name
    detail(record_property, f"latent {z1.shape[1:]}, all four cycles shape-exact")


# 4 ---------------------------------------------------------------------------

@criterion(4, "shared parameters stay identical; phase separation is exact")
def test_shared_parameters_and_phases(record_property):
    rng = np.random.default_rng(2)
    x1 = rng.uniform(-1, 1, (16, 28, 28, 1)).astype(np.float32)
    x2 = rng.uniform(-1, 1, (16, 16, 16, 1)).astype(np.float32)
    tr = Trainer(build_lstnet(BuildConfig(seed=2)), x1, x2, TrainConfig(batch_size=4, seed=2))
    model, every = tr.model, list(tr.model.store)
    d_names = {p.name for p in model.team("discriminator")}
    eg_names = {p.name for p in model.team("encoder_generator")}
    assert not d_names & eg_names and d_names | eg_names == {p.name for p in every}

    updates = []
    for opt in (tr.opt_d, tr.opt_eg):
        def step(original=opt.step, opt=opt):
            before = {p.name: p.data.copy() for p in every}
            original()
            updates.append((opt, {p.name for p in every if not np.array_equal(before[p.name], p.data)}))
        opt.step = step

    for _ in range(2):
        tr.train_step()
        for a, b in ((model.E1, model.E2), (model.G1, model.G2)):
            pa, pb = {p.name: p for p in a.params()}, {p.name: p for p in b.params()}
            shared = pa.keys() & pb.keys()
            assert shared
            for name in shared:
                np.testing.assert_array_equal(pa[name].data, pb[name].data)
    assert [u[0] for u in updates] == [tr.opt_d, tr.opt_eg] * 2
    for opt, changed in updates:
        assert changed == (d_names if opt is tr.opt_d else eg_names)
    detail(record_property, f"2 steps: {len(d_names)} discriminator and {len(eg_names)} encoder/generator tensors")


# 5 ---------------------------------------------------------------------------

@criterion(5, "data fidelity: counts and golden sample")
def test_loader_counts_on_full_size_files(tmp_path, record_property):
    for split, stem in (("train", "train"), ("test", "t10k")):
        n = MNIST_COUNTS[split]
        write_idx(tmp_path / f"{stem}-images-idx3-ubyte", tmp_path / f"{stem}-labels-idx1-ubyte",
                  np.zeros((n, 28, 28), np.uint8), np.arange(n) % 10)
        assert len(load_mnist(tmp_path, split)) == n
    for split in ("train", "test"):
        n = USPS_COUNTS[split]
        write_usps_csv(tmp_path / f"usps_{split}.csv", np.zeros((n, 256), np.uint8), np.arange(n) % 10)
        assert len(load_usps(tmp_path / f"usps_{split}.csv", split)) == n
    assert MNIST_COUNTS == {"train": 60000, "test": 10000} and USPS_COUNTS == {"train": 7291, "test": 2007}
    detail(record_property, "strict loaders accept 60000/10000 and 7291/2007 files in the distributed formats")


@criterion(5, "data fidelity: counts and golden sample")
def test_real_files(data_dir, record_property):
    mnist_test = load_mnist(data_dir / "mnist", "test")
    assert len(load_mnist(data_dir / "mnist", "train")) == 60000 and len(mnist_test) == 10000
    assert len(load_usps(data_dir / "usps" / "usps_train.csv", "train")) == 7291
    assert len(load_usps(data_dir / "usps" / "usps_test.csv", "test")) == 2007
    assert mnist_test.labels[0] == 7
    detail(record_property, "real counts match; first MNIST test label is 7")


# 6 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy-acceptance")
    started = time.perf_counter()
    code = cli.main(["pipeline", "--preset", "toy", "--set", "train.log_interval=1", "--out", str(out), "--quiet"])
    elapsed = time.perf_counter() - started
    assert code == 0
    losses = [json.loads(line) for line in (out / "losses.jsonl").read_text().splitlines()]
    return {"elapsed": elapsed, "losses": losses, "eval": json.loads((out / "eval.json").read_text())}


@pytest.mark.slow
@criterion(6, "toy-domain smoke training")
def test_toy_runtime(toy_pipeline, record_property):
    assert len(toy_pipeline["losses"]) == 500
    assert toy_pipeline["elapsed"] < 300
    detail(record_property, f"classifiers + 500 translator steps + evaluation in {toy_pipeline['elapsed']:.0f}s")


@pytest.mark.slow
@criterion(6, "toy-domain smoke training")
def test_toy_cycle_loss_falls(toy_pipeline, record_property):
    cycle = {r["step"]: np.mean([r[f"j_cc{k}"] for k in (1, 2, 3, 4)]) for r in toy_pipeline["losses"]}
    start, end = cycle[10], cycle[max(cycle)]
    assert end <= 0.5 * start
    detail(record_property, f"mean cycle loss {start:.3f} at step 10 -> {end:.3f} ({1 - end / start:.0%} drop)")


@pytest.mark.slow
@criterion(6, "toy-domain smoke training")
def test_toy_latent_discriminator_near_chance(toy_pipeline, record_property):
    acc = np.mean([r["dl_balanced_acc"] for r in toy_pipeline["losses"][-50:]])
    assert 0.45 <= acc <= 0.65
    detail(record_property, f"latent discriminator balanced accuracy over the last 50 steps {acc:.3f}")


@pytest.mark.slow
@criterion(6, "toy-domain smoke training")
def test_toy_translation_beats_baseline(toy_pipeline, record_property):
    parts = []
    for direction, rep in toy_pipeline["eval"].items():
        assert rep["accuracy"] - rep["baseline_accuracy"] >= 0.15, direction
        parts.append(f"{direction} {rep['accuracy']:.3f} vs untranslated {rep['baseline_accuracy']:.3f}")
    detail(record_property, "; ".join(parts))


# 7 ---------------------------------------------------------------------------

def _synthetic_mnist_usps(root, rng):
    """Full-count files in the distributed formats; pixels are class-coded noise."""
    def images(labels, side):
        base = rng.integers(0, 256, (10, side, side)).astype(np.uint8)
        noise = rng.integers(-20, 21, (len(labels), side, side))
        return np.clip(base[labels] + noise, 0, 255).astype(np.uint8)

    (root / "mnist").mkdir()
    for split, stem in (("train", "train"), ("test", "t10k")):
        labels = np.arange(MNIST_COUNTS[split]) % 10
        write_idx(root / "mnist" / f"{stem}-images-idx3-ubyte", root / "mnist" / f"{stem}-labels-idx1-ubyte",
                  images(labels, 28), labels)
    for split in ("train", "test"):
        labels = np.arange(USPS_COUNTS[split]) % 10
        write_usps_csv(root / f"usps_{split}.csv", images(labels, 16).reshape(-1, 256), labels)


@pytest.mark.slow
@criterion(7, "mnist-usps preset end to end; references reported")
def test_full_preset_end_to_end(tmp_path, capsys, record_property):
    data = tmp_path / "data"
    data.mkdir()
    _synthetic_mnist_usps(data, np.random.default_rng(7))
    out = tmp_path / "run"
    # preset architecture, weights and optimizer; only the run length and evaluation size are cut
    code = cli.main(["pipeline", "--preset", "mnist-usps", "--out", str(out), "--quiet",
                     "--set", f"data.mnist_dir={data / 'mnist'}", "--set", f"data.usps_train={data / 'usps_train.csv'}",
                     "--set", f"data.usps_test={data / 'usps_test.csv'}", "--max-steps", "2",
                     "--set", "classifier.max_steps=5", "--set", "eval.limit=200"])
    printed = capsys.readouterr().out
    assert code == 0
    report = json.loads((out / "eval.json").read_text())
    for direction in ("2to1", "1to2"):
        assert report[direction]["reference"] == REFERENCE_ACCURACY[direction]
        assert f"reference {REFERENCE_ACCURACY[direction]:.4f}" in printed
    for domain in (1, 2):
        summary = json.loads((out / f"classifier_{domain}.json").read_text())
        assert summary["reference"] == REFERENCE_ACCURACY[f"classifier_{domain}"]
    assert json.loads((out / "config.json").read_text())["build.arch"] == "standard"
    detail(record_property, "synthetic full-count files; " + "; ".join(
        f"{d} {report[d]['accuracy']:.3f} (reference {report[d]['reference']})" for d in ("2to1", "1to2")))


@pytest.mark.slow
@criterion(7, "mnist-usps preset end to end; references reported")
def test_classifier_desk_scale(data_dir, record_property):
    train = load_mnist(data_dir / "mnist", "train").subset(1000, seed=0)
    test = load_mnist(data_dir / "mnist", "test")
    started = time.perf_counter()
    _, acc = train_classifier(train, ClassifierHyper(time_budget=110.0, seed=0), test)
    elapsed = time.perf_counter() - started
    assert acc >= 0.90 and elapsed < 120
    detail(record_property, f"1000-sample MNIST classifier {acc:.4f} in {elapsed:.0f}s (reference {REFERENCE_ACCURACY['classifier_1']})")


# 8 ---------------------------------------------------------------------------

@criterion(8, "determinism and checkpoint resume")
def test_identical_loss_logs(tmp_path, record_property):
    argv = ["train-translator", "--preset", "toy", "--seed", "11", "--max-steps", "20",
            "--set", "train.log_interval=1", "--set", "train.augment=true", "--quiet"]
    logs = []
    for name in ("a", "b"):
        assert cli.main([*argv, "--out", str(tmp_path / name)]) == 0
        logs.append((tmp_path / name / "losses.jsonl").read_bytes())
    assert logs[0] == logs[1] and len(logs[0].splitlines()) == 20
    detail(record_property, "two 20-step runs produce byte-identical loss logs")


@criterion(8, "determinism and checkpoint resume")
def test_resume_reproduces_next_report(tmp_path, record_property):
    (a, b) = toy_labeled(4, 128)
    cfg = TrainConfig(batch_size=16, lr=1e-3, seed=4, augment=True)
    build = BuildConfig(domain_shapes={1: a.image_shape, 2: b.image_shape}, arch="toy", seed=4)
    full = Trainer(build_lstnet(build), a.images, b.images, cfg)
    for _ in range(6):
        full.train_step()
    part = Trainer(build_lstnet(build), a.images, b.images, cfg)
    for _ in range(5):
        part.train_step()
    part.save(tmp_path / "mid.lstn")
    resumed = Trainer.resume(tmp_path / "mid.lstn", a.images, b.images)
    assert resumed.train_step() == full.reports[5]
    detail(record_property, "step 6 after resuming from step 5 equals the uninterrupted step 6")
