"""
Training a translator on toy domains
====================================

Domain A holds 8x8 glyphs of four classes.  Domain B holds the same glyphs
shifted right by one pixel and colour-inverted, drawn in a different order, so
no image pairs are given.  We train the full two-phase scheme (discriminators
first, then encoders and generators) and then classify B images by translating
them into A and applying a classifier that has only ever seen A.
"""

import numpy as np

from lstnet import config as C
from lstnet.data import toy_labeled
from lstnet.evaluation import evaluate_adaptation, train_classifier, translate_dataset
from lstnet.trainer import train_loop

# The toy preset: small networks, lr 1e-3, batch 32, no augmentation
cfg = C.resolve("toy", overrides={"train.max_steps": 300, "train.log_interval": 50})
a_train, b_train = toy_labeled(0, cfg["data.toy_n"])
a_test, b_test = toy_labeled(1000, cfg["data.toy_test_n"])

trainer, history = train_loop(a_train.images, b_train.images, C.train_config(cfg),
                              C.build_config(cfg, {1: a_train.image_shape, 2: b_train.image_shape}))
for rep in history:
    cycle = np.mean([rep.j_cc1, rep.j_cc2, rep.j_cc3, rep.j_cc4])
    print(f"step {rep.step:4d}  cycle {cycle:.3f}  latent disc. balanced acc {rep.dl_balanced_acc:.2f}")

# A classifier for domain A, trained on labelled A images only
clf, acc = train_classifier(a_train, C.classifier_hyper(cfg), a_test)
print(f"classifier on A test: {acc:.3f}")

# B images straight into the A classifier do poorly ...
print(f"B untranslated: {clf.accuracy(b_test):.3f}")
# ... translated into A first, they are classified correctly
translated = translate_dataset(b_test.images, "2to1", trainer.model)
report = evaluate_adaptation(clf, translated, b_test.labels, "2to1")
print(f"B translated to A: {report.accuracy:.3f}")
print("confusion matrix (rows: true class):")
print(np.array(report.confusion)[:4, :4])
