"""
Data files, batching and augmentation
=====================================

MNIST ships as big-endian IDX files; USPS is read from a CSV of one label
followed by 256 pixel values per row.  Both are scaled to [-1, 1].  Here we
write small files in both formats, load them back, batch them reproducibly,
and look at the random affine augmentation used during training.
"""

import tempfile
from pathlib import Path

import numpy as np

from lstnet.augment import AffineParams, AugmentConfig, apply_affine, augment_batch
from lstnet.data import Batcher, load_idx, load_usps, write_idx, write_usps_csv

rng = np.random.default_rng(0)
tmp = Path(tempfile.mkdtemp())

# IDX: magic 0x00000803 for images, 0x00000801 for labels, then big-endian sizes
pixels = rng.integers(0, 256, (6, 28, 28), dtype=np.uint8)
labels = np.array([7, 2, 1, 0, 4, 1], dtype=np.uint8)
write_idx(tmp / "images-idx3-ubyte", tmp / "labels-idx1-ubyte", pixels, labels)
print("IDX header bytes:", (tmp / "images-idx3-ubyte").read_bytes()[:16].hex(" "))
mnist_like = load_idx(tmp / "images-idx3-ubyte", tmp / "labels-idx1-ubyte")
print("MNIST-style", mnist_like.images.shape, mnist_like.images.min(), mnist_like.images.max(), mnist_like.labels)

# USPS CSV: label then 16*16 pixels in 0..255
write_usps_csv(tmp / "usps.csv", rng.integers(0, 256, (5, 256), dtype=np.uint8), np.arange(5))
usps_like = load_usps(tmp / "usps.csv")
print("USPS-style", usps_like.images.shape, usps_like.labels)

# Batches come from a seeded permutation per epoch; the state can be saved and restored
batcher = Batcher(n_items=10, batch_size=4, seed=3)
print("epoch 0 batches:", [b.tolist() for b in batcher.epoch_indices(0)])
state = batcher.state()
first = batcher.next_indices()
batcher.restore(state)
print("restored batch matches:", np.array_equal(first, batcher.next_indices()))

# Augmentation: rotation up to 10 degrees, scale 0.9-1.1, shift up to 2 pixels;
# uncovered pixels are filled with -1 (the background colour)
img = -np.ones((16, 16))
img[4:12, 7:9] = 1.0
rotated = apply_affine(img, AffineParams(angle_deg=10.0, scale=1.0, shift=(0, 2)))
print("rotated + shifted bar, columns with ink:", np.flatnonzero((rotated > 0).any(axis=0)))
batch = augment_batch(img[None, ..., None].repeat(4, axis=0), np.random.default_rng([0, 1, 2]), AugmentConfig())
print("four random augmentations differ:", len({b.tobytes() for b in batch}) == 4)
