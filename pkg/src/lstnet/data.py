"""Dataset loading (MNIST IDX, USPS CSV), synthetic toy domains and batching.

Pixels are mapped from [0, 255] to [-1, 1] so they match the generators'
tanh output range.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_COUNTS = {"train": 60000, "test": 10000}
USPS_COUNTS = {"train": 7291, "test": 2007}


class DataFormatError(ValueError):
    pass


@dataclass
class UnlabeledDataset:
    images: np.ndarray  # N x H x W x 1, float32 in [-1, 1]
    name: str = ""
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be N x H x W x C, got {self.images.shape}")
        if self.images.size and (self.images.min() < -1 or self.images.max() > 1):
            raise ValueError("pixel values must lie in [-1, 1]")

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])


@dataclass
class LabeledDataset(UnlabeledDataset):
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        super().__post_init__()
        if self.labels is None or len(self.labels) != len(self.images):
            raise ValueError("image count does not match label count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
            raise ValueError("labels must lie in 0..9")

    def subset(self, n: int, seed: int = 0) -> "LabeledDataset":
        idx = np.sort(np.random.default_rng(seed).permutation(len(self))[:n])
        return LabeledDataset(self.images[idx], f"{self.name}[{n}]", self.split, self.labels[idx])

    def unlabeled(self) -> UnlabeledDataset:
        return UnlabeledDataset(self.images, self.name, self.split)


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float32 [-1, 1]."""
    return (pixels.astype(np.float32) / 127.5 - 1.0).astype(np.float32)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx_images(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes, need 16)")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise DataFormatError(f"{path}: truncated, header declares {n}x{rows}x{cols} needing {need} bytes, file has {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes, need 8)")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw) < 8 + n:
        raise DataFormatError(f"{path}: truncated, header declares {n} labels, file has {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (N x H x W) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    opener = lambda p: gzip.open(p, "wb") if str(p).endswith(".gz") else open(p, "wb")  # noqa: E731
    with opener(images_path) as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(images.tobytes())
    with opener(labels_path) as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_idx(images_path, labels_path, name: str = "mnist", split: str = "train", expected_count: Optional[int] = None) -> LabeledDataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DataFormatError(f"{images_path} holds {len(images)} images but {labels_path} holds {len(labels)} labels")
    if expected_count is not None and len(images) != expected_count:
        raise DataFormatError(f"{name} {split}: expected {expected_count} images, found {len(images)}")
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"{labels_path}: label {labels.max()} outside 0..9")
    return LabeledDataset(to_unit_range(images)[..., None], name, split, labels.astype(np.int64))


def load_mnist(directory, split: str = "train", strict: bool = True) -> LabeledDataset:
    """Load the standard MNIST IDX files (optionally gzipped) from ``directory``."""
    stem = {"train": "train", "test": "t10k"}[split]
    directory = Path(directory)

    def find(kind):
        for suffix in ("", ".gz"):
            for sep in ("-", "."):
                p = directory / f"{stem}-{kind}{sep}idx{1 if kind == 'labels' else 3}-ubyte{suffix}"
                if p.exists():
                    return p
        raise FileNotFoundError(f"no MNIST {split} {kind} file in {directory}")

    return load_idx(find("images"), find("labels"), "mnist", split, MNIST_COUNTS[split] if strict else None)


def load_usps(path, split: Optional[str] = None, name: str = "usps") -> LabeledDataset:
    """Read the USPS CSV container: one row per image, label then 256 pixels in 0..255.

    When ``split`` is given the row count is checked against 7291 (train) or
    2007 (test).
    """
    images, labels = [], []
    with open(path, newline="") as fh:
        for rowno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 257:
                raise DataFormatError(f"{path}: row {rowno} has {len(row)} columns, expected 257")
            try:
                label = int(row[0])
                pixels = [int(float(v)) for v in row[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}: row {rowno}: {exc}") from None
            if not 0 <= label <= 9:
                raise DataFormatError(f"{path}: row {rowno} has label {label} outside 0..9")
            if min(pixels) < 0 or max(pixels) > 255:
                raise DataFormatError(f"{path}: row {rowno} has pixels outside 0..255")
            labels.append(label)
            images.append(pixels)
    if split is not None and len(labels) != USPS_COUNTS[split]:
        raise DataFormatError(f"{path}: expected {USPS_COUNTS[split]} USPS {split} rows, found {len(labels)}")
    arr = np.asarray(images, dtype=np.uint8).reshape(-1, 16, 16)
    return LabeledDataset(to_unit_range(arr)[..., None], name, split or "train", np.asarray(labels, dtype=np.int64))


def write_usps_csv(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(images), -1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for label, pixels in zip(labels, images):
            writer.writerow([int(label), *pixels.tolist()])


def usps_libsvm_to_csv(src, dst) -> int:
    """Convert the LIBSVM ``usps`` / ``usps.t`` files to the CSV container.

    LIBSVM stores digit d as class d+1 and pixels as ``index:value`` with
    values in [-1, 1].  Returns the number of rows written.
    """
    opener = gzip.open if str(src).endswith(".gz") else open
    rows = []
    with opener(src, "rt") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            label = int(float(parts[0])) - 1
            pixels = np.zeros(256)
            pixels[:] = -1.0
            for item in parts[1:]:
                idx, val = item.split(":")
                pixels[int(idx) - 1] = float(val)
            rows.append((label, np.clip(np.rint((pixels + 1) * 127.5), 0, 255).astype(np.uint8)))
    write_usps_csv(dst, np.stack([r[1] for r in rows]), np.array([r[0] for r in rows]))
    return len(rows)


# synthetic toy domains -------------------------------------------------------

TOY_CLASSES = 4


def _glyph(cls: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((8, 8))
    dy, dx = rng.integers(-1, 2, size=2)
    r0, c0 = 1 + dy, 1 + dx  # top-left of a 6x6 box, kept inside the frame
    if cls == 0:  # vertical bar
        img[r0:r0 + 6, c0 + 2:c0 + 4] = 1
    elif cls == 1:  # horizontal bar
        img[r0 + 2:r0 + 4, c0:c0 + 6] = 1
    elif cls == 2:  # diagonal
        for i in range(6):
            img[r0 + i, c0 + i] = 1
            if i + 1 < 6:
                img[r0 + i, c0 + i + 1] = 1
    else:  # hollow square
        img[r0:r0 + 6, c0:c0 + 6] = 1
        img[r0 + 2:r0 + 4, c0 + 2:c0 + 4] = 0
    return img * rng.uniform(0.7, 1.0)


def shift_right(img: np.ndarray, pixels: int = 1) -> np.ndarray:
    out = np.zeros_like(img)
    out[:, pixels:] = img[:, :-pixels]
    return out


@dataclass
class ToyPairing:
    """Ground truth kept for evaluation only: B[i] is built from A[source[i]]."""

    labels_a: np.ndarray
    source: np.ndarray

    @property
    def labels_b(self) -> np.ndarray:
        return self.labels_a[self.source]


def make_toy_domains(seed: int, n: int) -> tuple[UnlabeledDataset, UnlabeledDataset, ToyPairing]:
    """Domain A: 8x8 glyphs of four classes.  Domain B: the same glyphs shifted
    one pixel right and intensity-inverted, in shuffled order."""
    if n < 2:
        raise ValueError("need at least two toy images")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % TOY_CLASSES)
    unit = np.stack([_glyph(int(c), rng) for c in labels])
    source = rng.permutation(n)
    unit_b = 1.0 - np.stack([shift_right(unit[i]) for i in source])
    to_pm1 = lambda a: (2 * a - 1).astype(np.float32)[..., None]  # noqa: E731
    a = UnlabeledDataset(to_pm1(unit), "toy-A")
    b = UnlabeledDataset(to_pm1(unit_b), "toy-B")
    return a, b, ToyPairing(labels.astype(np.int64), source)


def toy_labeled(seed: int, n: int) -> tuple[LabeledDataset, LabeledDataset]:
    a, b, pairing = make_toy_domains(seed, n)
    return (LabeledDataset(a.images, a.name, a.split, pairing.labels_a),
            LabeledDataset(b.images, b.name, b.split, pairing.labels_b))


# batching -------------------------------------------------------------------

class Batcher:
    """Reshuffles each epoch with a permutation derived from ``(seed, epoch)``.

    The short final batch of an epoch is dropped.  ``state()``/``restore()``
    capture the stream position so an interrupted run can resume exactly.
    """

    def __init__(self, n_items: int, batch_size: int, seed: int):
        if batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if batch_size > n_items:
            raise ValueError(f"batch_size {batch_size} exceeds dataset size {n_items}")
        self.n = n_items
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0
        self.pos = 0
        self._perm = None

    @property
    def batches_per_epoch(self) -> int:
        return self.n // self.batch_size

    def _permutation(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch]).permutation(self.n)

    def epoch_indices(self, epoch: int = 0) -> Iterator[np.ndarray]:
        perm = self._permutation(epoch)
        for b in range(self.batches_per_epoch):
            yield perm[b * self.batch_size:(b + 1) * self.batch_size]

    def next_indices(self) -> np.ndarray:
        if self.pos >= self.batches_per_epoch:
            self.epoch += 1
            self.pos = 0
            self._perm = None
        if self._perm is None:
            self._perm = self._permutation(self.epoch)
        idx = self._perm[self.pos * self.batch_size:(self.pos + 1) * self.batch_size]
        self.pos += 1
        return idx

    def state(self) -> dict:
        return {"epoch": self.epoch, "pos": self.pos}

    def restore(self, state: dict) -> None:
        self.epoch, self.pos = int(state["epoch"]), int(state["pos"])
        self._perm = None


def batcher(dataset, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    """Endless stream of image batches from ``dataset``."""
    b = Batcher(len(dataset), batch_size, seed)
    while True:
        yield dataset.images[b.next_indices()]
