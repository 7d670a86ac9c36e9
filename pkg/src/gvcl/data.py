"""Dataset loading and synthetic task generation.

IDX (MNIST-style) parsing, Split-MNIST style binary task construction,
the 2-D logistic cluster tasks and the 1-D curvature-probe draws.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file: bad magic, truncation or count mismatch."""


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, features) or (N, C, H, W), values in [0, 1]
    labels: np.ndarray  # integer vector
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels must have equal length")
        if len(self.inputs) == 0:
            raise ValueError("dataset must be nonempty")

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.labels[idx], self.class_names)


@dataclass
class TaskSpec:
    task_id: str
    train: Dataset
    val: Dataset
    test: Dataset
    classes: int


def _read_maybe_gz(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def _read_idx_header(blob, path):
    if len(blob) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    magic = struct.unpack(">I", blob[:4])[0]
    return magic


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair into a flattened [0,1] dataset."""
    img_blob = _read_maybe_gz(images_path)
    lbl_blob = _read_maybe_gz(labels_path)

    if _read_idx_header(img_blob, images_path) != IDX_MAGIC_IMAGES:
        raise IdxFormatError(f"{images_path}: bad magic (expected images file)")
    if _read_idx_header(lbl_blob, labels_path) != IDX_MAGIC_LABELS:
        raise IdxFormatError(f"{labels_path}: bad magic (expected labels file)")

    if len(img_blob) < 16:
        raise IdxFormatError(f"{images_path}: truncated header")
    n, rows, cols = struct.unpack(">III", img_blob[4:16])
    if len(img_blob) != 16 + n * rows * cols:
        raise IdxFormatError(f"{images_path}: payload length does not match header")

    if len(lbl_blob) < 8:
        raise IdxFormatError(f"{labels_path}: truncated header")
    (n_lbl,) = struct.unpack(">I", lbl_blob[4:8])
    if len(lbl_blob) != 8 + n_lbl:
        raise IdxFormatError(f"{labels_path}: payload length does not match header")
    if n != n_lbl:
        raise IdxFormatError(f"image count {n} != label count {n_lbl}")

    images = np.frombuffer(img_blob, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    labels = np.frombuffer(lbl_blob, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(images.astype(np.float64) / 255.0, labels)


def write_idx(images, labels, images_path, labels_path):
    """Inverse of load_idx for fixtures; images are (N, rows, cols) uint8."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_MAGIC_IMAGES, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_MAGIC_LABELS, n))
        f.write(labels.tobytes())


def make_split_tasks(train: Dataset, test: Dataset, pairs, val_fraction=0.1, prefix="task"):
    """Binary tasks from class pairs; labels map class_a -> 0, class_b -> 1."""
    tasks = []
    for i, (a, b) in enumerate(pairs):
        for c in (a, b):
            if not np.any(train.labels == c):
                raise ValueError(f"class {c} not present in dataset")
        task = []
        for split in (train, test):
            mask = (split.labels == a) | (split.labels == b)
            x = split.inputs[mask]
            y = (split.labels[mask] == b).astype(np.int64)
            task.append(Dataset(x, y, [str(a), str(b)]))
        tr, te = task
        n_val = max(1, int(len(tr) * val_fraction))
        val = tr.subset(np.arange(len(tr) - n_val, len(tr)))
        tr = tr.subset(np.arange(len(tr) - n_val))
        tasks.append(TaskSpec(f"{prefix}{i}_{a}v{b}", tr, val, te, 2))
    return tasks


TOY_CENTERS = {
    # task 1 separates the +-x clusters, task 2 the +-y clusters; the
    # rotated boundaries make the tasks conflict in weight space. The
    # clusters overlap so the likelihood curvature stays well away from
    # zero and maximum-likelihood solutions remain finite.
    "task1": ((-1.0, 0.0), (1.0, 0.0)),
    "task2": ((0.0, -1.0), (0.0, 1.0)),
}
TOY_SPREAD = 1.0


def gen_toy_clusters(seed, n_per_class=100):
    """Two 2-D binary logistic tasks from four Gaussian clusters."""
    if n_per_class < 10:
        raise ValueError("n_per_class must be >= 10")
    rng = np.random.default_rng(seed)
    tasks = []
    for tid, (c0, c1) in TOY_CENTERS.items():
        splits = []
        for n in (n_per_class, max(10, n_per_class // 4), n_per_class):
            xs, ys = [], []
            for label, center in ((0, c0), (1, c1)):
                pts = rng.normal(0.0, TOY_SPREAD, size=(n, 2)) + np.asarray(center)
                xs.append(pts)
                ys.append(np.full(n, label, dtype=np.int64))
            splits.append(Dataset(np.concatenate(xs), np.concatenate(ys)))
        tr, val, te = splits
        tasks.append(TaskSpec(tid, tr, val, te, 2))
    return tasks


def gen_curvature_toy(which, seed, n_points=1000) -> Dataset:
    """Seeded standard-normal draws; `which` only selects the downstream f."""
    if which not in ("f1", "f2", "f3", "linear"):
        raise ValueError(f"unknown curvature toy {which!r}")
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal(n_points)
    return Dataset(draws[:, None], np.zeros(n_points, dtype=np.int64), [which])
