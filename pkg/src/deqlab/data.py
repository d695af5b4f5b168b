"""Dataset generation, normalization, and binary image-format parsing.

Datasets carry inputs as the columns of a d x n matrix X with every
column scaled to norm sqrt(d), no two columns parallel, and bounded
labels. These are hard preconditions of the convergence theory, so the
Dataset constructor enforces them.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionError, InputError

__all__ = [
    "Dataset",
    "PARALLEL_COS_TOL",
    "gen_sphere_data",
    "normalize_to_sphere",
    "load_idx",
    "load_cifar_bin",
    "subset_binary",
    "save_matrix_csv",
    "load_matrix_csv",
    "save_labels_csv",
    "load_labels_csv",
]

# |cos(angle)| above this means two columns count as parallel.
PARALLEL_COS_TOL = 1.0 - 1e-9

# Column norms must equal sqrt(d) to this relative accuracy.
NORM_RTOL = 1e-8

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073
CIFAR_PIXELS = 3072


def _pairwise_cosines(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=0)
    c = (x.T @ x) / np.outer(norms, norms)
    np.fill_diagonal(c, 0.0)
    return c


@dataclass(frozen=True)
class Dataset:
    """Inputs X (d x n, columns are samples), labels y, and provenance."""

    x: np.ndarray
    y: np.ndarray
    provenance: str = "synthetic"
    y_cap: float = 10.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if x.ndim != 2 or x.size == 0:
            raise AssumptionError("X must be a non-empty d x n matrix")
        if y.shape != (x.shape[1],):
            raise AssumptionError(
                f"y has shape {y.shape}, expected ({x.shape[1]},)")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise AssumptionError("dataset contains non-finite values")
        d = x.shape[0]
        norms = np.linalg.norm(x, axis=0)
        target = np.sqrt(d)
        bad = np.nonzero(np.abs(norms - target) > NORM_RTOL * target)[0]
        if bad.size:
            raise AssumptionError(
                f"columns {bad[:8].tolist()} have norm != sqrt(d): "
                f"{norms[bad[:8]].tolist()}")
        if x.shape[1] > 1:
            c = _pairwise_cosines(x)
            i, j = np.unravel_index(int(np.argmax(np.abs(c))), c.shape)
            if abs(c[i, j]) > PARALLEL_COS_TOL:
                raise AssumptionError(
                    f"columns {i} and {j} are parallel (|cos| = {abs(c[i, j]):.12f})")
        if np.any(np.abs(y) > self.y_cap):
            k = int(np.argmax(np.abs(y)))
            raise AssumptionError(
                f"label {k} has |y| = {abs(y[k]):.4g} > cap {self.y_cap}")

    @property
    def d(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]


def normalize_to_sphere(x_raw) -> np.ndarray:
    """Scale every column to norm sqrt(d), d the row count."""
    x = np.asarray(x_raw, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise InputError("X must be a non-empty d x n matrix")
    if not np.all(np.isfinite(x)):
        raise InputError("X contains non-finite values")
    norms = np.linalg.norm(x, axis=0)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise InputError(f"columns {zero[:8].tolist()} are zero and cannot be normalized")
    return x * (np.sqrt(x.shape[0]) / norms)


def gen_sphere_data(n: int, d: int, seed: int, y_cap: float = 10.0) -> Dataset:
    """Uniform points on the radius-sqrt(d) sphere with Gaussian labels.

    Deterministic in (n, d, seed): columns are standard Gaussian draws
    rescaled to norm sqrt(d); labels are standard Gaussian clipped to
    [-y_cap, y_cap]. Any column pair that comes out parallel (or any zero
    draw) is redrawn from the same stream.
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if n == 1:
        warnings.warn("n=1 dataset: the no-parallel-pairs requirement is vacuous")
    if d < 2:
        raise InputError(f"d must be >= 2, got {d}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((d, n))
    for _ in range(100):
        norms = np.linalg.norm(x, axis=0)
        bad = set(np.nonzero(norms == 0.0)[0].tolist())
        if not bad:
            xn = x * (np.sqrt(d) / norms)
            if n > 1:
                c = _pairwise_cosines(xn)
                ii, jj = np.nonzero(np.abs(c) > PARALLEL_COS_TOL)
                bad |= {int(j) for i, j in zip(ii, jj) if i < j}
        if not bad:
            break
        for k in sorted(bad):
            x[:, k] = rng.standard_normal(d)
    else:
        raise AssumptionError("could not draw a dataset without parallel pairs")
    y = np.clip(rng.standard_normal(n), -y_cap, y_cap)
    return Dataset(x=xn, y=y, provenance="synthetic", y_cap=y_cap)


def _read_exact(f, count: int, what: str) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise InputError(f"truncated file while reading {what}: "
                         f"wanted {count} bytes, got {len(buf)}")
    return buf


def load_idx(images_path, labels_path):
    """Parse an IDX image/label file pair (the MNIST container format).

    Returns (pixels, labels): pixels is d x N float64 with values in
    [0, 255], columns are images flattened in row-major pixel order;
    labels is a length-N integer vector.
    """
    with open(images_path, "rb") as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise InputError(
                f"bad magic in {images_path}: 0x{magic:08x}, "
                f"expected 0x{IDX_IMAGES_MAGIC:08x}")
        rows, cols = struct.unpack(">II", _read_exact(f, 8, "image dimensions"))
        raw = _read_exact(f, count * rows * cols, "image pixels")
    pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    pixels = pixels.reshape(count, rows * cols).T

    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise InputError(
                f"bad magic in {labels_path}: 0x{magic:08x}, "
                f"expected 0x{IDX_LABELS_MAGIC:08x}")
        raw = _read_exact(f, label_count, "labels")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if label_count != count:
        raise InputError(
            f"image/label count mismatch: {count} images vs {label_count} labels")
    return pixels, labels


def load_cifar_bin(path):
    """Parse a CIFAR-10 binary batch: 3073-byte records of label + RGB planes.

    Returns (pixels, labels) with pixels 3072 x N float64 in [0, 255].
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        raise InputError(
            f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if np.any(labels > 9):
        k = int(np.argmax(labels > 9))
        raise InputError(f"record {k} has label byte {labels[k]} > 9")
    pixels = records[:, 1:].astype(np.float64).T
    return pixels, labels


def subset_binary(raw, class_a: int, class_b: int, per_class: int, seed: int,
                  provenance: str = "file") -> Dataset:
    """Draw a balanced two-class subset with labels -1 (class_a) / +1 (class_b).

    Samples per_class images of each class without replacement (seeded),
    normalizes columns to sqrt(d), and swaps out any sample whose column is
    parallel to another (or zero) for a fresh one from the same class pool.
    Irreparable duplicates raise with the offending source indices.
    """
    pixels, labels = raw
    if per_class < 1:
        raise InputError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    chosen = []
    for cls in (class_a, class_b):
        pool = np.nonzero(labels == cls)[0]
        if pool.size < per_class:
            raise InputError(
                f"class {cls} has only {pool.size} samples, need {per_class}")
        order = rng.permutation(pool)
        chosen.append(list(order[:per_class]))
        chosen.append(list(order[per_class:]))
    picked = np.array(chosen[0] + chosen[2], dtype=np.int64)
    reserves = [list(chosen[1]), list(chosen[3])]

    def column(idx):
        col = pixels[:, idx]
        norm = np.linalg.norm(col)
        return None if norm == 0.0 else col * (np.sqrt(pixels.shape[0]) / norm)

    x = np.empty((pixels.shape[0], 2 * per_class))
    for pos, idx in enumerate(picked):
        col = column(idx)
        while col is None:
            side = 0 if pos < per_class else 1
            if not reserves[side]:
                raise AssumptionError(f"sample {idx} is all zeros and the class "
                                      f"pool is exhausted")
            idx = reserves[side].pop(0)
            picked[pos] = idx
            col = column(idx)
        x[:, pos] = col

    for _ in range(2 * per_class):
        c = _pairwise_cosines(x)
        ii, jj = np.nonzero(np.abs(c) > PARALLEL_COS_TOL)
        dup = [(int(i), int(j)) for i, j in zip(ii, jj) if i < j]
        if not dup:
            break
        pos = dup[0][1]
        side = 0 if pos < per_class else 1
        if not reserves[side]:
            offending = sorted({picked[i] for pair in dup for i in pair})
            raise AssumptionError(
                f"parallel duplicate images at source indices {offending} "
                f"and no replacements left")
        idx = reserves[side].pop(0)
        col = column(idx)
        if col is None:
            continue
        picked[pos] = idx
        x[:, pos] = col
    else:
        offending = sorted({int(picked[i]) for pair in dup for i in pair})
        raise AssumptionError(
            f"could not eliminate parallel duplicates; source indices {offending}")

    y = np.concatenate([np.full(per_class, -1.0), np.full(per_class, 1.0)])
    return Dataset(x=x, y=y, provenance=provenance,
                   extra={"class_a": class_a, "class_b": class_b,
                          "source_indices": picked.tolist(),
                          "label_encoding": "-1 for class_a, +1 for class_b"})


# --- documented CSV matrix schema ------------------------------------------
#
# Line 1: literal header "d,n"
# Line 2: the two integers "<d>,<n>"
# Then d*n lines, one value per line, column-major (first column's entries
# first). Values are written with repr-exact precision (%.17g).


def save_matrix_csv(path, a) -> None:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InputError("matrix CSV writer needs a 2-D array")
    with open(path, "w") as f:
        f.write("d,n\n")
        f.write(f"{a.shape[0]},{a.shape[1]}\n")
        for v in a.flatten(order="F"):
            f.write(f"{v:.17g}\n")


def load_matrix_csv(path) -> np.ndarray:
    with open(path) as f:
        header = f.readline().strip()
        if header != "d,n":
            raise InputError(f"{path}: expected header 'd,n', got {header!r}")
        dims = f.readline().strip().split(",")
        if len(dims) != 2:
            raise InputError(f"{path}: expected '<d>,<n>' on line 2")
        d, n = int(dims[0]), int(dims[1])
        values = np.loadtxt(f, dtype=np.float64, ndmin=1)
    if values.size != d * n:
        raise InputError(f"{path}: expected {d * n} values, found {values.size}")
    return values.reshape((d, n), order="F")


def save_labels_csv(path, y) -> None:
    y = np.asarray(y, dtype=np.float64).ravel()
    with open(path, "w") as f:
        f.write("y\n")
        for v in y:
            f.write(f"{v:.17g}\n")


def load_labels_csv(path) -> np.ndarray:
    with open(path) as f:
        header = f.readline().strip()
        if header != "y":
            raise InputError(f"{path}: expected header 'y', got {header!r}")
        return np.loadtxt(f, dtype=np.float64, ndmin=1)
