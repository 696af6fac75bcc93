"""Two-domain datasets: synthetic scenarios, IDX image files, batch sampling."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    pass


@dataclass
class DomainDataset:
    """Inputs in [0, 1] (images) or raw coordinates (synthetic), optional labels.

    Target training splits are built with ``y=None``; their labels only ever
    exist in the validation and test splits.
    """
    X: np.ndarray
    y: np.ndarray | None
    domain: str
    n_classes: int
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-d, got shape {self.X.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X contains non-finite values")
        if self.domain not in ("source", "target"):
            raise ValueError(f"domain must be 'source' or 'target', got {self.domain!r}")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (self.X.shape[0],):
                raise ValueError(f"labels shape {self.y.shape} does not match {self.X.shape[0]} samples")

    def __len__(self):
        return self.X.shape[0]

    @property
    def labeled(self) -> bool:
        return self.y is not None

    def subset(self, idx, keep_labels: bool = True) -> "DomainDataset":
        y = self.y[idx] if keep_labels and self.y is not None else None
        return DomainDataset(self.X[idx], y, self.domain, self.n_classes, self.image_shape)

    def unlabeled(self) -> "DomainDataset":
        return DomainDataset(self.X, None, self.domain, self.n_classes, self.image_shape)


@dataclass
class ScenarioSpec:
    kind: str = "two-moons-rotate"  # two-moons-rotate | blobs-shift | idx-pair
    angle: float = 30.0
    noise: float = 0.1
    shift: tuple[float, ...] = (2.0, 0.0)
    n_classes: int = 2
    n_source: int = 1000
    n_target: int = 1000
    n_val: int = 200
    n_test: int = 1000
    seed: int = 0
    source_images: str = ""
    source_labels: str = ""
    target_images: str = ""
    target_labels: str = ""
    upscale_to: int = 28

    def __post_init__(self):
        self.shift = tuple(float(s) for s in self.shift)
        if self.kind not in ("two-moons-rotate", "blobs-shift", "idx-pair"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if min(self.n_source, self.n_target, self.n_val, self.n_test) <= 0:
            raise ValueError("sample counts must be positive")
        if not 0 <= self.angle < 180:
            raise ValueError(f"angle must be in [0, 180), got {self.angle}")


@dataclass
class Splits:
    source: DomainDataset
    target: DomainDataset  # unlabeled
    val: DomainDataset
    test: DomainDataset
    meta: dict = field(default_factory=dict)


# --- synthetic -------------------------------------------------------------

def _moons(n: int, noise: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_out = n // 2
    n_in = n - n_out
    t_out = rng.uniform(0.0, np.pi, n_out)
    t_in = rng.uniform(0.0, np.pi, n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    X = np.vstack([outer, inner])
    y = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    X = X + noise * rng.standard_normal(X.shape)
    perm = rng.permutation(n)
    return X[perm], y[perm]


def rotate(X: np.ndarray, angle_deg: float, center: np.ndarray | None = None) -> np.ndarray:
    if center is None:
        center = X.mean(axis=0)
    a = np.deg2rad(angle_deg)
    R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return (X - center) @ R.T + center


def gen_two_moons(n: int, angle: float, noise: float, seed: int) -> tuple[DomainDataset, DomainDataset]:
    """Two interleaved half circles; the target is the same draw rotated about its centroid."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    X, y = _moons(n, noise, np.random.default_rng(seed))
    Xt = X.copy() if angle == 0 else rotate(X, angle)
    return DomainDataset(X, y, "source", 2), DomainDataset(Xt, y.copy(), "target", 2)


def gen_blobs(n: int, n_classes: int, shift, noise: float, seed: int,
              radius: float = 3.0) -> tuple[DomainDataset, DomainDataset]:
    """Gaussian clusters evenly spaced on a circle; the target is translated by ``shift``."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    y = np.arange(n) % n_classes
    y = y[rng.permutation(n)]
    ang = 2 * np.pi * np.arange(n_classes) / n_classes
    centers = radius * np.column_stack([np.cos(ang), np.sin(ang)])
    X = centers[y] + noise * rng.standard_normal((n, 2))
    shift = np.asarray(shift, dtype=np.float64).reshape(2)
    return DomainDataset(X, y, "source", n_classes), DomainDataset(X + shift, y.copy(), "target", n_classes)


# --- IDX files -------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{path}: expected magic 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if body.size != n * rows * cols:
        raise FormatError(f"{path}: header says {n}x{rows}x{cols} bytes, file has {body.size}")
    return body.reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{path}: expected magic 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if body.size != n:
        raise FormatError(f"{path}: header says {n} labels, file has {body.size}")
    return body.copy()


def idx_image_bytes(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()


def idx_label_bytes(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()


def load_idx(images_path, labels_path, domain: str = "source", n_classes: int = 10) -> DomainDataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    n, rows, cols = images.shape
    X = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    return DomainDataset(X, labels.astype(np.int64), domain, n_classes, (rows, cols))


def save_idx(dataset: DomainDataset, images_path, labels_path) -> None:
    rows, cols = dataset.image_shape
    pixels = np.rint(dataset.X * 255.0).astype(np.uint8).reshape(len(dataset), rows, cols)
    Path(images_path).write_bytes(idx_image_bytes(pixels))
    Path(labels_path).write_bytes(idx_label_bytes(dataset.y))


def upscale(images: np.ndarray, size: int = 28) -> np.ndarray:
    """Bilinear resize of ``n x h x w`` square images, corner pixels aligned."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1] != images.shape[2]:
        raise ValueError(f"expected n x h x h images, got {images.shape}")
    h = images.shape[1]
    pos = np.linspace(0.0, h - 1, size) if h > 1 else np.zeros(size)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, h - 1)
    frac = pos - lo
    rows = images[:, lo, :] * (1 - frac)[None, :, None] + images[:, hi, :] * frac[None, :, None]
    return rows[:, :, lo] * (1 - frac)[None, None, :] + rows[:, :, hi] * frac[None, None, :]


def data_dir() -> Path | None:
    d = os.environ.get("LAPDA_DATA_DIR")
    return Path(d) if d else None


def _resolve(path: str) -> Path:
    p = Path(path)
    base = data_dir()
    if not p.is_absolute() and base is not None and not p.exists():
        p = base / p
    return p


def _load_image_domain(images: str, labels: str, domain: str, size: int) -> DomainDataset:
    ds = load_idx(_resolve(images), _resolve(labels), domain)
    rows, cols = ds.image_shape
    if (rows, cols) != (size, size):
        X = upscale(ds.X.reshape(len(ds), rows, cols), size).reshape(len(ds), size * size)
        ds = DomainDataset(X, ds.y, domain, ds.n_classes, (size, size))
    return ds


# --- scenario assembly -----------------------------------------------------

def build_scenario(spec: ScenarioSpec) -> Splits:
    """Materialize source / unlabeled target / validation / test splits."""
    n_pool = spec.n_target + spec.n_val + spec.n_test
    if spec.kind == "two-moons-rotate":
        source, _ = gen_two_moons(spec.n_source, spec.angle, spec.noise, spec.seed)
        _, pool = gen_two_moons(n_pool, spec.angle, spec.noise, spec.seed + 1_000_003)
    elif spec.kind == "blobs-shift":
        source, _ = gen_blobs(spec.n_source, spec.n_classes, spec.shift, spec.noise, spec.seed)
        _, pool = gen_blobs(n_pool, spec.n_classes, spec.shift, spec.noise, spec.seed + 1_000_003)
    else:
        if not (spec.source_images and spec.source_labels and spec.target_images and spec.target_labels):
            raise ValueError("idx-pair scenario needs source_images, source_labels, target_images, target_labels")
        src = _load_image_domain(spec.source_images, spec.source_labels, "source", spec.upscale_to)
        tgt = _load_image_domain(spec.target_images, spec.target_labels, "target", spec.upscale_to)
        rng = np.random.default_rng(spec.seed)
        if spec.n_source > len(src) or n_pool > len(tgt):
            raise ValueError(f"requested {spec.n_source} source / {n_pool} target samples, "
                             f"files hold {len(src)} / {len(tgt)}")
        source = src.subset(rng.permutation(len(src))[:spec.n_source])
        pool = tgt.subset(rng.permutation(len(tgt))[:n_pool])
    a, b = spec.n_target, spec.n_target + spec.n_val
    idx = np.arange(n_pool)
    return Splits(
        source=source,
        target=pool.subset(idx[:a], keep_labels=False),
        val=pool.subset(idx[a:b]),
        test=pool.subset(idx[b:]),
    )


# --- batching --------------------------------------------------------------

class BatchSampler:
    """Draws index batches without replacement inside each epoch-shuffle.

    With ``class_balanced`` the batch is assembled from per-class queues so
    per-class counts differ by at most one.
    """

    def __init__(self, dataset: DomainDataset, size: int, class_balanced: bool,
                 rng: np.random.Generator):
        if size > len(dataset):
            raise ValueError(f"batch size {size} exceeds dataset size {len(dataset)}")
        if size < 1:
            raise ValueError("batch size must be positive")
        self.dataset = dataset
        self.size = size
        self.rng = rng
        self.balanced = class_balanced and dataset.labeled
        if self.balanced:
            self._pools = [np.flatnonzero(dataset.y == c) for c in range(dataset.n_classes)]
            self._pools = [p for p in self._pools if p.size]
            self._queues = [np.empty(0, dtype=np.int64) for _ in self._pools]
        else:
            self._queue = np.empty(0, dtype=np.int64)

    def _take(self, queue: np.ndarray, pool: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        got, queue = queue[:k], queue[k:]
        if got.size < k:
            fresh = pool[self.rng.permutation(pool.size)]
            # indices already in this batch move to the end of the new epoch
            dup = np.isin(fresh, got)
            fresh = np.concatenate([fresh[~dup], fresh[dup]])
            need = k - got.size
            got, queue = np.concatenate([got, fresh[:need]]), fresh[need:]
        return got, queue

    def next(self) -> np.ndarray:
        if not self.balanced:
            idx, self._queue = self._take(self._queue, np.arange(len(self.dataset)), self.size)
            return idx
        n_cls = len(self._pools)
        base, extra = divmod(self.size, n_cls)
        counts = np.full(n_cls, base)
        counts[self.rng.permutation(n_cls)[:extra]] += 1
        parts = []
        for c in range(n_cls):
            k = min(int(counts[c]), self._pools[c].size)
            idx, self._queues[c] = self._take(self._queues[c], self._pools[c], k)
            parts.append(idx)
        idx = np.concatenate(parts)
        short = self.size - idx.size
        if short:
            rest = np.setdiff1d(np.arange(len(self.dataset)), idx)
            idx = np.concatenate([idx, rest[self.rng.permutation(rest.size)[:short]]])
        return idx[self.rng.permutation(idx.size)]

    __next__ = next

    def __iter__(self):
        return self


def sample_batch(dataset: DomainDataset, size: int, class_balanced: bool,
                 rng: np.random.Generator) -> DomainDataset:
    return dataset.subset(BatchSampler(dataset, size, class_balanced, rng).next())
