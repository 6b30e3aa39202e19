"""Deterministic synthetic datasets, IDX ingestion, splits and minibatches."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SPLIT_FRACTIONS = {"train": 0.70, "val": 0.15}  # remainder goes to test


@dataclass
class Dataset:
    """Immutable rows (inputs, labels) plus a partition into named splits."""

    inputs: np.ndarray
    labels: np.ndarray
    splits: dict[str, np.ndarray]
    provenance: str = ""
    _split_of: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a (N, D) matrix")
        n, d = self.inputs.shape
        if n < 1 or d < 1:
            raise ValueError("dataset needs N >= 1 rows and D >= 1 features")
        if self.labels.shape != (n,):
            raise ValueError("labels must be a length-N vector")
        split_of = np.full(n, -1, dtype=np.int64)
        for sid, (name, idx) in enumerate(self.splits.items()):
            idx = np.ascontiguousarray(idx, dtype=np.int64)
            self.splits[name] = idx
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValueError(f"split {name!r} has out-of-range indices")
            if np.any(split_of[idx] != -1):
                raise ValueError(f"split {name!r} overlaps another split")
            split_of[idx] = sid
        if np.any(split_of == -1):
            raise ValueError("splits do not cover every row")
        self._split_of = split_of

    @property
    def n(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def split_indices(self, split: str) -> np.ndarray:
        try:
            return self.splits[split]
        except KeyError:
            raise KeyError(f"dataset has no split {split!r}") from None

    def full_batch(self, split: str) -> "Minibatch":
        return Minibatch(self, self.split_indices(split), split)


@dataclass(frozen=True)
class Minibatch:
    """A view into one split of a dataset, by row index."""

    dataset: Dataset
    indices: np.ndarray
    split: str

    def __post_init__(self) -> None:
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.size < 1:
            raise ValueError("minibatch must be non-empty")
        split_ids = self.dataset._split_of
        names = list(self.dataset.splits)
        if self.split not in names:
            raise ValueError(f"unknown split {self.split!r}")
        sid = names.index(self.split)
        if idx.min() < 0 or idx.max() >= self.dataset.n or np.any(split_ids[idx] != sid):
            raise ValueError(f"minibatch indices leave the {self.split!r} split")

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def inputs(self) -> np.ndarray:
        return self.dataset.inputs[self.indices]

    @property
    def labels(self) -> np.ndarray:
        return self.dataset.labels[self.indices]


def _default_splits(n: int, rng: RngStream) -> dict[str, np.ndarray]:
    perm = rng.generator().permutation(n)
    n_train = int(np.floor(SPLIT_FRACTIONS["train"] * n))
    n_val = int(np.floor(SPLIT_FRACTIONS["val"] * n))
    return {
        "train": perm[:n_train],
        "val": perm[n_train : n_train + n_val],
        "test": perm[n_train + n_val :],
    }


def _two_moons(n: int, noise: float, gen: np.random.Generator):
    n_out = (n + 1) // 2
    n_in = n // 2
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    x = np.vstack([outer, inner])
    y = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    if noise > 0:
        x = x + gen.normal(0.0, noise, size=x.shape)
    return x, y


def _spirals(n: int, noise: float, gen: np.random.Generator):
    n0 = (n + 1) // 2
    n1 = n // 2
    xs, ys = [], []
    for label, m in ((0, n0), (1, n1)):
        t = np.linspace(0.05, 1.0, m)
        r = t
        phi = 2.5 * np.pi * t + np.pi * label
        xs.append(np.column_stack([r * np.sin(phi), r * np.cos(phi)]))
        ys.append(np.full(m, label, dtype=np.int64))
    x = np.vstack(xs)
    y = np.concatenate(ys)
    if noise > 0:
        x = x + gen.normal(0.0, noise, size=x.shape)
    return x, y


_BLOB_CENTERS = np.array([[-3.0, -3.0], [3.0, 3.0]])


def _gaussian_blobs(n: int, noise: float, gen: np.random.Generator):
    n0 = (n + 1) // 2
    n1 = n // 2
    x = np.repeat(_BLOB_CENTERS, [n0, n1], axis=0)
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise > 0:
        x = x + gen.normal(0.0, noise, size=x.shape)
    return x.astype(np.float64), y


_GENERATORS = {
    "two-moons": _two_moons,
    "spirals": _spirals,
    "gaussian-blobs": _gaussian_blobs,
}


def generate(kind: str, n: int = 200, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Build a seeded 2-d synthetic dataset with a 70/15/15 split.

    Point positions are deterministic in (kind, n, noise, seed); with
    noise = 0 the points lie exactly on the generator's canonical curves.
    """
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown dataset kind {kind!r}; known: {sorted(_GENERATORS)}")
    if n < 4:
        raise ConfigError("need n >= 4 samples")
    if noise < 0:
        raise ConfigError("noise must be >= 0")
    stream = RngStream(seed)
    x, y = _GENERATORS[kind](n, noise, stream.split("noise").generator())
    splits = _default_splits(n, stream.split("split"))
    return Dataset(x, y, splits, provenance=f"{kind}(n={n},noise={noise},seed={seed})")


def sample_batches(
    dataset: Dataset, split: str, batch_size: int, rng: RngStream, epoch: int
) -> list[Minibatch]:
    """Shuffled-without-replacement minibatches for one epoch.

    Every index of the split appears exactly once (the last batch may be
    short). The order is a pure function of (rng, epoch).
    """
    idx = dataset.split_indices(split)
    if idx.size == 0:
        raise ValueError(f"split {split!r} is empty")
    if not 1 <= batch_size <= idx.size:
        raise ConfigError(f"batch size {batch_size} not in [1, {idx.size}]")
    perm = rng.split(f"epoch-{epoch}").generator().permutation(idx.size)
    shuffled = idx[perm]
    return [
        Minibatch(dataset, shuffled[i : i + batch_size], split)
        for i in range(0, idx.size, batch_size)
    ]


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ValueError("truncated IDX file")
    return data


def _load_idx_array(path, magic: int, ndim: int) -> np.ndarray:
    with open(path, "rb") as fh:
        (got,) = struct.unpack(">I", _read_exact(fh, 4))
        if got != magic:
            raise ValueError(f"bad IDX magic in {path}: 0x{got:08x}, expected 0x{magic:08x}")
        dims = struct.unpack(f">{ndim}I", _read_exact(fh, 4 * ndim))
        count = 1
        for d in dims:
            count *= d
        data = np.frombuffer(_read_exact(fh, count), dtype=np.uint8)
        if fh.read(1):
            raise ValueError(f"trailing bytes in {path}")
    return data.reshape(dims)


def load_idx(images_path, labels_path, *, split_seed: int = 0) -> Dataset:
    """Load an IDX image/label file pair, scaling pixels to [0, 1].

    Images are flattened to (N, rows*cols); rows are split 70/15/15 with a
    shuffle seeded by ``split_seed``.
    """
    images = _load_idx_array(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _load_idx_array(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image/label count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    n = images.shape[0]
    x = images.reshape(n, -1).astype(np.float64) / 255.0
    splits = _default_splits(n, RngStream(split_seed).split("split"))
    return Dataset(x, labels.astype(np.int64), splits, provenance=f"idx({images_path})")


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a dataset as an IDX pair, quantizing inputs in [0, 1] to u8."""
    x = dataset.inputs
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("inputs must lie in [0, 1] to be stored as IDX bytes")
    if dataset.labels.min() < 0 or dataset.labels.max() > 255:
        raise ValueError("labels must fit in a byte")
    pixels = np.rint(x * 255.0).astype(np.uint8)
    n, d = x.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, 1, d))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())
