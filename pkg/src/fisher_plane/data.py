"""Datasets: IDX ingestion, binarisation, the skewed digit split, synthetic fixtures, checkpoints."""

from __future__ import annotations

import gzip
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ContractError, CorruptCheckpointError, CheckpointError, CheckpointVersionError,
                     ParseError)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "FISHER_PLANE_DATA_DIR"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
MNIST_TRAIN_SIZE = 50_000
MNIST_FULL_TRAIN = 60_000

SKEW_MAJOR_LABEL = 0
SKEW_MAJOR_COUNT = 5800
SKEW_MINOR_COUNT = 100


class IdxMagicError(ParseError):
    pass


class IdxTruncatedError(ParseError):
    pass


class IdxCountMismatchError(ParseError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # [n, D] in [0, 1]
    labels: np.ndarray  # [n]
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2:
            raise ContractError(f"images must be [n, D], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ContractError("images and labels disagree on n")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.split, dict(self.meta))

    def head(self, n: int) -> "Dataset":
        return self.subset(slice(0, n))

    def histogram(self) -> dict[int, int]:
        vals, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


# -- IDX ----------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, what: str) -> tuple[tuple[int, ...], bytes]:
    if len(raw) < 4:
        raise IdxTruncatedError(f"{what}: file shorter than the IDX magic")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxMagicError(f"{what}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{what}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < need:
        raise IdxTruncatedError(f"{what}: payload has {len(payload)} bytes, header promises {need}")
    return dims, payload[:need]


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels are scaled by 1/255."""
    dims, pix = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, str(images_path))
    (n_labels,), lab = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, str(labels_path))
    n = dims[0]
    if n != n_labels:
        raise IdxCountMismatchError(f"{n} images but {n_labels} labels")
    images = np.frombuffer(pix, dtype=np.uint8).reshape(n, -1).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    return Dataset(images, labels, split, {"image_shape": list(dims[1:])})


def write_idx(images_path, labels_path, images_u8: np.ndarray, labels: np.ndarray,
              image_shape: tuple[int, int] | None = None) -> None:
    """Write uint8 images ``[n, rows*cols]`` (or ``[n, rows, cols]``) and labels as IDX."""
    images_u8 = np.asarray(images_u8)
    n = images_u8.shape[0]
    if image_shape is None:
        if images_u8.ndim == 3:
            image_shape = images_u8.shape[1:]
        else:
            side = int(round(np.sqrt(images_u8.shape[1])))
            image_shape = (side, side) if side * side == images_u8.shape[1] else (1, images_u8.shape[1])
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, *image_shape))
        fh.write(np.ascontiguousarray(images_u8, dtype=np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def to_uint8(images: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(images) * 255.0).astype(np.uint8)


def _find(dirpath: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = dirpath / name
        if p.exists():
            return p
    raise FileNotFoundError(f"{stem}[.gz] not found in {dirpath}")


def resolve_data_dir(path=None) -> Path:
    path = path or os.environ.get(DATA_DIR_ENV)
    if not path:
        raise ContractError(f"no data directory given and {DATA_DIR_ENV} is unset")
    return Path(path)


def load_mnist(data_dir=None) -> dict[str, Dataset]:
    """Load the MNIST IDX pair files found in ``data_dir``.

    A 60,000-example training file is repartitioned into the first 50,000 for
    training and the last 10,000 for validation; other sizes (e.g. a skewed
    training set written by ``make-skewed``) are used whole.
    """
    d = resolve_data_dir(data_dir)
    out = {}
    for split, (img, lab) in MNIST_FILES.items():
        out[split] = load_idx(_find(d, img), _find(d, lab), split)
    train = out["train"]
    if len(train) == MNIST_FULL_TRAIN:
        out["full_train"] = train
        out["valid"] = Dataset(train.images[MNIST_TRAIN_SIZE:], train.labels[MNIST_TRAIN_SIZE:], "valid")
        out["train"] = Dataset(train.images[:MNIST_TRAIN_SIZE], train.labels[:MNIST_TRAIN_SIZE], "train")
    return out


# -- transforms ---------------------------------------------------------------

def binarize(ds: Dataset, mode: str = "threshold", seed: int = 0) -> Dataset:
    """Map pixels to {0, 1}: ``x >= 0.5`` (ties go up) or Bernoulli(x) draws."""
    x = ds.images
    if (x < 0).any() or (x > 1).any():
        raise ContractError("binarize needs values in [0, 1]")
    if mode == "threshold":
        b = (x >= 0.5).astype(np.float64)
    elif mode == "stochastic":
        b = (np.random.default_rng(seed).random(x.shape) < x).astype(np.float64)
    else:
        raise ContractError(f"unknown binarize mode {mode!r}")
    return Dataset(b, ds.labels.copy(), ds.split, {**ds.meta, "binarized": mode})


def build_skewed_split(ds: Dataset, seed: int = 0, major_label: int = SKEW_MAJOR_LABEL,
                       major_count: int = SKEW_MAJOR_COUNT, minor_count: int = SKEW_MINOR_COUNT) -> Dataset:
    """``major_count`` examples of one digit plus ``minor_count`` of every other, shuffled."""
    rng = np.random.default_rng(seed)
    picks = []
    for label in range(10):
        want = major_count if label == major_label else minor_count
        idx = np.flatnonzero(ds.labels == label)
        if idx.size < want:
            raise ContractError(f"label {label}: need {want} examples, found {idx.size}")
        picks.append(rng.choice(idx, size=want, replace=False))
    order = rng.permutation(np.concatenate(picks))
    out = ds.subset(order)
    out.meta["skewed"] = {"major_label": major_label, "major_count": major_count,
                          "minor_count": minor_count, "seed": seed}
    return out


def synthetic_gaussian_set(n: int, dim: int, components: int = 1, seed: int = 0,
                           spread: float = 2.0, scale: float = 0.5) -> Dataset:
    """Draws from an equal-weight Gaussian mixture; true parameters kept in ``meta``."""
    if components < 1:
        raise ContractError("components must be >= 1")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, spread, size=(components, dim))
    stds = np.full((components, dim), scale)
    labels = rng.integers(0, components, size=n)
    images = means[labels] + stds[labels] * rng.standard_normal((n, dim))
    return Dataset(images, labels, "train", {"means": means.tolist(), "stds": stds.tolist(),
                                             "components": components, "seed": seed})


def save_dataset_npz(path, ds: Dataset) -> None:
    np.savez(path, images=ds.images, labels=ds.labels, split=ds.split, meta=json.dumps(ds.meta))


def load_dataset_npz(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        return Dataset(z["images"], z["labels"], str(z["split"]), json.loads(str(z["meta"])))


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = b"FPCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    meta: dict
    arrays: dict[str, np.ndarray]
    version: int = CHECKPOINT_VERSION

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.version == other.version and self.meta == other.meta
                and self.arrays.keys() == other.arrays.keys()
                and all(self.arrays[k].shape == other.arrays[k].shape
                        and self.arrays[k].tobytes() == other.arrays[k].tobytes() for k in self.arrays))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write ``MAGIC version\\n<header-bytes>\\n<json header>`` then raw ``<f8`` arrays, atomically."""
    entries, blobs, offset = [], [], 0
    for name, arr in ckpt.arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"version": ckpt.version, "meta": ckpt.meta, "arrays": entries,
                         "payload_bytes": offset}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC + b" %d\n%d\n" % (ckpt.version, len(header)))
    buf.write(header)
    buf.write(b"\n")
    for b in blobs:
        buf.write(b)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    first, sep, rest = raw.partition(b"\n")
    parts = first.split(b" ")
    if not sep or len(parts) != 2 or parts[0] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    try:
        version = int(parts[1])
    except ValueError:
        raise CorruptCheckpointError(f"{path}: unreadable version field") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    hlen_line, sep, rest = rest.partition(b"\n")
    try:
        hlen = int(hlen_line)
        header = json.loads(rest[:hlen])
    except ValueError:
        raise CorruptCheckpointError(f"{path}: corrupt header") from None
    if len(rest) < hlen + 1:
        raise CorruptCheckpointError(f"{path}: truncated header")
    payload = rest[hlen + 1:]
    if len(payload) != header["payload_bytes"]:
        raise CorruptCheckpointError(
            f"{path}: corrupt length, payload has {len(payload)} bytes, header declares {header['payload_bytes']}")
    arrays = {}
    for e in header["arrays"]:
        a = np.frombuffer(payload, dtype="<f8", count=e["nbytes"] // 8, offset=e["offset"])
        if a.size != int(np.prod(e["shape"])):
            raise CorruptCheckpointError(f"{path}: array {e['name']} length disagrees with its shape")
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return Checkpoint(header["meta"], arrays, version)
