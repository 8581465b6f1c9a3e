"""IDX ingestion, bilinear downsizing, and train/validation/test splits."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, ShapeError

IDX_UBYTE = 0x08
GZIP_MAGIC = b"\x1f\x8b"
DATA_ROOT_ENV = "TTN_DATA_ROOT"

# file stems shared by MNIST and Fashion-MNIST
IDX_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
DATASETS = ("mnist", "fashion-mnist")


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX container (optionally gzip-compressed).

    Returns a uint8 array whose shape is the stored dimension list, e.g.
    ``(60000, 28, 28)`` for image files and ``(60000,)`` for label files.
    """
    raw = bytes(raw)
    if raw[:2] == GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise ParseError(f"corrupt gzip stream: {exc}", offset=0) from exc
    if len(raw) < 4:
        raise ParseError("truncated IDX header", offset=len(raw))
    zero, dtype, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype != IDX_UBYTE or ndim == 0:
        raise ParseError(f"bad IDX magic 0x{raw[:4].hex()}; expected 0x000008NN with NN >= 1", offset=0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"truncated IDX header: {ndim} dimension sizes need {header} bytes", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = 1
    for k, dsize in enumerate(dims):
        count *= dsize
        if count > 1 << 40:
            raise ParseError(f"dimension sizes overflow at dimension {k}", offset=4 + 4 * k)
    if len(raw) - header < count:
        raise ParseError(f"truncated payload: {count} bytes declared, {len(raw) - header} present", offset=len(raw))
    if len(raw) - header > count:
        raise ParseError(f"{len(raw) - header - count} trailing bytes after payload", offset=header + count)
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(array) -> bytes:
    """Serialize a uint8 array as an uncompressed IDX container."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError(f"only unsigned-byte IDX files are supported, got {array.dtype}")
    if array.ndim == 0:
        raise ValueError("IDX needs at least one dimension")
    head = struct.pack(">HBB", 0, IDX_UBYTE, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array).tobytes()


def read_idx(path) -> np.ndarray:
    return parse_idx(Path(path).read_bytes())


@dataclass(frozen=True, eq=False)
class ImageSet:
    """Flattened images in [0, 1] with 1-based labels.

    ``source_index`` records each image's position in the file it came from.
    """

    images: np.ndarray
    labels: np.ndarray
    shape: tuple
    name: str = ""
    source_index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 2 or images.shape[1] != int(np.prod(self.shape)):
            raise ShapeError(f"images must have shape (n, {int(np.prod(self.shape))}), got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ShapeError(f"{images.shape[0]} images but labels of shape {labels.shape}")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        src = np.arange(images.shape[0]) if self.source_index is None else np.asarray(self.source_index)
        for arr in (images, labels, src):
            arr.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "source_index", src)
        object.__setattr__(self, "shape", tuple(self.shape))

    def __len__(self):
        return self.images.shape[0]

    def take(self, idx, name: str | None = None) -> "ImageSet":
        idx = np.asarray(idx)
        return ImageSet(self.images[idx], self.labels[idx], self.shape, name or self.name, self.source_index[idx])

    def subset(self, count: int, seed: int) -> "ImageSet":
        """``count`` images chosen by a seeded shuffle (all of them if count >= len)."""
        if count >= len(self):
            return self
        idx = np.sort(np.random.default_rng(seed).permutation(len(self))[:count])
        return self.take(idx)


def image_set_from_idx(images_u8: np.ndarray, labels_u8: np.ndarray, name: str = "") -> ImageSet:
    if images_u8.ndim != 3:
        raise ShapeError(f"image IDX must be 3-dimensional, got shape {images_u8.shape}")
    if labels_u8.ndim != 1 or labels_u8.shape[0] != images_u8.shape[0]:
        raise ShapeError(f"{images_u8.shape[0]} images but label IDX of shape {labels_u8.shape}")
    n, h, w = images_u8.shape
    return ImageSet(images_u8.reshape(n, h * w) / 255.0, labels_u8.astype(np.int64) + 1, (h, w), name)


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the interpolation weights of output pixel i (pixel-centre aligned)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def downsample_batch(images, out_shape=(16, 16)) -> np.ndarray:
    """Bilinear resize of a stack of images (n, H, W) -> (n, *out_shape), clamped to [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ShapeError(f"expected a stack of 2D images, got shape {images.shape}")
    rows = _bilinear_matrix(images.shape[1], out_shape[0])
    cols = _bilinear_matrix(images.shape[2], out_shape[1])
    out = np.einsum("ih,nhw,jw->nij", rows, images, cols, optimize=True)
    return np.clip(out, 0.0, 1.0)


def downsample(image, out_shape=(16, 16)) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (28, 28):
        raise ShapeError(f"downsample expects a 28x28 image, got {image.shape}")
    return downsample_batch(image[None], out_shape)[0]


def downsample_set(data: ImageSet, out_shape=(16, 16)) -> ImageSet:
    h, w = data.shape
    small = downsample_batch(data.images.reshape(len(data), h, w), out_shape)
    return ImageSet(small.reshape(len(data), -1), data.labels, out_shape, data.name, data.source_index)


@dataclass(frozen=True)
class SplitSpec:
    train_count: int = 55000
    val_count: int = 5000
    test_count: int = 10000
    shuffle_seed: int = 0


def make_splits(train_source: ImageSet, test_source: ImageSet, spec: SplitSpec = SplitSpec()):
    """Seeded validation draw from the training file; the test file passes through."""
    if spec.train_count + spec.val_count != len(train_source):
        raise ConfigError(
            f"train_count + val_count = {spec.train_count + spec.val_count}, but the training file"
            f" holds {len(train_source)} images"
        )
    if spec.test_count != len(test_source):
        raise ConfigError(f"test_count = {spec.test_count}, but the test file holds {len(test_source)} images")
    if min(spec.train_count, spec.val_count) < 0:
        raise ConfigError("split counts must be nonnegative")
    perm = np.random.default_rng(spec.shuffle_seed).permutation(len(train_source))
    val_idx = np.sort(perm[:spec.val_count])
    train_idx = np.sort(perm[spec.val_count:])
    name = train_source.name
    return (
        train_source.take(train_idx, f"{name}/train"),
        train_source.take(val_idx, f"{name}/val"),
        test_source.take(np.arange(len(test_source)), f"{name}/test"),
    )


def _find(root: Path, stem: str) -> Path:
    for candidate in (root / stem, root / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no {stem}[.gz] under {root}")


def dataset_dir(name: str, root=None) -> Path:
    if name not in DATASETS:
        raise ConfigError(f"unknown dataset {name!r}; expected one of {', '.join(DATASETS)}")
    root = root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise ConfigError(f"no dataset root given and ${DATA_ROOT_ENV} is unset")
    return Path(root) / name


def load_idx_pair(directory, name: str = ""):
    """(train, test) ImageSets read from the four standard IDX files in ``directory``."""
    directory = Path(directory)
    out = []
    for split in ("train", "test"):
        imgs = read_idx(_find(directory, IDX_FILES[f"{split}_images"]))
        labs = read_idx(_find(directory, IDX_FILES[f"{split}_labels"]))
        out.append(image_set_from_idx(imgs, labs, name))
    return tuple(out)


def load_splits(name: str, root=None, spec: SplitSpec = SplitSpec(), out_shape=(16, 16)):
    """Train/val/test ImageSets for ``name``, downsized to ``out_shape``."""
    train_src, test_src = load_idx_pair(dataset_dir(name, root), name)
    if out_shape is not None and tuple(out_shape) != train_src.shape:
        train_src = downsample_set(train_src, out_shape)
        test_src = downsample_set(test_src, out_shape)
    return make_splits(train_src, test_src, spec)
