"""MNIST IDX loading.

IDX files are big-endian: a 4-byte magic, one 4-byte count per dimension,
then unsigned bytes. ``.gz`` files are read transparently.
"""

import gzip
import typing as t
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tpu_imac_sim.exceptions import DimensionError, FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int = 10

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DimensionError(f"images must be N x H x W x C, got {self.images.shape}")
        if len(self.images) < 1 or len(self.images) != len(self.labels):
            raise DimensionError(
                f"{len(self.images)} images and {len(self.labels)} labels do not pair up"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DimensionError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self) -> t.Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(self.images[indices], self.labels[indices], self.num_classes)


def _read_bytes(path: t.Union[str, Path]) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> np.ndarray:
    header_len = 4 * (1 + ndim)
    if len(raw) < header_len:
        raise FormatError(f"{path}: file shorter than its IDX header")
    header = np.frombuffer(raw, dtype=">u4", count=1 + ndim)
    if int(header[0]) != magic:
        raise FormatError(f"{path}: bad magic 0x{int(header[0]):08x}, expected 0x{magic:08x}")
    dims = tuple(int(d) for d in header[1:])
    body = np.frombuffer(raw, dtype=np.uint8, offset=header_len)
    if body.size != int(np.prod(dims)):
        raise FormatError(
            f"{path}: header declares {'x'.join(map(str, dims))} records, "
            f"found {body.size} bytes"
        )
    return body.reshape(dims)


def load_mnist(images_path, labels_path) -> LabeledDataset:
    """Load an MNIST image/label file pair.

    Returns:
        LabeledDataset: ``N x 28 x 28 x 1`` float32 images scaled to [0, 1].

    Raises:
        FormatError: On a wrong magic, truncated data or mismatched counts.
    """
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, 1, labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    if len(labels) and labels.max() > 9:
        raise FormatError(f"{labels_path}: label {int(labels.max())} is not a digit")
    try:
        return LabeledDataset(
            images=(images.astype(np.float32) / 255.0)[..., None],
            labels=labels.astype(np.int64),
        )
    except DimensionError as e:
        raise FormatError(str(e)) from None
