"""
Hyperspectral cube and label persistence, normalization, patch extraction
and the stratified per-class split.

On disk a cube is a JSON header (`*.hsc.json`) next to a raw band-sequential
payload of little-endian float32 (`*.hsc.raw`). Labels use the same layout
(`*.lbl.json` / `*.lbl.raw`) with one unsigned byte per pixel in row-major
order. Split manifests are a single JSON document (`*.split.json`).
"""

import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import (
    ConfigError,
    DimensionMismatchError,
    FormatError,
    LabelRangeError,
    NumericError,
    ShapeError,
    SplitError,
    StorageError,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CUBE_DTYPE = "f32le"
LABEL_DTYPE = "u8"


@dataclass
class HsiCube:
    """P x Q x S raster, stored as float32 (height, width, bands)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise DimensionMismatchError(f"cube must be (height, width, bands), got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise NumericError("cube contains non-finite values")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def bands(self):
        return self.values.shape[2]

    @property
    def shape(self):
        return self.values.shape

    @cached_property
    def band_stats(self):
        flat = self.values.reshape(-1, self.bands)
        return flat.min(axis=0), flat.max(axis=0)


@dataclass
class LabelGrid:
    """P x Q annotations; 0 is unlabeled, 1..C are classes."""

    labels: np.ndarray
    class_names: list = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DimensionMismatchError(f"labels must be (height, width), got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > 255):
            raise LabelRangeError("labels must fit in [0, 255]")
        self.labels = labels.astype(np.uint8)
        if self.class_names is not None:
            self.class_names = [str(name) for name in self.class_names]
            if int(self.labels.max()) > len(self.class_names):
                raise LabelRangeError(
                    f"label {int(self.labels.max())} exceeds the {len(self.class_names)} named classes"
                )

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def num_classes(self):
        if self.class_names:
            return len(self.class_names)
        return int(self.labels.max())

    def class_name(self, cls):
        if self.class_names:
            return self.class_names[cls - 1]
        return f"Class {cls}"

    def check_matches(self, cube):
        if (self.height, self.width) != (cube.height, cube.width):
            raise DimensionMismatchError(
                f"labels are {self.height}x{self.width} but the cube is {cube.height}x{cube.width}"
            )


@dataclass
class SplitManifest:
    seed: int
    per_class_train: int
    train: np.ndarray
    test: np.ndarray
    train_percent: float = None

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64).reshape(-1, 3)
        self.test = np.asarray(self.test, dtype=np.int64).reshape(-1, 3)

    def class_counts(self):
        """[(class, train count, test count)] for every class present in the manifest."""
        classes = sorted(set(self.train[:, 2].tolist()) | set(self.test[:, 2].tolist()))
        return [
            (cls, int((self.train[:, 2] == cls).sum()), int((self.test[:, 2] == cls).sum()))
            for cls in classes
        ]


@dataclass
class Normalizer:
    """Per-band min-max map fitted on training pixels only; unclamped."""

    band_min: np.ndarray
    band_max: np.ndarray

    def __post_init__(self):
        self.band_min = np.asarray(self.band_min, dtype=np.float64)
        self.band_max = np.asarray(self.band_max, dtype=np.float64)
        if self.band_min.shape != self.band_max.shape or self.band_min.ndim != 1:
            raise DimensionMismatchError("band minima and maxima must be equal-length vectors")

    @classmethod
    def fit(cls, cube, split):
        if len(split.train) == 0:
            raise SplitError("cannot fit normalization on an empty training set")
        spectra = cube.values[split.train[:, 0], split.train[:, 1]].astype(np.float64)
        return cls(spectra.min(axis=0), spectra.max(axis=0))

    def out_of_range_bands(self, cube):
        """Indices of bands whose values in `cube` leave the fitted [min, max]."""
        low, high = cube.band_stats
        return np.flatnonzero((low < self.band_min) | (high > self.band_max))

    def apply(self, cube):
        if self.band_min.shape[0] != cube.bands:
            raise DimensionMismatchError(
                f"normalizer fitted on {self.band_min.shape[0]} bands, cube has {cube.bands}"
            )
        outside = self.out_of_range_bands(cube)
        if len(outside):
            logger.info(f"{len(outside)} of {cube.bands} bands exceed the fitted range and map outside [0, 1]")
        span = self.band_max - self.band_min
        flat = span == 0
        scaled = (cube.values.astype(np.float64) - self.band_min) / np.where(flat, 1.0, span)
        scaled[..., flat] = 0.0
        return HsiCube(scaled.astype(np.float32))

    def to_dict(self):
        return {"band_min": self.band_min.tolist(), "band_max": self.band_max.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["band_min"], data["band_max"])


def _payload_path(header_path):
    header_path = Path(header_path)
    if header_path.suffix != ".json":
        raise FormatError(f"header path must end in .json, got {header_path}")
    return header_path.with_suffix(".raw")


def _read_header(header_path, dtype):
    header_path = Path(header_path)
    try:
        header = json.loads(header_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Failed to read header {header_path}: {str(e)}")
        raise FormatError(f"cannot read header {header_path}: {e}") from e
    if not isinstance(header, dict):
        raise FormatError(f"header {header_path} must hold a JSON object")
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unknown format_version {header.get('format_version')!r} in {header_path}")
    if header.get("dtype") != dtype:
        raise FormatError(f"expected dtype {dtype!r} in {header_path}, got {header.get('dtype')!r}")
    return header


def _read_payload(header_path, dtype, count):
    payload_path = _payload_path(header_path)
    try:
        raw = payload_path.read_bytes()
    except OSError as e:
        logger.error(f"Failed to read payload {payload_path}: {str(e)}")
        raise FormatError(f"cannot read payload {payload_path}: {e}") from e
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != count * itemsize:
        raise FormatError(
            f"{payload_path} holds {len(raw) / itemsize:g} scalars, header declares {count}"
        )
    return np.frombuffer(raw, dtype=dtype)


def _header_dims(header, header_path, keys):
    try:
        dims = tuple(int(header[key]) for key in keys)
    except (KeyError, TypeError, ValueError) as e:
        logger.error(f"Failed to read dimensions from {header_path}: {str(e)}")
        raise FormatError(f"{header_path} must declare integer {', '.join(keys)}") from e
    if min(dims) < 1:
        raise FormatError(f"{header_path} declares non-positive dimensions {dims}")
    return dims


def _write(header_path, header, payload):
    header_path = Path(header_path)
    payload_path = _payload_path(header_path)
    try:
        header_path.parent.mkdir(parents=True, exist_ok=True)
        header_path.write_text(json.dumps(header, indent=2))
        payload_path.write_bytes(payload)
    except OSError as e:
        logger.error(f"Failed to write {header_path}: {str(e)}")
        raise StorageError(f"cannot write {header_path}: {e}") from e


def load_cube(header_path):
    header = _read_header(header_path, CUBE_DTYPE)
    if header.get("order") != "bsq":
        raise FormatError(f"unsupported band order {header.get('order')!r}")
    height, width, bands = _header_dims(header, header_path, ("height", "width", "bands"))
    payload = _read_payload(header_path, "<f4", height * width * bands)
    values = payload.reshape(bands, height, width).transpose(1, 2, 0)
    if not np.isfinite(values).all():
        raise FormatError(f"{header_path} contains non-finite values")
    cube = HsiCube(values.astype(np.float32))
    logger.info(f"Loaded cube {header_path}: {height}x{width}x{bands}")
    return cube


def save_cube(cube, path):
    header = {
        "format_version": FORMAT_VERSION,
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "dtype": CUBE_DTYPE,
        "order": "bsq",
    }
    _write(path, header, cube.values.transpose(2, 0, 1).astype("<f4").tobytes())
    logger.info(f"Saved cube {path}")


def load_labels(header_path):
    header = _read_header(header_path, LABEL_DTYPE)
    height, width = _header_dims(header, header_path, ("height", "width"))
    payload = _read_payload(header_path, "u1", height * width)
    return LabelGrid(payload.reshape(height, width).copy(), header.get("class_names"))


def save_labels(labels, path):
    header = {
        "format_version": FORMAT_VERSION,
        "height": labels.height,
        "width": labels.width,
        "dtype": LABEL_DTYPE,
        "order": "row-major",
        "class_names": labels.class_names,
    }
    _write(path, header, labels.labels.astype(np.uint8).tobytes())


def save_split(split, path):
    path = Path(path)
    document = {
        "format_version": FORMAT_VERSION,
        "seed": split.seed,
        "per_class_train": split.per_class_train,
        "train_percent": split.train_percent,
        "train": split.train.tolist(),
        "test": split.test.tolist(),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document))
    except OSError as e:
        logger.error(f"Failed to write split manifest {path}: {str(e)}")
        raise StorageError(f"cannot write split manifest {path}: {e}") from e


def load_split(path):
    try:
        document = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Failed to read split manifest {path}: {str(e)}")
        raise FormatError(f"cannot read split manifest {path}: {e}") from e
    if not isinstance(document, dict):
        raise FormatError(f"split manifest {path} must hold a JSON object")
    if document.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unknown format_version {document.get('format_version')!r} in {path}")
    try:
        return SplitManifest(
            seed=document["seed"],
            per_class_train=document.get("per_class_train"),
            train=document["train"],
            test=document["test"],
            train_percent=document.get("train_percent"),
        )
    except (KeyError, TypeError, ValueError) as e:
        logger.error(f"Failed to parse split manifest {path}: {str(e)}")
        raise FormatError(f"malformed split manifest {path}: {e!r}") from e


def normalize(cube, stats_source):
    return Normalizer.fit(cube, stats_source).apply(cube)


def _check_window(window):
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"spatial window must be a positive odd number, got {window}")


def _fill_patch(values, row, col, window, out):
    height, width = values.shape[:2]
    if not (0 <= row < height):
        raise ShapeError(f"row {row} outside image of height {height}", axis="height")
    if not (0 <= col < width):
        raise ShapeError(f"column {col} outside image of width {width}", axis="width")
    top, left = row - window // 2, col - window // 2
    r0, r1 = max(top, 0), min(top + window, height)
    c0, c1 = max(left, 0), min(left + window, width)
    out[r0 - top:r1 - top, c0 - left:c1 - left] = values[r0:r1, c0:c1]


def extract_patch(cube, row, col, window=7):
    """(1, 1, window, window, S) neighborhood centered on (row, col), zero outside the image."""
    _check_window(window)
    patch = np.zeros((1, 1, window, window, cube.bands), dtype=np.float32)
    _fill_patch(cube.values, row, col, window, patch[0, 0])
    return patch


def extract_patches(cube, coords, window=7):
    _check_window(window)
    coords = np.asarray(coords, dtype=np.int64)
    if coords.size == 0:
        coords = coords.reshape(0, 2)
    patches = np.zeros((len(coords), 1, window, window, cube.bands), dtype=np.float32)
    for i, (row, col) in enumerate(coords[:, :2]):
        _fill_patch(cube.values, int(row), int(col), window, patches[i, 0])
    return patches


def class_counts(labels):
    return {cls: int((labels.labels == cls).sum()) for cls in range(1, labels.num_classes + 1)}


def stratified_split(labels, per_class_train=None, seed=0, train_percent=None):
    """
    Draw a fixed number (or a percentage, floored, at least one) of training
    pixels per class; every other labeled pixel of the class goes to test.
    """
    if (per_class_train is None) == (train_percent is None):
        raise ConfigError("give exactly one of per_class_train and train_percent")
    if per_class_train is not None and per_class_train < 1:
        raise ConfigError(f"per_class_train must be >= 1, got {per_class_train}")
    if train_percent is not None and not (0 < train_percent <= 100):
        raise ConfigError(f"train_percent must lie in (0, 100], got {train_percent}")

    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for cls in range(1, labels.num_classes + 1):
        coords = np.argwhere(labels.labels == cls)
        size = len(coords)
        if per_class_train is not None:
            wanted = per_class_train
        else:
            wanted = max(1, math.floor(train_percent * size / 100))
        if size < wanted:
            raise SplitError(
                f"{labels.class_name(cls)} has {size} labeled pixels, {wanted} training pixels requested"
            )
        order = rng.permutation(size)
        chosen, rest = np.sort(order[:wanted]), np.sort(order[wanted:])
        train_parts.append(np.column_stack([coords[chosen], np.full(len(chosen), cls)]))
        test_parts.append(np.column_stack([coords[rest], np.full(len(rest), cls)]))

    split = SplitManifest(
        seed=seed,
        per_class_train=per_class_train,
        train=np.concatenate(train_parts) if train_parts else np.empty((0, 3)),
        test=np.concatenate(test_parts) if test_parts else np.empty((0, 3)),
        train_percent=train_percent,
    )
    logger.info(f"Split {labels.num_classes} classes: {len(split.train)} train / {len(split.test)} test pixels")
    return split


def check_split(labels, split):
    """Raise SplitError unless every manifest pixel carries the class the labels give it."""
    for name, part in (("train", split.train), ("test", split.test)):
        if len(part) == 0:
            continue
        rows, cols, classes = part[:, 0], part[:, 1], part[:, 2]
        inside = (rows >= 0) & (rows < labels.height) & (cols >= 0) & (cols < labels.width)
        if not inside.all():
            raise SplitError(f"{name} set references pixels outside the {labels.height}x{labels.width} grid")
        if (labels.labels[rows, cols] != classes).any():
            raise SplitError(f"{name} set disagrees with the label grid")
    train_keys = set(map(tuple, split.train[:, :2].tolist()))
    if any(tuple(p) in train_keys for p in split.test[:, :2].tolist()):
        raise SplitError("train and test sets overlap")
