"""
Confusion-matrix statistics: overall accuracy, per-class accuracy and
Cohen's kappa, plus report and classification-map output.

All statistics are computed from integer counts in 64-bit arithmetic.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DimensionMismatchError, FormatError, LabelRangeError, MetricError, StorageError

logger = logging.getLogger(__name__)

# RGB per class 1..9; class 0 (unlabeled) is black, classes past 9 wrap around.
PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (128, 128, 128),
)
UNLABELED_RGB = (0, 0, 0)


@dataclass
class ConfusionMatrix:
    """counts[i, j] = pixels of true class i+1 predicted as class j+1."""

    counts: np.ndarray
    class_names: list = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise DimensionMismatchError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise MetricError("confusion matrix entries must be non-negative")

    @classmethod
    def zeros(cls, num_classes, class_names=None):
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64), class_names)

    @classmethod
    def from_predictions(cls, truth, predicted, num_classes, class_names=None):
        matrix = cls.zeros(num_classes, class_names)
        matrix.add(truth, predicted)
        return matrix

    def add(self, truth, predicted):
        truth = np.asarray(truth, dtype=np.int64).ravel()
        predicted = np.asarray(predicted, dtype=np.int64).ravel()
        if truth.shape != predicted.shape:
            raise DimensionMismatchError(f"{truth.size} true labels for {predicted.size} predictions")
        for name, values in (("true", truth), ("predicted", predicted)):
            if values.size and (values.min() < 1 or values.max() > self.num_classes):
                raise LabelRangeError(f"{name} classes must lie in [1, {self.num_classes}]")
        np.add.at(self.counts, (truth - 1, predicted - 1), 1)
        return self

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def trace(self):
        return int(np.trace(self.counts))

    @property
    def row_sums(self):
        return self.counts.sum(axis=1)

    @property
    def col_sums(self):
        return self.counts.sum(axis=0)


def _require_total(m):
    if m.total <= 0:
        raise MetricError("statistics need a confusion matrix with at least one pixel")
    return m.total


def overall_accuracy(m):
    return m.trace / _require_total(m)


def per_class_accuracy(m):
    """Diagonal over row sums; classes with an empty row come back as NaN (undefined)."""
    rows = m.row_sums
    diag = np.diag(m.counts).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, diag / np.where(rows > 0, rows, 1), np.nan)


def kappa(m):
    """Cohen's kappa (p_o - p_e) / (1 - p_e)."""
    total = _require_total(m)
    agreement = sum(int(r) * int(c) for r, c in zip(m.row_sums, m.col_sums))
    p_o = m.trace / total
    p_e = agreement / (total * total)
    if p_e == 1:
        raise MetricError("kappa is undefined when chance agreement is 1")
    return (p_o - p_e) / (1 - p_e)


def build_report(m, history=None):
    report = {
        "class_names": m.class_names,
        "matrix": m.counts.tolist(),
        "total": m.total,
        "overall_accuracy": overall_accuracy(m),
        "per_class_accuracy": [None if math.isnan(a) else float(a) for a in per_class_accuracy(m)],
    }
    try:
        report["kappa"] = kappa(m)
    except MetricError as e:
        logger.warning(f"Kappa left empty: {str(e)}")
        report["kappa"] = None
    if history is not None:
        report["history"] = list(history)
    return report


def write_report(m, out_path, history=None, class_map=None, map_path=None):
    """Write the JSON report, and the PPM map next to it when a class grid is given."""
    out_path = Path(out_path)
    report = build_report(m, history)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(report, indent=2))
    except OSError as e:
        logger.error(f"Failed to write report {out_path}: {str(e)}")
        raise StorageError(f"cannot write report {out_path}: {e}") from e
    logger.info(
        f"Report written to {out_path}: OA={report['overall_accuracy']:.4f} kappa={report['kappa']}"
    )
    if class_map is not None:
        render_map(class_map, map_path or out_path.with_suffix(".ppm"))
    return report


def load_report(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Failed to read report {path}: {str(e)}")
        raise FormatError(f"cannot read report {path}: {e}") from e


def render_map(grid, path):
    """Binary PPM (P6), one pixel per grid cell, fixed palette."""
    grid = np.asarray(grid, dtype=np.int64)
    if grid.ndim != 2:
        raise DimensionMismatchError(f"class map must be 2-d, got {grid.shape}")
    if grid.size and grid.min() < 0:
        raise LabelRangeError("class map holds negative classes")
    colors = np.asarray((UNLABELED_RGB,) + PALETTE, dtype=np.uint8)
    index = np.where(grid == 0, 0, (grid - 1) % len(PALETTE) + 1)
    height, width = grid.shape
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(f"P6\n{width} {height}\n255\n".encode("ascii") + colors[index].tobytes())
    except OSError as e:
        logger.error(f"Failed to write classification map {path}: {str(e)}")
        raise StorageError(f"cannot write classification map {path}: {e}") from e
    logger.info(f"Classification map written to {path}")
    return path
