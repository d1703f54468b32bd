"""
SGD with momentum and coupled weight decay, the epoch loop, evaluation and
full-scene prediction.

Mini-batch gradients are computed over fixed-size shards whose results are
summed in shard order, so any worker count gives bitwise identical updates.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import network
from . import tensor_core as tc
from .data_io import Normalizer, check_split, extract_patches, save_split, stratified_split
from .exceptions import ConfigError, DimensionMismatchError, SplitError, StorageError
from .metrics import ConfusionMatrix, build_report, overall_accuracy, write_report

logger = logging.getLogger(__name__)

DEFAULT_GRAD_SHARD = 8
PREDICT_BATCH = 256


@dataclass
class OptimizerState:
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        # a zero learning rate is accepted so a run can be checked for identity
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if not (0 <= self.momentum < 1):
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    shuffle_seed: int = 0
    per_class_train: int = 200
    train_percent: float = None
    split_seed: int = 0
    log_every: int = 1
    workers: int = 1
    grad_shard: int = DEFAULT_GRAD_SHARD
    evaluate_test: bool = False

    def __post_init__(self):
        for name in ("epochs", "batch_size", "log_every", "workers", "grad_shard"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    def make_split(self, labels):
        """The stratified split for this run; a set train_percent wins over per_class_train."""
        if self.train_percent is not None:
            return stratified_split(labels, seed=self.split_seed, train_percent=self.train_percent)
        return stratified_split(labels, self.per_class_train, seed=self.split_seed)


def _is_bias(key):
    return isinstance(key, tuple) and key[-1] == "bias"


def sgd_step(params, grads, state):
    """
    In place, per element: v <- mu * v + (g + lambda * w); w <- w - eta * v.
    Bias entries skip the decay term.
    """
    for key, weights in params.items():
        if key not in grads:
            raise DimensionMismatchError(f"no gradient for parameter {key}")
        grad = grads[key]
        if grad.shape != weights.shape:
            raise DimensionMismatchError(f"gradient {grad.shape} != parameter {weights.shape} for {key}")
        velocity = state.velocity.get(key)
        if velocity is None:
            velocity = state.velocity[key] = np.zeros_like(weights)
        elif velocity.shape != weights.shape:
            raise DimensionMismatchError(f"velocity {velocity.shape} != parameter {weights.shape} for {key}")
        step = grad
        if state.weight_decay and not _is_bias(key):
            step = grad + state.weight_decay * weights
        velocity *= state.momentum
        velocity += step
        weights -= state.learning_rate * velocity
    return params, state


def _shards(count, shard_size):
    return [(start, min(start + shard_size, count)) for start in range(0, count, shard_size)]


def _map_shards(fn, shards, workers):
    if workers > 1 and len(shards) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, shards))
    return [fn(shard) for shard in shards]


def compute_gradients(model, patches, targets, workers=1, shard_size=DEFAULT_GRAD_SHARD):
    """
    Per-sample losses and mean-loss gradients for one mini-batch.

    targets are zero-based class indices.
    """
    count = len(patches)
    targets = np.asarray(targets, dtype=np.int64)

    def run(shard):
        lo, hi = shard
        logits, cache = network.forward(model, patches[lo:hi], keep_intermediates=True)
        losses, grad_logits = tc.softmax_cross_entropy(logits, targets[lo:hi])
        return losses, network.backward(model, cache, grad_logits / grad_logits.dtype.type(count))

    results = _map_shards(run, _shards(count, shard_size), workers)
    losses = np.concatenate([shard_losses for shard_losses, _ in results])
    total = {key: grad.copy() for key, grad in results[0][1].items()}
    for _, grads in results[1:]:
        for key, grad in grads.items():
            total[key] += grad
    return losses, total


def fit(model, patches, targets, config, opt, eval_fn=None, history_path=None):
    """Epoch loop over pre-extracted patches; returns the per-epoch history."""
    count = len(patches)
    if count == 0:
        raise SplitError("no training samples")
    rng = np.random.default_rng(config.shuffle_seed)
    history = []
    history_file = None
    if history_path is not None:
        history_path = Path(history_path)
        try:
            history_path.parent.mkdir(parents=True, exist_ok=True)
            history_file = history_path.open("w")
        except OSError as e:
            logger.error(f"Failed to open training history {history_path}: {str(e)}")
            raise StorageError(f"cannot write training history {history_path}: {e}") from e
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(count)
            loss_sum = 0.0
            for start in range(0, count, config.batch_size):
                batch = order[start:start + config.batch_size]
                losses, grads = compute_gradients(
                    model, patches[batch], targets[batch], config.workers, config.grad_shard
                )
                sgd_step(model.parameters(), grads, opt)
                loss_sum += float(losses.astype(np.float64).sum())
                logger.debug(f"epoch {epoch} batch {start // config.batch_size}: loss {losses.mean():.5f}")
            record = {"epoch": epoch, "mean_loss": loss_sum / count}
            if eval_fn is not None:
                record["test_overall_accuracy"] = eval_fn(model)
            history.append(record)
            if history_file is not None:
                history_file.write(json.dumps(record) + "\n")
                history_file.flush()
            if epoch % config.log_every == 0 or epoch == config.epochs:
                logger.info(f"Epoch {epoch}/{config.epochs}: {record}")
    finally:
        if history_file is not None:
            history_file.close()
    return history


def _check_model_fits(model, cube):
    if cube.bands != model.config.spectral_depth:
        raise DimensionMismatchError(
            f"model expects {model.config.spectral_depth} bands but the cube is "
            f"{cube.height}x{cube.width}x{cube.bands}"
        )


def train(model, cube, labels, split, config, opt, checkpoint_path=None, history_path=None):
    """Fit normalization on the training pixels, train, and write the checkpoint."""
    labels.check_matches(cube)
    check_split(labels, split)
    _check_model_fits(model, cube)
    if labels.num_classes > model.config.num_classes:
        raise DimensionMismatchError(
            f"labels hold {labels.num_classes} classes, model predicts {model.config.num_classes}"
        )

    model.normalizer = Normalizer.fit(cube, split)
    model.class_names = labels.class_names
    scaled = model.normalizer.apply(cube)
    patches = extract_patches(scaled, split.train[:, :2], model.config.spatial_window)
    targets = split.train[:, 2] - 1
    logger.info(
        f"Training on {len(patches)} patches for {config.epochs} epochs "
        f"(batch {config.batch_size}, lr {opt.learning_rate}, momentum {opt.momentum}, "
        f"weight decay {opt.weight_decay})"
    )

    eval_fn = None
    if config.evaluate_test and len(split.test):
        def eval_fn(m):
            return overall_accuracy(evaluate(m, cube, labels, split.test, workers=config.workers))

    history = fit(model, patches, targets, config, opt, eval_fn=eval_fn, history_path=history_path)
    if checkpoint_path is not None:
        network.save_checkpoint(model, checkpoint_path)
    return model, history


def predict_pixels(model, cube, coords, batch_size=PREDICT_BATCH, workers=1):
    """Predicted classes (1..C) at the given (row, col) pixels; ties go to the lowest class."""
    _check_model_fits(model, cube)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    scaled = model.normalizer.apply(cube) if model.normalizer is not None else cube
    window = model.config.spatial_window
    predictions = np.empty(len(coords), dtype=np.int64)

    def run(shard):
        lo, hi = shard
        logits, _ = network.forward(model, extract_patches(scaled, coords[lo:hi], window))
        return np.argmax(logits, axis=1) + 1

    shards = _shards(len(coords), batch_size)
    for (lo, hi), predicted in zip(shards, _map_shards(run, shards, workers)):
        predictions[lo:hi] = predicted
    return predictions


def evaluate(model, cube, labels, pixel_set, batch_size=PREDICT_BATCH, workers=1):
    labels.check_matches(cube)
    pixels = np.asarray(pixel_set, dtype=np.int64)
    pixels = pixels.reshape(-1, pixels.shape[-1] if pixels.size else 2)
    coords = pixels[:, :2]
    truth = labels.labels[coords[:, 0], coords[:, 1]].astype(np.int64)
    if (truth == 0).any():
        raise SplitError(f"{int((truth == 0).sum())} evaluated pixels are unlabeled")
    predicted = predict_pixels(model, cube, coords, batch_size, workers)
    return ConfusionMatrix.from_predictions(
        truth, predicted, model.config.num_classes, class_names=labels.class_names
    )


def predict_map(model, cube, batch_size=PREDICT_BATCH, workers=1):
    """Classify every pixel of the scene; returns a (P, Q) grid of classes 1..C."""
    coords = np.indices((cube.height, cube.width)).reshape(2, -1).T
    predicted = predict_pixels(model, cube, coords, batch_size, workers)
    return predicted.reshape(cube.height, cube.width).astype(np.uint8)


def sweep_training_size(cube, labels, percents, config, opt, model_seed=0, window=7, output_dir=None):
    """
    One fresh model per training percentage, each scored on the pixels its
    split leaves for testing. With `output_dir`, every run keeps its split,
    checkpoint, history and report under `train_<percent>pct/`.

    Returns rows of train_percent, train/test pixel counts, OA and kappa.
    """
    if not percents:
        raise ConfigError("no training percentages to sweep")
    rows = []
    for percent in percents:
        run_config = replace(config, per_class_train=None, train_percent=float(percent))
        split = run_config.make_split(labels)
        if len(split.test) == 0:
            raise SplitError(f"training on {percent:g}% leaves no test pixels")
        run_dir = Path(output_dir) / f"train_{percent:g}pct" if output_dir is not None else None
        if run_dir is not None:
            save_split(split, run_dir / "train.split.json")

        model = network.build_model(
            network.ModelConfig(cube.bands, labels.num_classes, window), rng_seed=model_seed
        )
        model, history = train(
            model,
            cube,
            labels,
            split,
            run_config,
            replace(opt, velocity={}),
            checkpoint_path=run_dir / "model.ckpt.json" if run_dir is not None else None,
            history_path=run_dir / "history.jsonl" if run_dir is not None else None,
        )
        matrix = evaluate(model, cube, labels, split.test, workers=config.workers)
        if run_dir is not None:
            report = write_report(matrix, run_dir / "report.json", history=history)
        else:
            report = build_report(matrix)
        rows.append({
            "train_percent": float(percent),
            "train_pixels": len(split.train),
            "test_pixels": len(split.test),
            "overall_accuracy": report["overall_accuracy"],
            "kappa": report["kappa"],
        })
        logger.info(f"Sweep {percent:g}%: OA={report['overall_accuracy']:.4f} kappa={report['kappa']}")
    return rows
