"""
Residual 3D CNN over 7x7xS spectral-spatial patches.

Four blocks, each a main 3D convolution followed by ReLU, a 1x1x1
convolution, and an identity skip from the ReLU output to the 1x1x1 output.
Blocks 1 and 2 end with a 1x1x3 average pool. The flattened output of block 4
feeds a linear classifier. The spectral axis is the convolution depth axis
and the input has a single channel.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .data_io import Normalizer
from .exceptions import (
    CheckpointError,
    ConfigError,
    DimensionMismatchError,
    MissingCacheError,
    ShapeError,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
CLASSIFIER = "FC"

# Gains on the fan-in uniform limit. With full-scale 1x1x1 convs the four
# residual sums grow the features about threefold each, and the logits start
# far above ln C.
PROJECTION_INIT_GAIN = 0.1
CLASSIFIER_INIT_GAIN = 0.1


@dataclass(frozen=True)
class BlockLayout:
    name: str
    kernels: int
    kernel: tuple
    stride: tuple
    padding: tuple
    pooled: bool

    @property
    def proj_name(self):
        return f"{self.name}_1"

    @property
    def pool_name(self):
        return self.name.replace("Conv", "Pool")


POOL_KERNEL = (1, 1, 3)
POOL_STRIDE = (1, 1, 2)
POOL_PADDING = (0, 0, 1)

ARCHITECTURE = (
    BlockLayout("Conv1", 20, (3, 3, 3), (1, 1, 1), (0, 0, 0), pooled=True),
    BlockLayout("Conv2", 35, (3, 3, 3), (1, 1, 1), (0, 0, 0), pooled=True),
    BlockLayout("Conv3", 35, (1, 1, 3), (1, 1, 1), (0, 0, 1), pooled=False),
    BlockLayout("Conv4", 35, (1, 1, 2), (1, 1, 2), (0, 0, 1), pooled=False),
)

CONV_LAYERS = tuple(name for layout in ARCHITECTURE for name in (layout.name, layout.proj_name))
LAYER_ORDER = CONV_LAYERS + (CLASSIFIER,)


@dataclass(frozen=True)
class ModelConfig:
    spectral_depth: int
    num_classes: int
    spatial_window: int = 7

    def validate(self):
        if self.spectral_depth < 1:
            raise ConfigError(f"spectral depth must be >= 1, got {self.spectral_depth}")
        if self.num_classes < 1:
            raise ConfigError(f"number of classes must be >= 1, got {self.num_classes}")
        if self.spatial_window < 1 or self.spatial_window % 2 == 0:
            raise ConfigError(f"spatial window must be a positive odd number, got {self.spatial_window}")
        return self

    def to_dict(self):
        return {
            "spectral_depth": self.spectral_depth,
            "num_classes": self.num_classes,
            "spatial_window": self.spatial_window,
        }


@dataclass
class ShapeTrace:
    """Per-stage (channels, height, width, depth) in network order."""

    stages: list

    @property
    def final(self):
        return self.stages[-1][1]

    @property
    def features(self):
        return int(np.prod(self.final))

    def dims(self, stage):
        return dict(self.stages)[stage]


def shape_trace(config):
    config.validate()
    dims = (1, config.spatial_window, config.spatial_window, config.spectral_depth)
    stages = [("Input", dims)]
    for layout in ARCHITECTURE:
        try:
            spatial = tc.output_dims(dims[1:], layout.kernel, layout.stride, layout.padding)
        except ShapeError as e:
            raise ShapeError(str(e), axis=e.axis, stage=layout.name) from e
        dims = (layout.kernels,) + spatial
        stages.append((layout.name, dims))
        stages.append((layout.proj_name, dims))
        if layout.pooled:
            try:
                spatial = tc.output_dims(dims[1:], POOL_KERNEL, POOL_STRIDE, POOL_PADDING)
            except ShapeError as e:
                raise ShapeError(str(e), axis=e.axis, stage=layout.pool_name) from e
            dims = (layout.kernels,) + spatial
            stages.append((layout.pool_name, dims))
    return ShapeTrace(stages)


@dataclass
class ResidualBlockSpec:
    name: str
    main_conv: tc.Conv3dSpec
    proj_conv: tc.Conv3dSpec
    pool: tc.Pool3dSpec = None

    def __post_init__(self):
        proj = self.proj_conv
        if proj.kernel != (1, 1, 1) or proj.stride != (1, 1, 1) or proj.padding != (0, 0, 0):
            raise ShapeError(f"{self.name}_1 must be a 1x1x1 convolution with unit stride and no padding")
        if not (proj.in_channels == proj.out_channels == self.main_conv.out_channels):
            raise tc.ChannelMismatchError(
                f"{self.name}_1 maps {proj.in_channels}->{proj.out_channels} channels, "
                f"the skip needs {self.main_conv.out_channels}->{self.main_conv.out_channels}"
            )

    @property
    def proj_name(self):
        return f"{self.name}_1"

    def astype(self, dtype):
        return ResidualBlockSpec(self.name, self.main_conv.astype(dtype), self.proj_conv.astype(dtype), self.pool)


@dataclass
class ParameterLedger:
    per_layer: dict
    conv_total: int
    classifier: int

    @property
    def total(self):
        return self.conv_total + self.classifier


class Model:
    def __init__(self, config, blocks, classifier, rng_seed=None, normalizer=None, class_names=None):
        self.config = config
        self.blocks = list(blocks)
        self.classifier = classifier
        self.rng_seed = rng_seed
        self.normalizer = normalizer
        self.class_names = class_names
        # ablation switch; the classifier is trained with the skip on
        self.use_skip = True

    def layers(self):
        layers = {}
        for block in self.blocks:
            layers[block.name] = block.main_conv
            layers[block.proj_name] = block.proj_conv
        layers[CLASSIFIER] = self.classifier
        return layers

    def parameters(self):
        """{(layer, "weight" | "bias"): array} in checkpoint order; arrays are live."""
        params = {}
        for name, spec in self.layers().items():
            params[(name, "weight")] = spec.weights
            params[(name, "bias")] = spec.bias
        return params

    def astype(self, dtype):
        model = Model(
            self.config,
            [block.astype(dtype) for block in self.blocks],
            self.classifier.astype(dtype),
            self.rng_seed,
            self.normalizer,
            self.class_names,
        )
        model.use_skip = self.use_skip
        return model


def _uniform(rng, shape, fan_in, gain=1.0):
    limit = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(tc.STORAGE_DTYPE)


def _blank_blocks():
    blocks = []
    in_channels = 1
    for layout in ARCHITECTURE:
        main = tc.Conv3dSpec.zeros(layout.kernels, in_channels, layout.kernel, layout.stride, layout.padding)
        proj = tc.Conv3dSpec.zeros(layout.kernels, layout.kernels, (1, 1, 1))
        pool = tc.Pool3dSpec(POOL_KERNEL, POOL_STRIDE, POOL_PADDING) if layout.pooled else None
        blocks.append(ResidualBlockSpec(layout.name, main, proj, pool))
        in_channels = layout.kernels
    return blocks


def build_model(config, rng_seed=0):
    """
    Fan-in uniform weights in +-sqrt(6 / fan_in), zero biases, drawn in layer
    order. The 1x1x1 convs and the classifier use a tenth of that limit.
    """
    trace = shape_trace(config)
    rng = np.random.default_rng(rng_seed)
    blocks = _blank_blocks()
    for block in blocks:
        block.main_conv.weights[...] = _uniform(rng, block.main_conv.weights.shape, block.main_conv.fan_in)
        block.proj_conv.weights[...] = _uniform(
            rng, block.proj_conv.weights.shape, block.proj_conv.fan_in, PROJECTION_INIT_GAIN
        )
    classifier = tc.LinearSpec(
        _uniform(rng, (config.num_classes, trace.features), trace.features, CLASSIFIER_INIT_GAIN),
        np.zeros(config.num_classes, dtype=tc.STORAGE_DTYPE),
    )
    model = Model(config, blocks, classifier, rng_seed=rng_seed)
    logger.info(
        f"Built model S={config.spectral_depth} C={config.num_classes} "
        f"window={config.spatial_window}: {param_count(model).total} parameters"
    )
    return model


@dataclass
class BlockCache:
    x: np.ndarray
    pre_activation: np.ndarray
    activation: np.ndarray
    summed_dims: tuple


@dataclass
class ForwardCache:
    blocks: list = field(default_factory=list)
    block_out_dims: tuple = None
    features: np.ndarray = None


def forward_block(block, x, use_skip=True):
    pre = tc.conv3d_forward(x, block.main_conv)
    act = tc.relu(pre)
    summed = tc.conv3d_forward(act, block.proj_conv)
    if use_skip:
        summed = summed + act
    out = tc.avgpool3d_forward(summed, block.pool) if block.pool is not None else summed
    return out, BlockCache(x, pre, act, summed.shape)


def backward_block(block, cache, upstream, use_skip=True, input_grad=True):
    if block.pool is not None:
        upstream = tc.avgpool3d_backward(cache.summed_dims, block.pool, upstream)
    grad_act, proj_w, proj_b = tc.conv3d_backward(cache.activation, block.proj_conv, upstream)
    if use_skip:
        grad_act = grad_act + upstream
    grad_pre = tc.relu_backward(cache.pre_activation, grad_act)
    grad_x, main_w, main_b = tc.conv3d_backward(cache.x, block.main_conv, grad_pre, input_grad=input_grad)
    grads = {
        (block.name, "weight"): main_w,
        (block.name, "bias"): main_b,
        (block.proj_name, "weight"): proj_w,
        (block.proj_name, "bias"): proj_b,
    }
    return grad_x, grads


def forward(model, x, keep_intermediates=False):
    """Logits (n, C) for a (n, 1, window, window, S) batch, plus the cache backward needs."""
    tc.check_tensor5(x, "network input")
    window, depth = model.config.spatial_window, model.config.spectral_depth
    expected = (1, window, window, depth)
    if x.shape[1:] != expected:
        raise DimensionMismatchError(f"network expects (n, {', '.join(map(str, expected))}), got {x.shape}")

    cache = ForwardCache() if keep_intermediates else None
    h = x
    for block in model.blocks:
        h, block_cache = forward_block(block, h, model.use_skip)
        if cache is not None:
            cache.blocks.append(block_cache)
    features = h.reshape(h.shape[0], -1)
    logits = tc.linear_forward(features, model.classifier)
    if cache is not None:
        cache.block_out_dims = h.shape
        cache.features = features
    return logits, cache


def backward(model, cache, grad_logits):
    """Gradients for every parameter, keyed like Model.parameters()."""
    if cache is None or cache.features is None:
        raise MissingCacheError("backward needs the cache from forward(..., keep_intermediates=True)")
    grad_features, fc_w, fc_b = tc.linear_backward(cache.features, model.classifier, grad_logits)
    grads = {(CLASSIFIER, "weight"): fc_w, (CLASSIFIER, "bias"): fc_b}
    upstream = grad_features.reshape(cache.block_out_dims)
    for index in reversed(range(len(model.blocks))):
        upstream, block_grads = backward_block(
            model.blocks[index], cache.blocks[index], upstream, model.use_skip, input_grad=index > 0
        )
        grads.update(block_grads)
    return {key: grads[key] for key in model.parameters()}


def param_count(model):
    per_layer = {name: spec.parameter_count for name, spec in model.layers().items()}
    classifier = per_layer[CLASSIFIER]
    conv_total = sum(count for name, count in per_layer.items() if name != CLASSIFIER)
    return ParameterLedger(per_layer, conv_total, classifier)


def _blob_path(manifest_path):
    manifest_path = Path(manifest_path)
    if manifest_path.suffix != ".json":
        raise CheckpointError(f"checkpoint manifest must end in .json, got {manifest_path}")
    return manifest_path.with_suffix(".raw")


def save_checkpoint(model, path):
    """JSON manifest plus a float32 little-endian blob, layers in order, weights before bias."""
    path = Path(path)
    blob_path = _blob_path(path)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "layer_order": list(LAYER_ORDER),
        "shapes": {
            name: {"weight": list(spec.weights.shape), "bias": list(spec.bias.shape)}
            for name, spec in model.layers().items()
        },
        "rng_seed": model.rng_seed,
        "normalization": model.normalizer.to_dict() if model.normalizer is not None else None,
        "class_names": model.class_names,
    }
    blob = b"".join(array.astype("<f4").tobytes() for array in model.parameters().values())
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2))
        blob_path.write_bytes(blob)
    except OSError as e:
        logger.error(f"Failed to write checkpoint {path}: {str(e)}")
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Checkpoint written to {path}")


def load_checkpoint(path):
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
        blob = _blob_path(path).read_bytes()
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Failed to read checkpoint {path}: {str(e)}")
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(manifest, dict):
        raise CheckpointError(f"checkpoint manifest {path} must hold a JSON object")
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unknown checkpoint format_version {manifest.get('format_version')!r}")
    if manifest.get("layer_order") != list(LAYER_ORDER):
        raise CheckpointError(f"unexpected layer order {manifest.get('layer_order')}")

    try:
        config = ModelConfig(**manifest["config"])
        normalizer = Normalizer.from_dict(manifest["normalization"]) if manifest.get("normalization") else None
        shapes = {
            (name, kind): tuple(manifest["shapes"][name][kind]) for name in LAYER_ORDER for kind in ("weight", "bias")
        }
    except (KeyError, TypeError, ValueError) as e:
        logger.error(f"Failed to parse checkpoint manifest {path}: {str(e)}")
        raise CheckpointError(f"malformed checkpoint manifest {path}: {e!r}") from e
    trace = shape_trace(config)
    model = Model(
        config,
        _blank_blocks(),
        tc.LinearSpec(
            np.zeros((config.num_classes, trace.features), dtype=tc.STORAGE_DTYPE),
            np.zeros(config.num_classes, dtype=tc.STORAGE_DTYPE),
        ),
        rng_seed=manifest.get("rng_seed"),
        normalizer=normalizer,
        class_names=manifest.get("class_names"),
    )
    params = model.parameters()
    for (name, kind), array in params.items():
        declared = shapes[(name, kind)]
        if declared != array.shape:
            raise CheckpointError(f"{name} {kind} declared {declared}, architecture needs {array.shape}")
    total = sum(array.size for array in params.values())
    if len(blob) != 4 * total:
        raise CheckpointError(f"checkpoint blob holds {len(blob) // 4} scalars, expected {total}")
    values = np.frombuffer(blob, dtype="<f4")
    offset = 0
    for array in params.values():
        array[...] = values[offset:offset + array.size].reshape(array.shape)
        offset += array.size
    logger.info(f"Loaded checkpoint {path}")
    return model
