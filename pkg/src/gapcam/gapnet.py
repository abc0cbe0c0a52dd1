"""Small convolutional classifiers ending in a global pooling layer and a
bias-free softmax over pooled unit activations.

The head convolution's post-ReLU output ("unit maps") is kept in every
forward trace, because projecting the classifier weights back onto those maps
is what the rest of the package is about. Networks are plain parameter dicts
plus a config; all functions here are pure (they return new nets rather than
mutating).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn


class ConfigError(ValueError):
    """An architecture descriptor is malformed or over-downsampled."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss."""


LayerSpec = tuple  # ("conv", channels) | ("relu",) | ("pool",)

DEFAULT_BACKBONE: tuple[LayerSpec, ...] = (
    ("conv", 8),
    ("relu",),
    ("pool",),
    ("conv", 16),
    ("relu",),
    ("pool",),
)


@dataclass(frozen=True)
class GapNetConfig:
    """Architecture descriptor.

    Backbone convs are 3x3, stride 1, pad 1 (spatial-size preserving); pools
    are 2x2/stride-2 max. The head conv (3x3, stride 1, pad 1) produces
    ``units`` maps, followed by ReLU when ``head_relu`` is set, then global
    average or max pooling and a bias-free linear classifier.
    """

    input_hw: tuple[int, int] = (64, 64)
    in_channels: int = 1
    backbone: tuple[LayerSpec, ...] = DEFAULT_BACKBONE
    units: int = 32
    classes: int = 5
    pooling: str = "gap"
    head_relu: bool = True

    def __post_init__(self) -> None:
        if self.pooling not in ("gap", "gmp"):
            raise ConfigError(f"pooling must be 'gap' or 'gmp', got {self.pooling!r}")
        if self.units < 1 or self.classes < 2:
            raise ConfigError(f"need units >= 1 and classes >= 2, got {self.units}/{self.classes}")
        for spec in self.backbone:
            if spec[0] == "conv":
                if len(spec) != 2 or int(spec[1]) < 1:
                    raise ConfigError(f"bad conv spec {spec!r}")
            elif spec[0] in ("relu", "pool"):
                if len(spec) != 1:
                    raise ConfigError(f"bad layer spec {spec!r}")
            else:
                raise ConfigError(f"unknown layer kind {spec[0]!r}")


def mapping_resolution(config: GapNetConfig) -> tuple[int, int]:
    """Spatial size of the head conv output for this config.

    Convs preserve spatial size, each pool halves it, and the floor for
    usable localization is 4x4. Pools on odd sizes are rejected outright
    rather than silently truncating.
    """
    h, w = config.input_hw
    for spec in config.backbone:
        if spec[0] == "pool":
            if h % 2 or w % 2:
                raise ConfigError(f"pool on odd spatial size {h}x{w}")
            h, w = h // 2, w // 2
    if h < 4 or w < 4:
        raise ConfigError(
            f"mapping resolution {h}x{w} below the 4x4 floor; remove pooling stages"
        )
    return h, w


@dataclass
class GapNet:
    """A built network: config, mapping resolution, and named parameters.

    Parameter names follow ``conv{i}.weights`` / ``conv{i}.bias`` for the
    i-th backbone conv, ``head.weights`` / ``head.bias`` for the head conv,
    and ``classifier.weights`` (C x K, biasless) for the linear layer.
    """

    config: GapNetConfig
    mapping_hw: tuple[int, int]
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def classifier_weights(self) -> np.ndarray:
        return self.params["classifier.weights"]

    def astype(self, dtype) -> "GapNet":
        return GapNet(
            self.config, self.mapping_hw, {k: v.astype(dtype) for k, v in self.params.items()}
        )

    def copy(self) -> "GapNet":
        return GapNet(self.config, self.mapping_hw, {k: v.copy() for k, v in self.params.items()})


@dataclass
class ForwardTrace:
    """Everything a forward pass exposes: the post-ReLU unit maps (K x h x w),
    their pooled values (K), the classifier logits (C) and softmax probs (C).
    Batched input gives each field a leading N axis."""

    feature_maps: np.ndarray
    pooled: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def build_gapnet(config: GapNetConfig, seed: int = 0) -> GapNet:
    """Initialize a network: fan-in-scaled uniform weights, zero biases, all
    draws from one seeded generator in layer order."""
    hw = mapping_resolution(config)
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    c_prev = config.in_channels
    conv_idx = 0
    for spec in config.backbone:
        if spec[0] == "conv":
            c_out = int(spec[1])
            params[f"conv{conv_idx}.weights"] = _uniform_fan_in(
                rng, (c_out, c_prev, 3, 3), c_prev * 9
            )
            params[f"conv{conv_idx}.bias"] = np.zeros(c_out, dtype=np.float32)
            c_prev = c_out
            conv_idx += 1
    params["head.weights"] = _uniform_fan_in(rng, (config.units, c_prev, 3, 3), c_prev * 9)
    params["head.bias"] = np.zeros(config.units, dtype=np.float32)
    params["classifier.weights"] = _uniform_fan_in(
        rng, (config.classes, config.units), config.units
    )
    return GapNet(config, hw, params)


def _forward_stack(net: GapNet, xb: np.ndarray) -> tuple[list[tuple], np.ndarray]:
    """Run backbone + head conv + optional ReLU on a batch, recording
    (kind, layer input, extras) tuples needed for backprop. Returns the
    cache list and the final K-map activations."""
    cache: list[tuple] = []
    cur = xb
    conv_idx = 0
    for spec in net.config.backbone:
        if spec[0] == "conv":
            name = f"conv{conv_idx}"
            w = net.params[f"{name}.weights"]
            y, cols, _, _ = nn._conv2d_forward_cols(cur, w, net.params[f"{name}.bias"], 1, 1)
            cache.append(("conv", cur, name, cols))
            cur = y
            conv_idx += 1
        elif spec[0] == "relu":
            cache.append(("relu", cur, None, None))
            cur = nn.relu_forward(cur)
        else:
            cache.append(("pool", cur, None, None))
            cur = nn.maxpool2x2_forward(cur)
    w = net.params["head.weights"]
    y, cols, _, _ = nn._conv2d_forward_cols(cur, w, net.params["head.bias"], 1, 1)
    cache.append(("conv", cur, "head", cols))
    cur = y
    if net.config.head_relu:
        cache.append(("relu", cur, None, None))
        cur = nn.relu_forward(cur)
    return cache, cur


def _backward_stack(net: GapNet, cache: list[tuple], dmaps: np.ndarray) -> dict[str, np.ndarray]:
    """Backprop through the recorded stack; returns parameter gradients plus
    the input-image gradient under key ``__input__``."""
    grads: dict[str, np.ndarray] = {}
    d = dmaps
    for kind, layer_in, name, cols in reversed(cache):
        if kind == "conv":
            w = net.params[f"{name}.weights"]
            dw, db, d = nn._conv2d_backward_cols(cols, layer_in.shape, w, 1, 1, d)
            grads[f"{name}.weights"] = dw
            grads[f"{name}.bias"] = db
        elif kind == "relu":
            d = nn.relu_backward(layer_in, d)
        else:
            d = nn.maxpool2x2_backward(layer_in, d)
    grads["__input__"] = d
    return grads


def _pool_maps(maps: np.ndarray, pooling: str) -> np.ndarray:
    return nn.gap_forward(maps) if pooling == "gap" else nn.gmp_forward(maps)


def forward(net: GapNet, image: np.ndarray) -> ForwardTrace:
    """Forward pass keeping the unit maps. Accepts (C, H, W) or (N, C, H, W)."""
    xb, single = nn._as_batch(np.asarray(image), 3)
    h, w = net.config.input_hw
    if xb.shape[1:] != (net.config.in_channels, h, w):
        raise nn.ShapeError(
            f"expected input {(net.config.in_channels, h, w)}, got {image.shape}"
        )
    _, maps = _forward_stack(net, xb)
    pooled = _pool_maps(maps, net.config.pooling)
    logits, probs = nn.linear_softmax_forward(pooled, net.classifier_weights)
    if single:
        return ForwardTrace(maps[0], pooled[0], logits[0], probs[0])
    return ForwardTrace(maps, pooled, logits, probs)


def _batch_loss_and_grads(
    net: GapNet, xb: np.ndarray, yb: np.ndarray
) -> tuple[float, float, dict[str, np.ndarray]]:
    """Mean cross-entropy over a batch with full parameter gradients."""
    cache, maps = _forward_stack(net, xb)
    pooled = _pool_maps(maps, net.config.pooling)
    logits, probs = nn.linear_softmax_forward(pooled, net.classifier_weights)
    n = xb.shape[0]
    idx = np.arange(n)
    loss = -float(np.log(np.maximum(probs[idx, yb], 1e-30)).mean())
    acc = float((logits.argmax(axis=1) == yb).mean())

    dlogits = probs.copy()
    dlogits[idx, yb] -= 1.0
    dlogits /= n
    glin = nn.linear_backward(pooled, net.classifier_weights, dlogits)
    dpooled = glin.input_grad
    if net.config.pooling == "gap":
        dmaps = nn.gap_backward(maps, dpooled)
    else:
        dmaps = nn.gmp_backward(maps, dpooled)
    grads = _backward_stack(net, cache, dmaps)
    del grads["__input__"]
    grads["classifier.weights"] = glin.param_grads["weights"]
    return loss, acc, grads


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    lr: float


def train(
    net: GapNet,
    images: np.ndarray,
    labels: np.ndarray,
    *,
    epochs: int = 15,
    seed: int = 0,
    batch_size: int = 16,
    lr: float = 0.05,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    lr_decay: float = 0.1,
) -> tuple[GapNet, list[EpochStats]]:
    """SGD-with-momentum training, deterministic given the seed.

    The learning rate drops by ``lr_decay`` once, two-thirds of the way
    through. Per-epoch loss/accuracy are measured on the shuffled training
    stream (before each update). Raises TrainingDiverged on non-finite loss.
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    if images.ndim != 4:
        raise nn.ShapeError(f"expected (N, C, H, W) images, got {images.shape}")
    if len(images) == 0:
        raise ValueError("empty dataset")
    if labels.shape != (len(images),):
        raise nn.ShapeError("labels must be one integer per image")
    if labels.min() < 0 or labels.max() >= net.config.classes:
        raise ValueError(f"labels must lie in [0, {net.config.classes})")

    work = net.copy()
    velocities: dict[str, np.ndarray] | None = None
    rng = np.random.default_rng(seed)
    decay_at = (2 * epochs) // 3
    history: list[EpochStats] = []
    for epoch in range(epochs):
        cur_lr = lr * lr_decay if epoch >= decay_at else lr
        order = rng.permutation(len(images))
        losses: list[float] = []
        accs: list[float] = []
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            loss, acc, grads = _batch_loss_and_grads(work, images[batch], labels[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, sample {start}")
            losses.append(loss * len(batch))
            accs.append(acc * len(batch))
            work.params, velocities = nn.sgd_step(
                work.params, grads, velocities, cur_lr, momentum, weight_decay
            )
        history.append(
            EpochStats(epoch, sum(losses) / len(order), sum(accs) / len(order), cur_lr)
        )
    return work, history


def swap_head(net: GapNet, pooling: str, seed: int = 0) -> GapNet:
    """Same backbone and head conv, new pooling kind, freshly initialized
    classifier weights (pooled statistics differ across kinds, so the old
    rows would be meaningless)."""
    config = replace(net.config, pooling=pooling)
    out = GapNet(config, net.mapping_hw, {k: v.copy() for k, v in net.params.items()})
    rng = np.random.default_rng(seed)
    out.params["classifier.weights"] = _uniform_fan_in(
        rng, (config.classes, config.units), config.units
    )
    return out


# ---------------------------------------------------------------------------
# architecture descriptor text form (checkpoint header)
# ---------------------------------------------------------------------------

_DESCRIPTOR_VERSION = "gapnet/1"


def describe_config(config: GapNetConfig) -> str:
    """Versioned key=value text form of a config, newline-terminated."""
    parts = []
    for spec in config.backbone:
        parts.append(f"conv{spec[1]}" if spec[0] == "conv" else spec[0])
    lines = [
        _DESCRIPTOR_VERSION,
        f"input_hw={config.input_hw[0]},{config.input_hw[1]}",
        f"in_channels={config.in_channels}",
        "backbone=" + ",".join(parts),
        f"units={config.units}",
        f"classes={config.classes}",
        f"pooling={config.pooling}",
        f"head_relu={int(config.head_relu)}",
    ]
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> GapNetConfig:
    """Inverse of describe_config. Raises ConfigError on malformed input."""
    lines = [ln for ln in text.strip().split("\n") if ln]
    if not lines or lines[0] != _DESCRIPTOR_VERSION:
        raise ConfigError(f"unsupported descriptor version: {lines[0] if lines else '<empty>'}")
    kv: dict[str, str] = {}
    for ln in lines[1:]:
        if "=" not in ln:
            raise ConfigError(f"malformed descriptor line: {ln!r}")
        key, val = ln.split("=", 1)
        kv[key] = val
    try:
        hw = tuple(int(v) for v in kv["input_hw"].split(","))
        backbone = []
        for part in kv["backbone"].split(","):
            if part.startswith("conv"):
                backbone.append(("conv", int(part[4:])))
            elif part in ("relu", "pool"):
                backbone.append((part,))
            else:
                raise ConfigError(f"unknown backbone element {part!r}")
        return GapNetConfig(
            input_hw=(hw[0], hw[1]),
            in_channels=int(kv["in_channels"]),
            backbone=tuple(backbone),
            units=int(kv["units"]),
            classes=int(kv["classes"]),
            pooling=kv["pooling"],
            head_relu=bool(int(kv["head_relu"])),
        )
    except (KeyError, ValueError, IndexError) as exc:
        raise ConfigError(f"bad descriptor: {exc}") from exc
