"""
AttDiCNN: local spatial feature extractor (LSFE), double self-attention
retention block (S2TLR) and local/global averaging head (G2A).

    image -> [conv -> relu -> pool] x 4 -> flatten -> fc -> fc -> dropout   (LSFE)
          -> token (B, 1, d) -> A_ST = MHA(token) -> A_TT = MHA(A_ST)        (S2TLR)
          -> W_o = (A_ST + A_TT) / 2 -> fc x 4 -> logits                     (G2A)
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from app.errors import CheckpointError, ConfigError, NonFiniteLossError, ShapeError
from app.nn import layers
from app.nn.attention import AttentionParams, multi_head_attention, multi_head_attention_backward

logger = logging.getLogger(__name__)

BLOCKS = ("LSFE", "S2TLR", "G2A")
_BLOCK_PREFIX = {"lsfe": "LSFE", "s2tlr": "S2TLR", "g2a": "G2A"}


@dataclass
class ModelConfig:
    n_classes: int = 5
    input_side: int = 128
    conv_channels: Tuple[int, ...] = (16, 32, 64, 128)
    dilations: Tuple[int, ...] = (1, 1, 2, 2)
    pool_after: Tuple[bool, ...] = (True, True, True, True)
    kernel_size: int = 2
    lsfe_fc: Tuple[int, ...] = (256, 128)
    dropout: float = 0.5
    heads: int = 3
    g2a_fc: Tuple[int, ...] = (512, 128, 64, 32)
    batch_size: int = 32
    dtype: str = "float32"
    seed: int = 13

    def __post_init__(self):
        for name in ("conv_channels", "dilations", "pool_after", "lsfe_fc", "g2a_fc"):
            setattr(self, name, tuple(getattr(self, name)))

    @property
    def d_model(self):
        return self.lsfe_fc[-1]

    @property
    def d_head(self):
        return self.d_model // self.heads

    def conv_spec(self, index):
        return layers.ConvSpec(self.kernel_size, self.kernel_size, self.conv_channels[index],
                               dilation=self.dilations[index])

    def feature_shapes(self):
        """Spatial side after every conv (and pool), ending with the flatten width."""
        side = self.input_side
        sides = []
        for i in range(len(self.conv_channels)):
            side, _ = self.conv_spec(i).output_size(side, side)
            if side < 1:
                raise ConfigError(f"Convolution {i + 1} leaves no output for input side {self.input_side}")
            if self.pool_after[i]:
                if side < 2:
                    raise ConfigError(f"Pooling after convolution {i + 1} needs a side >= 2, got {side}")
                side //= 2
            sides.append(side)
        return sides, side * side * self.conv_channels[-1]

    def validate(self):
        problems = []
        positive = {
            "model.n_classes": self.n_classes, "model.input_side": self.input_side,
            "model.kernel_size": self.kernel_size, "model.heads": self.heads,
            "model.batch_size": self.batch_size,
        }
        problems += [f"{k} must be positive (got {v})" for k, v in positive.items() if v < 1]
        for name in ("conv_channels", "dilations", "lsfe_fc", "g2a_fc"):
            values = getattr(self, name)
            if not values or min(values) < 1:
                problems.append(f"model.{name} must be non-empty and positive (got {values})")
        if not (len(self.conv_channels) == len(self.dilations) == len(self.pool_after)):
            problems.append("model.conv_channels, dilations and pool_after must have equal lengths")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"model.dropout must be in [0, 1) (got {self.dropout})")
        if self.dtype not in ("float32", "float64"):
            problems.append(f"model.dtype must be float32 or float64 (got {self.dtype})")
        if not problems:
            if self.d_head < 1:
                problems.append(f"model.heads {self.heads} exceeds the attention width {self.d_model}")
            try:
                self.feature_shapes()
            except ConfigError as e:
                problems.append(str(e))
        return problems


@dataclass
class ModelState:
    """Learnable tensors in declared order plus Adam moments."""
    config: ModelConfig
    params: Dict[str, np.ndarray]
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int = 13

    @property
    def parameter_count(self):
        return int(sum(p.size for p in self.params.values()))

    def copy(self):
        return ModelState(
            config=self.config,
            params={k: p.copy() for k, p in self.params.items()},
            m={k: p.copy() for k, p in self.m.items()},
            v={k: p.copy() for k, p in self.v.items()},
            step=self.step,
            seed=self.seed,
        )


def block_of(name):
    """LSFE, S2TLR or G2A for a parameter name."""
    return _BLOCK_PREFIX[name.split(".", 1)[0]]


def parameter_specs(config):
    """
    Declared parameter order.

    Returns:
        list: (name, shape, (fan_in, fan_out) or None for biases)
    """
    specs = []
    k = config.kernel_size
    channels_in = 1
    for i, channels in enumerate(config.conv_channels, start=1):
        fans = (k * k * channels_in, k * k * channels)
        specs.append((f"lsfe.conv{i}.kernel", (k, k, channels_in, channels), fans))
        specs.append((f"lsfe.conv{i}.bias", (channels,), None))
        channels_in = channels

    _, width = config.feature_shapes()
    for i, units in enumerate(config.lsfe_fc, start=1):
        specs.append((f"lsfe.fc{i}.weight", (width, units), (width, units)))
        specs.append((f"lsfe.fc{i}.bias", (units,), None))
        width = units

    d, h, dk = config.d_model, config.heads, config.d_head
    for block in ("mha1", "mha2"):
        prefix = f"s2tlr.{block}."
        for proj in ("W_Q", "W_K", "W_V"):
            specs.append((prefix + proj, (h, d, dk), (d, h * dk)))
        specs.append((prefix + "W_O", (h * dk, d), (h * dk, d)))
        for proj in ("b_Q", "b_K", "b_V"):
            specs.append((prefix + proj, (h, dk), None))
        specs.append((prefix + "b_O", (d,), None))

    width = d
    for i, units in enumerate(config.g2a_fc, start=1):
        specs.append((f"g2a.fc{i}.weight", (width, units), (width, units)))
        specs.append((f"g2a.fc{i}.bias", (units,), None))
        width = units
    specs.append(("g2a.out.weight", (width, config.n_classes), (width, config.n_classes)))
    specs.append(("g2a.out.bias", (config.n_classes,), None))
    return specs


def init_bound(fans):
    """Glorot-uniform limit sqrt(6 / (fan_in + fan_out)); 0 for biases."""
    if fans is None:
        return 0.0
    return float(np.sqrt(6.0 / (fans[0] + fans[1])))


def init_state(config):
    """
    Seeded Glorot-uniform weights and zero biases.
    """
    problems = config.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    rng = np.random.default_rng(config.seed)
    dtype = np.dtype(config.dtype)
    params = {}
    for name, shape, fans in parameter_specs(config):
        if fans is None:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            limit = init_bound(fans)
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    state = ModelState(config=config, params=params, seed=config.seed)
    logger.info(f"event=model_initialised parameters={state.parameter_count} dtype={config.dtype}")
    return state


def parameter_summary(state_or_config):
    """Per-block and total learnable parameter counts."""
    config = getattr(state_or_config, "config", state_or_config)
    summary = dict.fromkeys(BLOCKS, 0)
    for name, shape, _ in parameter_specs(config):
        summary[block_of(name)] += int(np.prod(shape))
    summary["total"] = sum(summary[b] for b in BLOCKS)
    return summary


def check_state(state):
    """Raise CheckpointError when tensors disagree with the configuration."""
    expected = {name: shape for name, shape, _ in parameter_specs(state.config)}
    if list(expected) != list(state.params):
        raise CheckpointError("Parameter names do not match the model configuration")
    for name, shape in expected.items():
        if tuple(state.params[name].shape) != tuple(shape):
            raise CheckpointError(f"Parameter {name} has shape {state.params[name].shape}, expected {shape}")


def _as_batch(images, config):
    x = np.asarray(images, dtype=np.dtype(config.dtype))
    if x.ndim == 3:
        x = x[..., None]
    side = config.input_side
    if x.ndim != 4 or x.shape[1:] != (side, side, 1):
        raise ShapeError("Input images do not match the model", x.shape, (None, side, side, 1))
    return x


def forward(state, images, training=False, rng=None):
    """
    Full forward pass.

    Args:
        state (ModelState): Parameters and configuration.
        images: (B, side, side) or (B, side, side, 1) pixels.
        training (bool): Enables dropout.
        rng (numpy.random.Generator): Dropout mask source in training mode.

    Returns:
        tuple: (logits (B, n_classes), cache for ``backward``)
    """
    config, p = state.config, state.params
    x = _as_batch(images, config)
    caches = {}

    for i in range(1, len(config.conv_channels) + 1):
        x, caches[f"conv{i}"] = layers.conv2d_forward(x, p[f"lsfe.conv{i}.kernel"], p[f"lsfe.conv{i}.bias"],
                                                      config.conv_spec(i - 1))
        x, caches[f"conv{i}.relu"] = layers.relu_forward(x)
        if config.pool_after[i - 1]:
            x, caches[f"conv{i}.pool"] = layers.maxpool2d_forward(x)
    x, caches["flatten"] = layers.flatten_forward(x)
    for i in range(1, len(config.lsfe_fc) + 1):
        x, caches[f"fc{i}"] = layers.dense_forward(x, p[f"lsfe.fc{i}.weight"], p[f"lsfe.fc{i}.bias"])
        x, caches[f"fc{i}.relu"] = layers.relu_forward(x)
    x, caches["dropout"] = layers.dropout_forward(x, config.dropout, training, rng)

    token = x[:, None, :]
    local, _, caches["mha1"] = multi_head_attention(token, token, AttentionParams.from_mapping(p, "s2tlr.mha1."))
    global_, _, caches["mha2"] = multi_head_attention(local, local, AttentionParams.from_mapping(p, "s2tlr.mha2."))
    logits, head_caches = g2a_head(state, local, global_)
    caches.update(head_caches)
    return logits, caches


def g2a_head(state, w_local, w_global):
    """
    Average the local and global attention outputs and classify the result.

    Args:
        w_local, w_global: (B, 1, d_model) outputs of the two attention blocks.

    Returns:
        tuple: (logits (B, n_classes), caches keyed ``g2a.*``)
    """
    config, p = state.config, state.params
    caches = {}
    averaged = (w_local + w_global) / 2.0
    x = averaged.reshape(averaged.shape[0], -1)
    for i in range(1, len(config.g2a_fc) + 1):
        x, caches[f"g2a.fc{i}"] = layers.dense_forward(x, p[f"g2a.fc{i}.weight"], p[f"g2a.fc{i}.bias"])
        x, caches[f"g2a.fc{i}.relu"] = layers.relu_forward(x)
    logits, caches["g2a.out"] = layers.dense_forward(x, p["g2a.out.weight"], p["g2a.out.bias"])
    return logits, caches


def backward(state, caches, dlogits):
    """Gradients of every parameter, keyed like ``state.params``."""
    config = state.config
    grads = {}

    dx, grads["g2a.out.weight"], grads["g2a.out.bias"] = layers.dense_backward(dlogits, caches["g2a.out"])
    for i in range(len(config.g2a_fc), 0, -1):
        dx = layers.relu_backward(dx, caches[f"g2a.fc{i}.relu"])
        dx, grads[f"g2a.fc{i}.weight"], grads[f"g2a.fc{i}.bias"] = layers.dense_backward(dx, caches[f"g2a.fc{i}"])

    daveraged = dx.reshape(dx.shape[0], 1, -1) / 2.0
    dq, dkv, mha2 = multi_head_attention_backward(daveraged, caches["mha2"])
    dlocal = daveraged + dq + dkv
    dq, dkv, mha1 = multi_head_attention_backward(dlocal, caches["mha1"])
    dx = (dq + dkv)[:, 0, :]
    for block, block_grads in (("mha1", mha1), ("mha2", mha2)):
        for name, grad in block_grads.items():
            grads[f"s2tlr.{block}.{name}"] = grad

    dx = layers.dropout_backward(dx, caches["dropout"])
    for i in range(len(config.lsfe_fc), 0, -1):
        dx = layers.relu_backward(dx, caches[f"fc{i}.relu"])
        dx, grads[f"lsfe.fc{i}.weight"], grads[f"lsfe.fc{i}.bias"] = layers.dense_backward(dx, caches[f"fc{i}"])
    dx = layers.flatten_backward(dx, caches["flatten"])
    for i in range(len(config.conv_channels), 0, -1):
        if config.pool_after[i - 1]:
            dx = layers.maxpool2d_backward(dx, caches[f"conv{i}.pool"])
        dx = layers.relu_backward(dx, caches[f"conv{i}.relu"])
        dx, grads[f"lsfe.conv{i}.kernel"], grads[f"lsfe.conv{i}.bias"] = layers.conv2d_backward(dx, caches[f"conv{i}"])

    return {name: grads[name].astype(state.params[name].dtype, copy=False) for name in state.params}


def attdicnn_forward(image, state, mode="infer", rng=None):
    """
    Logits for a single (side, side[, 1]) image.

    Args:
        mode (str): "train" enables dropout, "infer" disables it.
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    logits, _ = forward(state, np.asarray(image)[None], training=mode == "train", rng=rng)
    return logits[0]


def loss_and_grad(state, images, labels, mode="train", rng=None, batch_index=0):
    """
    Mean softmax cross-entropy and its gradient for every learnable tensor.

    Returns:
        tuple: (loss, gradients, probabilities)

    Raises:
        NonFiniteLossError: the loss is NaN or infinite.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= state.config.n_classes):
        raise ShapeError("Labels outside [0, n_classes)", labels.shape, (state.config.n_classes,))
    logits, caches = forward(state, images, training=mode == "train", rng=rng)
    loss, dlogits, probabilities = layers.cross_entropy(logits, labels)
    if not np.isfinite(loss):
        logger.error(f"event=non_finite_loss batch={batch_index} loss={loss}")
        raise NonFiniteLossError(batch_index, loss)
    return loss, backward(state, caches, dlogits), probabilities


def predict_proba(state, images, batch_size=256):
    """Softmax scores in inference mode, batch by batch."""
    images = np.asarray(images)
    scores = []
    for start in range(0, len(images), batch_size):
        logits, _ = forward(state, images[start:start + batch_size], training=False)
        scores.append(layers.softmax(logits.astype(np.float64)))
    if not scores:
        return np.zeros((0, state.config.n_classes))
    return np.concatenate(scores)


def evaluate_loss(state, images, labels, batch_size=256) -> Tuple[float, float, Optional[np.ndarray]]:
    """Inference-mode (mean loss, accuracy, scores) over a dataset."""
    scores = predict_proba(state, images, batch_size)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        return float("nan"), float("nan"), scores
    picked = np.clip(scores[np.arange(len(labels)), labels], 1e-300, None)
    loss = float(-np.mean(np.log(picked)))
    accuracy = float(np.mean(np.argmax(scores, axis=1) == labels))
    return loss, accuracy, scores
