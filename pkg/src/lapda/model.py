"""Networks and per-batch losses.

The generator maps inputs to ``feature_dim`` features, the classifier maps
features to class logits and the discriminator maps features to a domain
probability. A learnable log-bandwidth ``log_sigma`` sits next to them.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Parameter, ShapeError, Tape

CHECKPOINT_FORMAT = "lapda-checkpoint"
CHECKPOINT_VERSION = 1
LOG_CLAMP = 1e-7


@dataclass
class Architecture:
    kind: str = "mlp"  # mlp | conv2
    input_dim: int = 2
    feature_dim: int = 16
    n_classes: int = 2
    hidden: tuple[int, ...] = (64, 64)
    disc_hidden: int = 64
    # conv2 only
    image_shape: tuple[int, int] = (28, 28)
    conv_channels: tuple[int, int] = (8, 16)
    conv_kernel: int = 5
    fc_hidden: int = 128
    batchnorm: bool = True
    # batch-normalize the output features too, keeping distances on the bandwidth's scale
    feature_norm: bool = True
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.image_shape = tuple(self.image_shape)
        self.conv_channels = tuple(self.conv_channels)
        if self.kind not in ("mlp", "conv2"):
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.kind == "conv2" and self.image_shape[0] * self.image_shape[1] != self.input_dim:
            raise ValueError(f"image shape {self.image_shape} does not match input_dim {self.input_dim}")

    def conv_output_size(self) -> int:
        h, w = self.image_shape
        for _ in self.conv_channels:
            h, w = h - self.conv_kernel + 1, w - self.conv_kernel + 1
            if h % 2 or w % 2:
                raise ValueError(f"image {self.image_shape}: conv output {h}x{w} cannot be 2x2 pooled")
            h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ValueError(f"image {self.image_shape} too small for two {self.conv_kernel}x{self.conv_kernel} convs")
        return self.conv_channels[-1] * h * w


@dataclass
class GeneratorParams:
    arch: Architecture
    layers: dict[str, Parameter]
    # batch-norm running statistics, keyed by layer name: (mean, var)
    running: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


@dataclass
class ClassifierParams:
    W: Parameter
    b: Parameter


@dataclass
class DiscriminatorParams:
    W1: Parameter
    b1: Parameter
    W2: Parameter
    b2: Parameter


@dataclass
class ModelParams:
    generator: GeneratorParams
    classifier: ClassifierParams
    discriminator: DiscriminatorParams
    log_sigma: Parameter

    @property
    def arch(self) -> Architecture:
        return self.generator.arch

    def generator_side(self) -> list[Parameter]:
        """Everything trained to reduce the total loss: G, C and the bandwidth."""
        return [*self.generator.layers.values(), self.classifier.W, self.classifier.b, self.log_sigma]

    def discriminator_side(self) -> list[Parameter]:
        d = self.discriminator
        return [d.W1, d.b1, d.W2, d.b2]

    def parameters(self) -> list[Parameter]:
        return self.generator_side() + self.discriminator_side()

    def copy(self) -> "ModelParams":
        return from_state(to_state(self))

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.value)


def _dense(rng: np.random.Generator, name: str, fan_in: int, fan_out: int) -> tuple[Parameter, Parameter]:
    W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
    return Parameter(f"{name}.W", W), Parameter(f"{name}.b", np.zeros(fan_out))


def init_model(arch: Architecture, rng: np.random.Generator) -> ModelParams:
    layers: dict[str, Parameter] = {}
    if arch.kind == "mlp":
        sizes = (arch.input_dim, *arch.hidden, arch.feature_dim)
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            W, bias = _dense(rng, f"gen.fc{i}", a, b)
            layers[W.id], layers[bias.id] = W, bias
    else:
        c_in = 1
        k = arch.conv_kernel
        for i, c_out in enumerate(arch.conv_channels):
            fan_in = c_in * k * k
            layers[f"gen.conv{i}.W"] = Parameter(
                f"gen.conv{i}.W", rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k)))
            layers[f"gen.conv{i}.b"] = Parameter(f"gen.conv{i}.b", np.zeros(c_out))
            c_in = c_out
        sizes = (arch.conv_output_size(), arch.fc_hidden, arch.feature_dim)
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            W, bias = _dense(rng, f"gen.fc{i}", a, b)
            layers[W.id], layers[bias.id] = W, bias
    generator = GeneratorParams(arch, layers)
    if arch.batchnorm:
        widths = arch.hidden if arch.kind == "mlp" else arch.conv_channels
        prefix = "gen.fc" if arch.kind == "mlp" else "gen.conv"
        for i, c in enumerate(widths):
            generator.running[f"{prefix}{i}"] = (np.zeros(c), np.ones(c))
    if arch.feature_norm:
        generator.running["gen.features"] = (np.zeros(arch.feature_dim), np.ones(arch.feature_dim))

    Wc, bc = _dense(rng, "cls", arch.feature_dim, arch.n_classes)
    W1, b1 = _dense(rng, "disc.fc0", arch.feature_dim, arch.disc_hidden)
    W2, b2 = _dense(rng, "disc.fc1", arch.disc_hidden, 1)
    # the discriminator starts undecided: D = 0.5 for every input
    W2.value = np.zeros_like(W2.value)
    return ModelParams(
        generator=generator,
        classifier=ClassifierParams(Wc, bc),
        discriminator=DiscriminatorParams(W1, b1, W2, b2),
        # sigma_k = 1 at start
        log_sigma=Parameter("log_sigma", np.zeros(arch.feature_dim)),
    )


def _linear(tape: Tape, x: int, W: Parameter, b: Parameter) -> int:
    return tape.add(tape.matmul(x, tape.param(W)), tape.param(b))


def _batchnorm(tape: Tape, gen: GeneratorParams, name: str, h: int, training: bool) -> int:
    # batch statistics in training mode (running averages updated), running averages otherwise
    if training:
        h = tape.record("batchnorm", [h])
        stats = tape.nodes[h].cache
        mean, var = gen.running[name]
        m = gen.arch.bn_momentum
        gen.running[name] = ((1 - m) * mean + m * stats["mean"], (1 - m) * var + m * stats["var"])
        return h
    mean, var = gen.running[name]
    return tape.record("batchnorm", [h], mean=mean, var=var)


def embed(tape: Tape, gen: GeneratorParams, X: int, training: bool = True) -> int:
    """Feature generator forward pass; returns an ``n x feature_dim`` node."""
    arch = gen.arch
    x_shape = tape.shape(X)
    if len(x_shape) != 2 or x_shape[1] != arch.input_dim:
        raise ShapeError(f"embed: expected input of width {arch.input_dim}, got {x_shape}")
    L = gen.layers
    if arch.kind == "mlp":
        h = X
        n_fc = len(arch.hidden) + 1
        for i in range(n_fc):
            h = _linear(tape, h, L[f"gen.fc{i}.W"], L[f"gen.fc{i}.b"])
            if i < n_fc - 1:
                if arch.batchnorm:
                    h = _batchnorm(tape, gen, f"gen.fc{i}", h, training)
                h = tape.relu(h)
        if arch.feature_norm:
            h = _batchnorm(tape, gen, "gen.features", h, training)
        return h

    n = x_shape[0]
    h = tape.reshape(X, (n, 1, *arch.image_shape))
    for i in range(len(arch.conv_channels)):
        h = tape.record("conv2d", [h, tape.param(L[f"gen.conv{i}.W"])])
        h = tape.record("add-channel-bias", [h, tape.param(L[f"gen.conv{i}.b"])])
        if arch.batchnorm:
            h = _batchnorm(tape, gen, f"gen.conv{i}", h, training)
        h = tape.record("maxpool2", [tape.relu(h)])
    h = tape.reshape(h, (n, -1))
    h = tape.relu(_linear(tape, h, L["gen.fc0.W"], L["gen.fc0.b"]))
    h = _linear(tape, h, L["gen.fc1.W"], L["gen.fc1.b"])
    if arch.feature_norm:
        h = _batchnorm(tape, gen, "gen.features", h, training)
    return h


def classify(tape: Tape, cls: ClassifierParams, F: int) -> int:
    return _linear(tape, F, cls.W, cls.b)


def discriminator_logit(tape: Tape, disc: DiscriminatorParams, F: int) -> int:
    h = tape.relu(_linear(tape, F, disc.W1, disc.b1))
    return _linear(tape, h, disc.W2, disc.b2)


def discriminate(tape: Tape, disc: DiscriminatorParams, F: int) -> int:
    """Probability that each feature row comes from the source domain."""
    return tape.sigmoid(discriminator_logit(tape, disc, F))


def cls_loss(tape: Tape, logits: int, y_onehot: int) -> int:
    """Mean cross-entropy of the source logits."""
    return tape.cross_entropy(logits, y_onehot)


def dann_loss(tape: Tape, d_s: int, d_t: int) -> int:
    """mean log D(f_s) + mean log(1 - D(f_t)), inputs clamped to [1e-7, 1 - 1e-7]."""
    lo, hi = LOG_CLAMP, 1.0 - LOG_CLAMP
    ls = tape.mean(tape.log(tape.clip(d_s, lo, hi)))
    ones = tape.constant(np.ones(tape.shape(d_t)))
    lt = tape.mean(tape.log(tape.sub(ones, tape.clip(d_t, lo, hi))))
    return tape.add(ls, lt)


def dann_loss_from_logits(tape: Tape, z_s: int, z_t: int) -> int:
    """Same value as :func:`dann_loss` on sigmoid(z), computed with log-sigmoid.

    No clamp is needed, so a saturated discriminator still gets a gradient.
    """
    ls = tape.mean(tape.log_sigmoid(z_s))
    lt = tape.mean(tape.log_sigmoid(tape.neg(z_t)))
    return tape.add(ls, lt)


def entropy(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -plogp.sum(axis=1)


def rho_from_entropy(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    return math.e * H * np.exp(-H)


def entropy_weights(p: np.ndarray) -> np.ndarray:
    """Bell-shaped weight e*H*exp(-H) of each row's entropy (nats); peak 1 at H = 1.

    Plain numpy: the result never carries gradient.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("entropy_weights: rows must be probability vectors")
    return rho_from_entropy(entropy(p))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def predict_logits(params: ModelParams, X: np.ndarray) -> np.ndarray:
    tape = Tape()
    F = embed(tape, params.generator, tape.constant(X), training=False)
    return tape.value(classify(tape, params.classifier, F))


def features(params: ModelParams, X: np.ndarray) -> np.ndarray:
    tape = Tape()
    return tape.value(embed(tape, params.generator, tape.constant(X), training=False))


# --- checkpoints ------------------------------------------------------------

def to_state(params: ModelParams) -> dict:
    arch = asdict(params.arch)
    tensors = {p.id: p.value for p in params.parameters()}
    for name, (mean, var) in params.generator.running.items():
        tensors[f"{name}.running_mean"] = mean
        tensors[f"{name}.running_var"] = var
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": arch,
        "tensors": {k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
                    for k, v in tensors.items()},
    }


def from_state(state: dict) -> ModelParams:
    if state.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint: format={state.get('format')!r}")
    if state.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {state.get('version')!r}")
    arch = Architecture(**state["arch"])
    params = init_model(arch, np.random.default_rng(0))
    tensors = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in state["tensors"].items()}
    for p in params.parameters():
        if p.id not in tensors:
            raise ValueError(f"checkpoint is missing tensor {p.id!r}")
        if tensors[p.id].shape != p.shape:
            raise ValueError(f"tensor {p.id!r}: checkpoint shape {tensors[p.id].shape} != expected {p.shape}")
        p.value = tensors[p.id]
        p.zero_grad()
    for name in list(params.generator.running):
        params.generator.running[name] = (tensors[f"{name}.running_mean"], tensors[f"{name}.running_var"])
    return params


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_text(json.dumps(to_state(params)))


def load_checkpoint(path) -> ModelParams:
    return from_state(json.loads(Path(path).read_text()))
