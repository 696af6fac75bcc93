"""Adversarial training with the label-propagation cycle loss."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Parameter, SingularSystem, Tape
from .data import BatchSampler, DomainDataset, Splits
from .graph import cycle
from .model import (
    Architecture,
    ModelParams,
    classify,
    cls_loss,
    dann_loss,
    dann_loss_from_logits,
    discriminate,
    discriminator_logit,
    embed,
    entropy_weights,
    init_model,
    predict_logits,
    softmax,
)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainConfig:
    alpha: float = 1.0
    gamma: float = 10.0
    lr: float = 1e-2
    momentum: float = 0.9
    batch_source: int = 128
    batch_target: int = 128
    total_steps: int = 2000
    seed: int = 0
    propagation_mode: str = "closed"  # closed | truncated
    truncation_steps: int = 20
    deficit_weight: float = 1.0
    eval_every: int = 100
    validation_size: int = 200
    adversarial: bool = True
    class_balanced: bool = True
    gradient_weighting: bool = True

    def __post_init__(self):
        if self.propagation_mode not in ("closed", "truncated"):
            raise ValueError(f"propagation_mode must be 'closed' or 'truncated', got {self.propagation_mode!r}")
        for name in ("gamma", "lr", "batch_source", "batch_target", "eval_every", "truncation_steps",
                     "validation_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("alpha", "momentum", "total_steps", "deficit_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class OptimizerState:
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: list[Parameter], lr: float, momentum: float, sign: float = 1.0) -> None:
        """Heavy-ball update; ``sign=-1`` ascends instead of descending."""
        for p in params:
            buf = self.buffers.get(p.id)
            if buf is None:
                buf = np.zeros_like(p.value)
            buf = momentum * buf + sign * p.grad
            self.buffers[p.id] = buf
            p.value = p.value - lr * buf


@dataclass
class StepReport:
    step: int
    progress: float
    lam: float
    l_cls: float
    l_dann: float
    l_cycle: float
    total: float
    val_acc: float | None = None
    warning: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def lambda_schedule(p: float, gamma: float = 10.0) -> float:
    """Warm-up weight 2 / (1 + exp(-gamma p)) - 1 for training progress p in [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {p}")
    return 2.0 / (1.0 + math.exp(-gamma * p)) - 1.0


def one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((y.shape[0], n_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def evaluate(params: ModelParams, dataset: DomainDataset) -> float:
    """Fraction of samples whose argmax logit (lowest index on ties) equals the label."""
    if len(dataset) == 0 or dataset.y is None:
        raise ValueError("evaluate needs a non-empty labeled dataset")
    pred = np.argmax(predict_logits(params, dataset.X), axis=1)
    return float(np.mean(pred == dataset.y))


@dataclass
class Objective:
    """Nodes of one generator-side forward pass, recorded on ``tape``."""
    tape: Tape
    features: int
    total: int
    l_cls: int
    l_dann: int | None = None
    l_cycle: int | None = None
    warning: str | None = None


def build_objective(params: ModelParams, xs: np.ndarray, ys: np.ndarray, xt: np.ndarray,
                    config: TrainConfig, lam: float, batch_index: int | None = None,
                    rho: np.ndarray | None = None) -> Objective:
    """Record L_cls + L_dann + alpha * lam * L_cycle for one source/target batch.

    The entropy weights rho (one per row of the stacked batch) scale the
    cycle-loss gradient reaching the features; they are computed from the
    classifier's softmax unless given.
    """
    n_s, n_t = xs.shape[0], xt.shape[0]
    tape = Tape()
    F = embed(tape, params.generator, tape.constant(np.vstack([xs, xt])), training=True)
    logits = classify(tape, params.classifier, F)
    Y = tape.constant(one_hot(ys, params.arch.n_classes))
    l_cls = cls_loss(tape, tape.slice_rows(logits, 0, n_s), Y)
    obj = Objective(tape, F, l_cls, l_cls)
    if config.adversarial:
        D = discriminate(tape, params.discriminator, F)
        obj.l_dann = dann_loss(tape, tape.slice_rows(D, 0, n_s), tape.slice_rows(D, n_s, n_s + n_t))
        obj.total = tape.add(obj.total, obj.l_dann)
    if config.alpha == 0:
        return obj

    # graph branch gets its own slices so the row scale touches only the cycle path
    F_s = tape.slice_rows(F, 0, n_s)
    F_t = tape.slice_rows(F, n_s, n_s + n_t)
    if config.gradient_weighting:
        if rho is None:
            rho = entropy_weights(softmax(tape.value(logits)))
        tape.set_row_gradient_scale(F_s, rho[:n_s])
        tape.set_row_gradient_scale(F_t, rho[n_s:])
    sigma = tape.exp(tape.param(params.log_sigma))
    try:
        res = cycle(tape, F_s, F_t, sigma, Y, mode=config.propagation_mode,
                    steps=config.truncation_steps, batch_index=batch_index)
    except SingularSystem as exc:
        obj.warning = f"cycle term skipped: {exc}"
        return obj
    obj.l_cycle = res.loss
    weighted = res.loss
    if res.deficit is not None:
        weighted = tape.add(weighted, tape.scale(tape.mean(res.deficit), config.deficit_weight))
    obj.total = tape.add(obj.total, tape.scale(weighted, config.alpha * lam))
    return obj


def train_step(params: ModelParams, xs: np.ndarray, ys: np.ndarray, xt: np.ndarray,
               config: TrainConfig, state: OptimizerState, step: int) -> StepReport:
    """One generator-side descent step followed by one discriminator ascent step."""
    n_s, n_t = xs.shape[0], xt.shape[0]
    total_steps = max(config.total_steps, 1)
    if step >= total_steps:
        raise ValueError(f"step {step} is past total_steps {config.total_steps}")
    progress = step / total_steps
    lam = lambda_schedule(progress, config.gamma)
    for p in params.parameters():
        p.zero_grad()

    obj = build_objective(params, xs, ys, xt, config, lam, batch_index=step)
    tape = obj.tape
    if obj.warning is not None:
        log.warning("step %d: %s", step, obj.warning)
    values = {
        "l_cls": float(tape.value(obj.l_cls)),
        "l_dann": float(tape.value(obj.l_dann)) if obj.l_dann is not None else 0.0,
        "l_cycle": float(tape.value(obj.l_cycle)) if obj.l_cycle is not None else 0.0,
        "total": float(tape.value(obj.total)),
    }
    if not all(math.isfinite(v) for v in values.values()):
        dump = {"step": step, "progress": progress, "lam": lam, **values,
                "sigma": params.sigma.tolist()}
        raise TrainingDiverged(f"non-finite loss at step {step}: {values}", dump)

    tape.backward(obj.total)
    state.step(params.generator_side(), config.lr, config.momentum)

    if config.adversarial:
        # discriminator ascends on the same features, detached from the generator
        disc_side = params.discriminator_side()
        for p in disc_side:
            p.zero_grad()
        dtape = Tape()
        Fc = dtape.constant(tape.value(obj.features))
        D2 = discriminator_logit(dtape, params.discriminator, Fc)
        dtape.backward(dann_loss_from_logits(dtape, dtape.slice_rows(D2, 0, n_s),
                                             dtape.slice_rows(D2, n_s, n_s + n_t)))
        state.step(disc_side, config.lr, config.momentum, sign=-1.0)

    return StepReport(step=step, progress=progress, lam=lam, warning=obj.warning, **values)


def fit(splits: Splits, config: TrainConfig, arch: Architecture | None = None,
        on_step=None) -> tuple[ModelParams, list[StepReport]]:
    """Run ``total_steps`` steps; return the parameters with the best validation accuracy.

    Model selection uses the first ``config.validation_size`` validation
    samples. Only ``splits.source`` labels and the validation split are read;
    the unlabeled target split has no labels to read.
    """
    if len(splits.source) == 0 or len(splits.target) == 0:
        raise ValueError("fit needs non-empty source and target data")
    if arch is None:
        arch = Architecture(input_dim=splits.source.X.shape[1], n_classes=splits.source.n_classes)
    init_seq, src_seq, tgt_seq = np.random.SeedSequence(config.seed).spawn(3)
    params = init_model(arch, np.random.default_rng(init_seq))
    history: list[StepReport] = []
    if config.total_steps == 0:
        return params, history

    src = BatchSampler(splits.source, config.batch_source, config.class_balanced, np.random.default_rng(src_seq))
    tgt = BatchSampler(splits.target, config.batch_target, False, np.random.default_rng(tgt_seq))
    val = splits.val.subset(np.arange(min(config.validation_size, len(splits.val))))
    state = OptimizerState()
    best_acc, best = -1.0, params.copy()
    for step in range(config.total_steps):
        i_s, i_t = src.next(), tgt.next()
        report = train_step(params, splits.source.X[i_s], splits.source.y[i_s], splits.target.X[i_t],
                            config, state, step)
        if (step + 1) % config.eval_every == 0 or step == config.total_steps - 1:
            report.val_acc = evaluate(params, val)
            if report.val_acc > best_acc:
                best_acc, best = report.val_acc, params.copy()
        history.append(report)
        if on_step is not None:
            on_step(report)
    return best, history
