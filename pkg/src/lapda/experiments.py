"""Paired-variant experiment protocols shared by the CLI, scripts/ and the acceptance suite."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import single_threaded
from .data import ScenarioSpec, Splits, build_scenario, data_dir
from .model import Architecture
from .training import TrainConfig, evaluate, fit

log = logging.getLogger(__name__)

VARIANTS = {
    "source-only": dict(alpha=0.0, adversarial=False),
    "adversarial": dict(alpha=0.0, adversarial=True),
    "full": dict(),
}

# file names tried in LAPDA_DATA_DIR, each also with a .gz suffix
USPS_FILES = ("usps-train-images-idx3-ubyte", "usps-train-labels-idx1-ubyte")
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")


@dataclass
class VariantRun:
    variant: str
    seed: int
    best_val_acc: float
    test_acc: float
    seconds: float


@dataclass
class TrendResult:
    runs: list[VariantRun] = field(default_factory=list)

    def test_accs(self, variant: str) -> list[float]:
        return [r.test_acc for r in self.runs if r.variant == variant]

    def mean(self, variant: str) -> float:
        return float(np.mean(self.test_accs(variant)))

    @property
    def seconds(self) -> float:
        return sum(r.seconds for r in self.runs)


def run_variants(splits: Splits, config: TrainConfig, arch: Architecture | None = None,
                 variants=tuple(VARIANTS), result: TrendResult | None = None) -> TrendResult:
    """Train each named variant on the same splits and seed, one after another."""
    result = result if result is not None else TrendResult()
    for name in variants:
        start = time.process_time()
        with single_threaded():
            params, history = fit(splits, replace(config, **VARIANTS[name]), arch)
            test_acc = evaluate(params, splits.test)
        val = max(r.val_acc for r in history if r.val_acc is not None)
        run = VariantRun(name, config.seed, val, test_acc, time.process_time() - start)
        log.info("seed %d %-12s val %.4f test %.4f (%.0fs)", run.seed, name, val, test_acc, run.seconds)
        result.runs.append(run)
    return result


def two_moons_trend(seeds=(0, 1, 2, 3, 4), steps: int = 2000, variants=tuple(VARIANTS),
                    **train_overrides) -> TrendResult:
    """Two moons rotated 30 degrees, 1000 source + 1000 target samples per seed."""
    result = TrendResult()
    for seed in seeds:
        splits = build_scenario(ScenarioSpec(kind="two-moons-rotate", angle=30.0, n_source=1000,
                                             n_target=1000, seed=seed))
        run_variants(splits, TrainConfig(total_steps=steps, seed=seed, **train_overrides),
                     variants=variants, result=result)
    return result


def find_data_file(name: str, base: Path | None = None) -> Path:
    base = base if base is not None else data_dir()
    if base is None:
        raise FileNotFoundError(f"LAPDA_DATA_DIR is not set; cannot locate {name}")
    for candidate in (base / name, base / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{name}[.gz] not found in {base}")


def usps_mnist_spec(seed: int, base: Path | None = None) -> ScenarioSpec:
    """USPS (16x16, upscaled to 28x28) to MNIST: 2000 + 2000 training, 200 validation, 1000 test."""
    si, sl = (str(find_data_file(n, base)) for n in USPS_FILES)
    ti, tl = (str(find_data_file(n, base)) for n in MNIST_FILES)
    return ScenarioSpec(kind="idx-pair", n_classes=10, n_source=2000, n_target=2000, n_val=200, n_test=1000,
                        seed=seed, source_images=si, source_labels=sl, target_images=ti, target_labels=tl,
                        upscale_to=28)


def usps_mnist_trend(seeds=(0, 1, 2), steps: int = 3000, variants=("source-only", "full"),
                     base: Path | None = None, **train_overrides) -> TrendResult:
    """Reduced-scale USPS -> MNIST with the MLP generator."""
    result = TrendResult()
    for seed in seeds:
        splits = build_scenario(usps_mnist_spec(seed, base))
        arch = Architecture(kind="mlp", input_dim=28 * 28, n_classes=10)
        run_variants(splits, TrainConfig(total_steps=steps, seed=seed, **train_overrides), arch,
                     variants=variants, result=result)
    return result
