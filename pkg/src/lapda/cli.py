"""Command-line front end: ``lapda train | compare | dump-features | eval``.

Configs are plain text, one ``key = value`` per line, ``#`` starts a comment.
Keys are ``scenario.<field>``, ``train.<field>`` or ``model.<field>``. A bare
``<field>`` is accepted when only one section has it; ``seed`` and
``n_classes`` mean the same thing everywhere and set every section (``seed``
seeds both the data and the training run). Other shared names, such as
``kind``, must be qualified. Precedence: defaults < file < command
line (``--seed``, then each ``--override`` in order).

Exit codes: 0 success, 2 bad or missing config / input files, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import single_threaded
from .data import DomainDataset, FormatError, ScenarioSpec, Splits, build_scenario
from .experiments import VARIANTS
from .model import Architecture, features, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingDiverged, evaluate, fit

log = logging.getLogger("lapda")

SECTIONS = {"scenario": ScenarioSpec, "train": TrainConfig, "model": Architecture}
# bare keys that set every section holding them
SHARED_KEYS = ("seed", "n_classes")

LAYOUT = {
    "manifest.json": "resolved config, config hash, timestamps, this layout",
    "steps.jsonl": "one JSON object per training step",
    "summary.json": "scenario, config, best_val_acc, test_acc, steps",
    "checkpoint.json": "parameters with the best validation accuracy",
}


class ConfigError(Exception):
    """Bad, missing or unreadable configuration; maps to exit code 2."""


# --- config ----------------------------------------------------------------

def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(x) for x in raw.replace(" ", "").split(",") if x)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def _assign(values: dict[str, dict], key: str, raw: str, origin: str) -> None:
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        targets = [section] if section in SECTIONS else []
    else:
        name = key
        targets = [s for s in SECTIONS if name in {f.name for f in fields(SECTIONS[s])}]
        if len(targets) > 1 and name not in SHARED_KEYS:
            options = " or ".join(f"{s}.{name}" for s in targets)
            raise ConfigError(f"{origin}: ambiguous key {key!r}, use {options}")
    hits = 0
    for section in targets:
        defaults = {f.name: getattr(SECTIONS[section](), f.name) for f in fields(SECTIONS[section])}
        if name in defaults:
            values[section][name] = _coerce(raw, defaults[name], f"{origin}: {key}")
            hits += 1
    if not hits:
        raise ConfigError(f"{origin}: unknown key {key!r}")


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, dict]:
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value, got {line!r}")
        key, raw = line.split("=", 1)
        _assign(values, key, raw, f"{origin}:{lineno}")
    return values


def resolve_config(path: str | None, seed: int | None = None,
                   overrides: list[str] = ()) -> tuple[ScenarioSpec, TrainConfig, Architecture]:
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {p}: {exc.strerror or exc}") from None
        values = parse_config_text(text, str(p))
    if seed is not None:
        _assign(values, "seed", str(seed), "--seed")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--override expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _assign(values, key, raw, "--override")
    try:
        return (ScenarioSpec(**values["scenario"]), TrainConfig(**values["train"]),
                Architecture(**values["model"]))
    except (TypeError, ValueError) as exc:
        where = path if path is not None else "command line"
        raise ConfigError(f"invalid config ({where}): {exc}") from None


def fit_arch_to_data(arch: Architecture, splits: Splits) -> Architecture:
    """input_dim, n_classes and image_shape always follow the data."""
    shape = splits.source.image_shape or arch.image_shape
    try:
        return replace(arch, input_dim=splits.source.X.shape[1], n_classes=splits.source.n_classes,
                       image_shape=tuple(shape))
    except ValueError as exc:
        raise ConfigError(f"model does not fit the data: {exc}") from None


def resolved_dict(spec: ScenarioSpec, cfg: TrainConfig, arch: Architecture) -> dict:
    return {"scenario": asdict(spec), "train": asdict(cfg), "model": asdict(arch)}


def config_hash(resolved: dict) -> str:
    """Git blob hash of the canonical JSON form of the resolved config."""
    body = json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def load_splits(spec: ScenarioSpec) -> Splits:
    try:
        return build_scenario(spec)
    except FileNotFoundError as exc:
        raise ConfigError(f"data file not found: {exc.filename} (set LAPDA_DATA_DIR or use absolute paths)") from None
    except (FormatError, ValueError) as exc:
        raise ConfigError(f"cannot build scenario {spec.kind!r}: {exc}") from None


# --- outputs -----------------------------------------------------------------

def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _progress(report) -> None:
    if report.val_acc is not None:
        log.info("step %d  val_acc %.4f  l_cls %.4f  l_dann %.4f  l_cycle %.4f",
                 report.step, report.val_acc, report.l_cls, report.l_dann, report.l_cycle)


def run_training(splits: Splits, spec: ScenarioSpec, cfg: TrainConfig, arch: Architecture, out: Path) -> dict:
    """Fit one model and write steps.jsonl, summary.json and checkpoint.json into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    with single_threaded(), open(out / "steps.jsonl", "w") as fh:
        def on_step(report):
            fh.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
            _progress(report)

        try:
            params, history = fit(splits, cfg, arch, on_step=on_step)
        except TrainingDiverged as exc:
            _dump_json(out / "diverged.json", exc.dump)
            raise
        test_acc = evaluate(params, splits.test)
    val_accs = [r.val_acc for r in history if r.val_acc is not None]
    summary = {
        "scenario": spec.kind,
        "config": resolved_dict(spec, cfg, arch),
        "best_val_acc": max(val_accs) if val_accs else None,
        "test_acc": test_acc,
        "steps": [r.to_dict() for r in history],
    }
    _dump_json(out / "summary.json", summary)
    save_checkpoint(params, out / "checkpoint.json")
    return summary


def write_manifest(out: Path, command: str, resolved: dict, started: str, layout: dict) -> None:
    _dump_json(out / "manifest.json", {
        "command": command,
        "version": __version__,
        "config": resolved,
        "config_hash": config_hash(resolved),
        "started": started,
        "finished": _now(),
        "layout": layout,
    })


def _prepare(args) -> tuple[ScenarioSpec, TrainConfig, Architecture, Splits, Path]:
    spec, cfg, arch = resolve_config(args.config, args.seed, args.override)
    splits = load_splits(spec)
    arch = fit_arch_to_data(arch, splits)
    out = Path(args.out) if args.out else Path("runs") / config_hash(resolved_dict(spec, cfg, arch))[:12]
    return spec, cfg, arch, splits, out


# --- commands ----------------------------------------------------------------

def cmd_train(args) -> int:
    started = _now()
    spec, cfg, arch, splits, out = _prepare(args)
    summary = run_training(splits, spec, cfg, arch, out)
    write_manifest(out, "train", summary["config"], started, LAYOUT)
    print(json.dumps({"out": str(out), "best_val_acc": summary["best_val_acc"], "test_acc": summary["test_acc"]}))
    return 0


def cmd_compare(args) -> int:
    """Source-only, adversarial-only and full method with the shared seed, run in that order."""
    started = _now()
    spec, cfg, arch, splits, out = _prepare(args)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, changes in VARIANTS.items():
        log.info("variant %s", name)
        summary = run_training(splits, spec, replace(cfg, **changes), arch, out / name)
        rows.append({"variant": name, "val_acc": summary["best_val_acc"], "test_acc": summary["test_acc"],
                     "steps": cfg.total_steps})
    with open(out / "compare.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "val_acc", "test_acc", "steps"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    layout = {"compare.csv": "variant, val_acc, test_acc, steps",
              **{f"{v}/{k}": d for v in VARIANTS for k, d in LAYOUT.items() if k != "manifest.json"},
              "manifest.json": LAYOUT["manifest.json"]}
    write_manifest(out, "compare", resolved_dict(spec, cfg, arch), started, layout)
    with open(out / "compare.csv") as fh:
        sys.stdout.write(fh.read())
    return 0


def _split_datasets(splits: Splits, which: str) -> list[tuple[str, DomainDataset]]:
    named = [("source", splits.source), ("target", splits.target), ("val", splits.val), ("test", splits.test)]
    return named if which == "all" else [(n, d) for n, d in named if n == which]


def _load_params(path: str):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad checkpoint {path}: {exc}") from None


def _check_dims(params, splits: Splits, path: str) -> None:
    width = splits.source.X.shape[1]
    if params.arch.input_dim != width:
        raise ConfigError(f"checkpoint {path} expects inputs of width {params.arch.input_dim}, data has {width}")


def cmd_dump_features(args) -> int:
    """CSV of embedded features: domain, label (-1 if unknown), f_1..f_d."""
    spec, _, _ = resolve_config(args.config, args.seed, args.override)
    splits = load_splits(spec)
    params = _load_params(args.checkpoint)
    _check_dims(params, splits, args.checkpoint)
    out = Path(args.out) if args.out else Path("features.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    d = params.arch.feature_dim
    with single_threaded(), open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["domain", "label", *(f"f_{k + 1}" for k in range(d))])
        for _, ds in _split_datasets(splits, args.split):
            F = features(params, ds.X)
            labels = ds.y if ds.y is not None else np.full(len(ds), -1)
            for lab, row in zip(labels, F):
                writer.writerow([ds.domain, int(lab), *(repr(float(v)) for v in row)])
    return 0


def cmd_eval(args) -> int:
    spec, _, _ = resolve_config(args.config, args.seed, args.override)
    splits = load_splits(spec)
    params = _load_params(args.checkpoint)
    _check_dims(params, splits, args.checkpoint)
    with single_threaded():
        result = {name: evaluate(params, ds) for name, ds in _split_datasets(splits, args.split) if ds.labeled}
    print(json.dumps(result, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lapda", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_checkpoint=False):
        p.add_argument("--config", help="plain-text key = value config file")
        p.add_argument("--out", help="output directory (train, compare) or CSV path (dump-features)")
        p.add_argument("--seed", type=int, help="sets scenario.seed and train.seed")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, repeatable; applied after --config and --seed")
        p.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on stderr")
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint.json written by train")
            p.add_argument("--split", choices=["source", "target", "val", "test", "all"], default="all")

    common(sub.add_parser("train", help="train one model"))
    common(sub.add_parser("compare", help="source-only vs adversarial-only vs full method"))
    common(sub.add_parser("dump-features", help="write embedded features as CSV"), needs_checkpoint=True)
    common(sub.add_parser("eval", help="accuracy of a checkpoint on labeled splits"), needs_checkpoint=True)
    return parser


COMMANDS = {"train": cmd_train, "compare": cmd_compare, "dump-features": cmd_dump_features, "eval": cmd_eval}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"lapda: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"lapda: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
