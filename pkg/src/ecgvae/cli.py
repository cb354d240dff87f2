"""Command-line pipeline: prepare, train, evaluate, plot, run-all.

Configuration comes from an optional TOML file plus flag overrides; every
training hyperparameter is addressable under the name used in the run
summaries. All commands are deterministic for a fixed config and seed, and
every failure exits nonzero with a machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:                      # Python 3.10
    import tomli as tomllib

from . import evaluation, plots, preprocess, training
from .dataset import (
    CLASS_NAMES,
    DiagClass,
    generate_synthetic,
    load_corpus,
)
from .errors import (
    CheckpointMismatch,
    MalformedInput,
    MissingFile,
    PipelineError,
)
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint
from .preprocess import BalanceSpec, NormStats
from .training import TrainConfig

DATA_DIR_ENV = "ECGVAE_DATA_DIR"

DEFAULT_SYNTHETIC_SAMPLES = 2000
DEFAULT_SYNTHETIC_MIX = (0.3, 0.3, 0.3, 0.3, 0.3)
# real-data targets follow the 4000/4000 resampling scheme; synthetic desk
# runs scale the same idea down to the corpus size
SYNTHETIC_BALANCE_TARGETS = {DiagClass.HYP: 600, DiagClass.NORM: 600}
REAL_BALANCE_TARGETS = {DiagClass.HYP: 4000, DiagClass.NORM: 4000}


@dataclass
class RunConfig:
    mode: str                       # "synthetic" | "real"
    out_dir: Path
    seed: int
    threshold: float
    metadata: Path | None
    signal_dir: Path | None
    synthetic_samples: int
    synthetic_mix: tuple
    balance_targets: dict
    hyp_weight_multiplier: float
    model: ModelConfig
    train: TrainConfig

    # deterministic sub-seeds derived from the master seed
    @property
    def corpus_seed(self) -> int:
        return self.seed

    @property
    def balance_seed(self) -> int:
        return self.seed + 1

    @property
    def model_seed(self) -> int:
        return self.seed + 2

    @property
    def train_seed(self) -> int:
        return self.seed + 3


def _read_toml(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise MissingFile(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise MalformedInput(f"config file {path} is not valid TOML: {exc}") from exc


def _model_config(section: dict, synthetic: bool) -> ModelConfig:
    preset = section.get("preset", "reduced" if synthetic else "full")
    if preset == "full":
        base = ModelConfig()
    elif preset == "reduced":
        base = ModelConfig.reduced()
    else:
        raise MalformedInput(f"unknown model preset {preset!r}")
    overrides = {}
    for key in ("conv_filters", "conv_kernels", "conv_dropout",
                "dense_units", "dense_dropout"):
        if key in section:
            overrides[key] = tuple(section[key])
    for key in ("pool_size", "latent_dim", "include_log_var_head",
                "n_classes", "n_leads", "bn_momentum", "bn_epsilon"):
        if key in section:
            overrides[key] = section[key]
    if not overrides:
        return base
    merged = base.to_dict()
    merged.update({k: list(v) if isinstance(v, tuple) else v
                   for k, v in overrides.items()})
    return ModelConfig.from_dict(merged)


def load_run_config(args) -> RunConfig:
    raw = _read_toml(Path(args.config)) if args.config else {}
    data = raw.get("data", {})
    balance = raw.get("balance", {})
    model_section = raw.get("model", {})
    train_section = raw.get("train", {})
    evaluate_section = raw.get("evaluate", {})

    synthetic = bool(getattr(args, "synthetic", False)) or data.get("mode") == "synthetic"
    if not synthetic and "mode" not in data:
        synthetic = True     # no real-data config given: default to synthetic

    seed = args.seed if args.seed is not None else int(data.get("seed", 7))

    data_dir = os.environ.get(DATA_DIR_ENV, "")
    metadata = data.get("metadata")
    signal_dir = data.get("signal_dir")
    if not synthetic:
        if metadata is None:
            metadata = str(Path(data_dir) / "metadata.csv") if data_dir else None
        if signal_dir is None:
            signal_dir = str(Path(data_dir) / "signals") if data_dir else None
        if metadata is None or signal_dir is None:
            raise MissingFile(
                "real mode needs data.metadata and data.signal_dir "
                f"(or the {DATA_DIR_ENV} environment variable)"
            )

    if balance:
        targets = {DiagClass[name]: int(balance[name])
                   for name in balance if name in DiagClass.__members__}
    else:
        targets = dict(SYNTHETIC_BALANCE_TARGETS if synthetic else REAL_BALANCE_TARGETS)

    samples = getattr(args, "samples", None)
    if samples is None:
        samples = int(data.get("synthetic_samples", DEFAULT_SYNTHETIC_SAMPLES))
    mix = tuple(data.get("synthetic_mix", DEFAULT_SYNTHETIC_MIX))

    train_kwargs = {}
    for toml_key, field_name in (
        ("learning_rate", "learning_rate"),
        ("batch_size", "batch_size"),
        ("max_epochs", "max_epochs"),
        ("validation_split", "validation_fraction"),
        ("early_stop_patience", "early_stop_patience"),
        ("plateau_patience", "plateau_patience"),
        ("plateau_factor", "plateau_factor"),
        ("min_lr", "min_lr"),
    ):
        if toml_key in train_section:
            train_kwargs[field_name] = train_section[toml_key]
    if synthetic and "max_epochs" not in train_kwargs:
        train_kwargs["max_epochs"] = 30
    train_config = TrainConfig(seed=seed + 3, **train_kwargs)

    threshold = args.threshold if args.threshold is not None else float(
        evaluate_section.get("threshold", 0.5))
    if not 0.0 < threshold < 1.0:
        raise MalformedInput(f"threshold {threshold} outside (0, 1)")

    return RunConfig(
        mode="synthetic" if synthetic else "real",
        out_dir=Path(args.out),
        seed=seed,
        threshold=threshold,
        metadata=Path(metadata) if metadata else None,
        signal_dir=Path(signal_dir) if signal_dir else None,
        synthetic_samples=samples,
        synthetic_mix=mix,
        balance_targets=targets,
        hyp_weight_multiplier=float(train_section.get("hyp_weight_multiplier", 1.5)),
        model=_model_config(model_section, synthetic),
        train=train_config,
    )


def _load_corpus(config: RunConfig):
    if config.mode == "synthetic":
        return generate_synthetic(config.synthetic_samples, config.corpus_seed,
                                  config.synthetic_mix)
    return load_corpus(config.metadata, config.signal_dir)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# --- commands -----------------------------------------------------------------


def cmd_prepare(config: RunConfig) -> None:
    corpus = _load_corpus(config)
    labels = corpus.labels()
    train_rows, test_rows = preprocess.stratified_split(corpus)
    spec = BalanceSpec(targets=dict(config.balance_targets),
                       seed=config.balance_seed)
    balanced = preprocess.balance(train_rows, labels, spec)
    contributions = preprocess.per_class_contributions(train_rows, labels, spec)

    stats = preprocess.fit_norm_stats(corpus.signals()[balanced])
    weights = preprocess.compute_class_weights(labels[balanced],
                                               config.hyp_weight_multiplier)

    out = config.out_dir
    _write(out / "balanced_indices.json",
           json.dumps({"balanced_rows": balanced.tolist()}))
    _write(out / "norm_stats.json", stats.to_json())
    _write(out / "class_weights.json", weights.to_json())
    summary = {
        "mode": config.mode,
        "seed": config.seed,
        "n_records": len(corpus),
        "train_rows": int(train_rows.size),
        "test_rows": int(test_rows.size),
        "balance_targets": {c.name: t for c, t in sorted(config.balance_targets.items())},
        "contributions": contributions,
        "balanced_total": int(balanced.size),
        "class_weights_final": {name: weights.final[i]
                                for i, name in enumerate(CLASS_NAMES)},
    }
    _write(out / "prep_summary.json", json.dumps(summary, indent=2))
    print(f"prepared {balanced.size} balanced rows from {train_rows.size} "
          f"train rows ({out})")


def cmd_train(config: RunConfig) -> None:
    out = config.out_dir
    for name in ("balanced_indices.json", "norm_stats.json", "class_weights.json"):
        if not (out / name).exists():
            raise MissingFile(f"missing prepare artifact: {out / name}")
    balanced = np.asarray(
        json.loads((out / "balanced_indices.json").read_text())["balanced_rows"],
        dtype=np.int64,
    )
    stats = NormStats.from_json((out / "norm_stats.json").read_text())
    weights = preprocess.ClassWeights.from_json(
        (out / "class_weights.json").read_text())

    corpus = _load_corpus(config)
    signals = preprocess.apply_norm(corpus.signals()[balanced], stats)
    labels = corpus.labels()[balanced]
    row_weights = preprocess.sample_weights(labels, weights)

    model = Model(config.model, init_seed=config.model_seed,
                  dropout_seed=config.train_seed)
    result = training.train(model, signals, labels, row_weights, config.train)

    save_checkpoint(result.best_model, out / "checkpoint_best.cvae")
    save_checkpoint(result.final_model, out / "checkpoint_final.cvae")
    _write(out / "history.csv", training.history_to_csv(result.history))
    summary = {
        "epochs_run": result.epochs_run,
        "stopped_early": result.stopped_early,
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "lr_reductions": [[epoch, lr] for epoch, lr in result.lr_reductions],
        "final_lr": result.history[-1].lr if result.history else config.train.learning_rate,
    }
    _write(out / "train_summary.json", json.dumps(summary, indent=2))
    print(f"trained {result.epochs_run} epochs, best epoch {result.best_epoch} "
          f"(val loss {result.best_val_loss:.4f})")


def cmd_evaluate(config: RunConfig, checkpoint: Path | None = None) -> None:
    out = config.out_dir
    ckpt_path = checkpoint or out / "checkpoint_best.cvae"
    if not Path(ckpt_path).exists():
        raise MissingFile(f"checkpoint not found: {ckpt_path}")
    stats_path = out / "norm_stats.json"
    if not stats_path.exists():
        raise MissingFile(f"missing prepare artifact: {stats_path}")
    model = load_checkpoint(ckpt_path)
    stats = NormStats.from_json(stats_path.read_text())
    if stats.mu.shape[0] != model.config.n_leads:
        raise CheckpointMismatch(
            f"norm stats cover {stats.mu.shape[0]} leads, checkpoint model "
            f"expects {model.config.n_leads}"
        )

    corpus = _load_corpus(config)
    _, test_rows = preprocess.stratified_split(corpus)
    if test_rows.size == 0:
        raise MissingFile("test split (fold 10) is empty")
    x_test = preprocess.apply_norm(corpus.signals()[test_rows], stats)
    y_test = corpus.labels()[test_rows]

    probs = training.predict_in_batches(model, x_test)
    test_loss, _ = training.weighted_bce(probs, y_test, np.ones(len(test_rows)))
    report = evaluation.build_report(probs, y_test, config.threshold,
                                     test_loss=test_loss)
    _write(out / "evaluation_report.json", report.to_json())
    _write(out / "confusion_matrix.csv", report.confusion.to_csv())
    _write(out / "per_class_metrics.csv", report.per_class.to_csv())
    agg = report.aggregates
    print(f"evaluated {report.confusion.n_samples} test samples: "
          f"binary accuracy {agg['binary_accuracy']:.4f}, "
          f"micro P/R {agg['micro_precision']:.4f}/{agg['micro_recall']:.4f}")


def cmd_plot(config: RunConfig, history_path: Path | None = None,
             report_path: Path | None = None) -> None:
    out = config.out_dir
    history_path = history_path or out / "history.csv"
    report_path = report_path or out / "evaluation_report.json"
    wrote = []

    if history_path.exists():
        history = training.history_from_csv(history_path.read_text())
        if not history:
            raise MalformedInput(f"history CSV {history_path} has no rows")
        _write(out / "training_curves.svg", plots.training_curves_svg(history))
        wrote.append("training_curves.svg")

    if report_path.exists():
        try:
            per_class = json.loads(report_path.read_text())["per_class"]
        except (ValueError, KeyError) as exc:
            raise MalformedInput(f"report {report_path} unparseable: {exc}") from exc
        for stem, svg in plots.confusion_heatmaps(per_class).items():
            _write(out / f"{stem}.svg", svg)
            wrote.append(f"{stem}.svg")

    if not wrote:
        raise MissingFile(
            f"nothing to plot: neither {history_path} nor {report_path} exists"
        )
    print(f"wrote {len(wrote)} SVG file(s) to {out}")


# --- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecgvae",
        description="Data-centric multi-label ECG classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", default="ecgvae_out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--threshold", type=float, default=None,
                       help="decision threshold for binarizing probabilities")
        p.add_argument("--synthetic", action="store_true",
                       help="use a generated synthetic corpus")
        p.add_argument("--samples", type=int, default=None,
                       help="synthetic corpus size")

    for name, help_text in (
        ("prepare", "split, balance, and fit normalization statistics"),
        ("train", "train the model on prepared artifacts"),
        ("evaluate", "score the fold-10 test split with a checkpoint"),
        ("plot", "render training curves and confusion heatmaps as SVG"),
        ("run-all", "prepare, train, evaluate, and plot in one go"),
    ):
        p = sub.add_parser(name, help=help_text)
        add_common(p)
        if name == "evaluate":
            p.add_argument("--checkpoint", default=None,
                           help="checkpoint path (default: <out>/checkpoint_best.cvae)")
        if name == "plot":
            p.add_argument("--history", default=None, help="history CSV path")
            p.add_argument("--report", default=None, help="evaluation report JSON path")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args)
        if args.command == "prepare":
            cmd_prepare(config)
        elif args.command == "train":
            cmd_train(config)
        elif args.command == "evaluate":
            ckpt = Path(args.checkpoint) if args.checkpoint else None
            cmd_evaluate(config, ckpt)
        elif args.command == "plot":
            cmd_plot(config,
                     Path(args.history) if args.history else None,
                     Path(args.report) if args.report else None)
        elif args.command == "run-all":
            cmd_prepare(config)
            cmd_train(config)
            cmd_evaluate(config)
            cmd_plot(config)
    except PipelineError as exc:
        sys.stderr.write(json.dumps(exc.payload()) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
