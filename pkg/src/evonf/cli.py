"""Command line front end: ``python -m evonf <command>``.

Commands:
    synth        write a synthetic export behaviour dataset
    train-evonf  evolve fuzzy models, one per seed
    train-mlp    train the perceptron baseline, one per seed
    compare      tabulate both paradigms side by side
    curves       write the data behind the operator illustration plots

Any ``EvoNFException`` ends the process with status 2 after a single diagnostic line
``evonf-error[<code>]: <message>`` on stderr.
"""
import argparse
import logging
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from evonf import artifacts
from evonf.common import LOGLEVEL, OUTPUT_DIR, setup_logging
from evonf.common.exceptions import (
    EvoNFException,
    LayoutMismatchError,
    MissingArtifactError,
    ZeroVarianceError,
)
from evonf.common.path import mk_dir, seed_dir, seed_path
from evonf.config import RunConfig, build_config
from evonf.dataset import (
    Dataset,
    Metrics,
    apply_scaling,
    fingerprint,
    fit_scaling,
    load_csv,
    metrics,
    rmse,
    split,
    synth_generate,
    write_csv,
)
from evonf.evolution import evolve
from evonf.fuzzy import BELL, GAUSSIAN, BellMF, mf_values, tnorm_ss_reduce
from evonf.inference import count_active, infer_batch
from evonf.mlp import MLP, mlp_predict, mlp_train

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PreparedData:
    """Raw data plus the train/test parts scaled with the training statistics."""

    raw: Dataset
    train: Dataset
    test: Dataset
    fingerprint: str


def prepare_data(config: RunConfig) -> PreparedData:
    if config.data is not None:
        raw = load_csv(config.data)
    else:
        assert config.synth is not None
        raw = synth_generate(config.synth.n, config.synth.seed, config.synth.noise_sd)
    train, test = split(raw, config.train_fraction, config.split_seed)
    scaling = fit_scaling(train)
    logger.info("Split %d rows into %d train and %d test rows", len(raw), len(train), len(test))
    return PreparedData(
        raw, apply_scaling(train, scaling), apply_scaling(test, scaling), fingerprint(raw)
    )


def _metrics(prediction: np.ndarray, target: np.ndarray) -> Metrics:
    try:
        return metrics(prediction, target)
    except ZeroVarianceError:
        logger.warning("Constant predictions: correlation reported as nan.")
        return Metrics(rmse(prediction, target), float("nan"))


def run_train_evonf(config: RunConfig) -> Path:
    """Evolve one fuzzy model per seed and write its artifacts."""
    data = prepare_data(config)
    out = mk_dir(config.output_dir)
    names = data.train.schema.input_names
    rows: List[Dict[str, Any]] = []
    for seed in config.seeds:
        logger.info("EvoNF run with seed %d", seed)
        evolution = replace(config.evolution, rng_seed=seed)
        best, log = evolve(evolution, data.train, data.test, local_search=config.local_search)
        model = best.model
        train_pred = infer_batch(model, data.train.inputs)
        test_pred = infer_batch(model, data.test.inputs)
        results = {
            "train": _metrics(train_pred, data.train.targets),
            "test": _metrics(test_pred, data.test.targets),
        }
        seed_out = seed_dir(out, seed)
        artifacts.save_model(
            seed_out / artifacts.MODEL_FILE,
            best,
            names,
            data.train.scaling,
            data.train.schema.columns,
        )
        artifacts.write_generation_log(seed_out / artifacts.GENERATIONS_FILE, log)
        artifacts.write_rules(seed_out / artifacts.RULES_FILE, model, names)
        artifacts.write_metrics(seed_out / artifacts.METRICS_FILE, results)
        artifacts.write_predictions(
            seed_out / artifacts.PREDICTIONS_FILE,
            data.test.index.tolist(),
            data.test.targets.tolist(),
            test_pred.tolist(),
        )
        echo = {**config.to_dict(), "evolution": evolution.to_dict()}
        artifacts.write_json(seed_out / artifacts.CONFIG_FILE, echo)
        rows.append(
            {
                "seed": seed,
                "train_rmse": results["train"].rmse,
                "test_rmse": results["test"].rmse,
                "test_cc": results["test"].cc,
                "active_rules": count_active(model.rulebase),
            }
        )
        logger.info("Seed %d: train %s, test %s", seed, results["train"], results["test"])
    artifacts.write_summary(out / artifacts.SUMMARY_FILE, rows)
    artifacts.write_json(out / artifacts.CONFIG_FILE, config.to_dict())
    artifacts.write_metadata(out / artifacts.METADATA_FILE, "train-evonf", data.fingerprint)
    return out


def run_train_mlp(config: RunConfig) -> Path:
    """Train one baseline network per seed and write its artifacts."""
    data = prepare_data(config)
    out = mk_dir(config.output_dir)
    names = data.train.schema.input_names
    rows: List[Dict[str, Any]] = []
    for seed in config.seeds:
        logger.info("MLP run with seed %d", seed)
        mlp = replace(config.mlp, seed=seed)
        net = MLP.initialise(len(names), mlp.hidden, np.random.default_rng(seed))
        net, curve = mlp_train(net, data.train, mlp.rate, mlp.momentum, mlp.epochs)
        train_pred = mlp_predict(net, data.train.inputs)
        test_pred = mlp_predict(net, data.test.inputs)
        results = {
            "train": _metrics(train_pred, data.train.targets),
            "test": _metrics(test_pred, data.test.targets),
        }
        seed_out = seed_dir(out, seed)
        artifacts.save_mlp(seed_out / artifacts.MLP_FILE, net, names)
        artifacts.write_loss_curve(seed_out / artifacts.LOSS_CURVE_FILE, curve)
        artifacts.write_metrics(seed_out / artifacts.METRICS_FILE, results)
        artifacts.write_predictions(
            seed_out / artifacts.PREDICTIONS_FILE,
            data.test.index.tolist(),
            data.test.targets.tolist(),
            test_pred.tolist(),
        )
        artifacts.write_json(
            seed_out / artifacts.CONFIG_FILE, {**config.to_dict(), "mlp": asdict(mlp)}
        )
        rows.append(
            {
                "seed": seed,
                "train_rmse": results["train"].rmse,
                "test_rmse": results["test"].rmse,
                "test_cc": results["test"].cc,
            }
        )
        logger.info("Seed %d: train %s, test %s", seed, results["train"], results["test"])
    artifacts.write_summary(out / artifacts.SUMMARY_FILE, rows, artifacts.MLP_SUMMARY_COLUMNS)
    artifacts.write_json(out / artifacts.CONFIG_FILE, config.to_dict())
    artifacts.write_metadata(out / artifacts.METADATA_FILE, "train-mlp", data.fingerprint)
    return out


def _mean_row(summary: pd.DataFrame, run_dir: Path) -> pd.Series:
    mean = summary[summary["seed"].astype(str) == "mean"]
    if mean.empty:
        raise MissingArtifactError(f"No mean row in {run_dir / artifacts.SUMMARY_FILE}")
    return mean.iloc[0]


def _summary_seeds(summary: pd.DataFrame, run_dir: Path) -> List[str]:
    seeds = [s for s in summary["seed"].astype(str) if s != "mean"]
    if not seeds:
        raise MissingArtifactError(f"No seed rows in {run_dir / artifacts.SUMMARY_FILE}")
    return seeds


def _mean_predictions(run_dir: Path, seeds: Sequence[str]) -> pd.DataFrame:
    """Average the test predictions of the seeds listed in the run summary.

    Seed directories left over from earlier runs into the same directory are ignored.
    """
    frames = [
        artifacts.read_predictions(seed_path(run_dir, int(s)) / artifacts.PREDICTIONS_FILE)
        for s in seeds
    ]
    for frame in frames[1:]:
        if not frame["index"].equals(frames[0]["index"]):
            raise LayoutMismatchError(f"Seeds under {run_dir} used different test rows.")
    mean = frames[0][["index", "target"]].copy()
    mean["prediction"] = np.mean([f["prediction"].to_numpy() for f in frames], axis=0)
    return mean


def run_compare(evonf_dir: Path, mlp_dir: Path, output_dir: Path) -> Path:
    """Seed averaged train/test RMSE and test CC of both paradigms, plus test predictions."""
    out = mk_dir(output_dir)
    rows = []
    predictions = []
    for paradigm, run_dir in (("evonf", evonf_dir), ("mlp", mlp_dir)):
        summary = artifacts.read_csv(run_dir / artifacts.SUMMARY_FILE)
        mean = _mean_row(summary, run_dir)
        predictions.append(_mean_predictions(run_dir, _summary_seeds(summary, run_dir)))
        rows.append(
            {
                "paradigm": paradigm,
                "train_rmse": float(mean["train_rmse"]),
                "test_rmse": float(mean["test_rmse"]),
                "test_cc": float(mean["test_cc"]),
            }
        )
    artifacts.write_comparison(out / artifacts.COMPARISON_FILE, rows)

    fuzzy, net = predictions
    if not fuzzy["index"].equals(net["index"]):
        raise LayoutMismatchError("Both runs must be evaluated on the same test rows.")
    artifacts.write_csv_rows(
        out / artifacts.TEST_PREDICTIONS_FILE,
        ("index", "target", "evonf", "mlp"),
        zip(
            fuzzy["index"].tolist(),
            fuzzy["target"].tolist(),
            fuzzy["prediction"].tolist(),
            net["prediction"].tolist(),
        ),
    )
    artifacts.write_metadata(
        out / artifacts.METADATA_FILE, "compare", evonf=str(evonf_dir), mlp=str(mlp_dir)
    )
    print(pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return out


BELL_SWEEPS = {
    "p": [(p, 2.0, 0.0) for p in (1.0, 2.0, 4.0)],
    "q": [(2.0, q, 0.0) for q in (0.5, 1.0, 2.0, 4.0)],
    "r": [(2.0, 2.0, r) for r in (-3.0, 0.0, 3.0)],
}
TNORM_EXPONENTS = (0.01, 0.5, 1.0, 2.0, 10.0, 100.0)


def run_curves(output_dir: Path) -> Path:
    """Bell curves for sweeps of each shape parameter and T-norms of two bells over p."""
    out = mk_dir(output_dir)
    x = np.round(np.linspace(-10.0, 10.0, 201), 10)
    rows = []
    for swept, triples in BELL_SWEEPS.items():
        for p, q, r in triples:
            mf = BellMF(p, q, r)
            mu = mf_values(BELL, np.array([[mf.params]]), x[:, None])[:, 0, 0]
            rows.extend((swept, p, q, r, xi, m) for xi, m in zip(x, mu))
    artifacts.write_csv_rows(
        out / "bell_curves.csv", ("swept", "p", "q", "r", "x", "membership"), rows
    )

    pair = np.array([[[2.0, 2.0, -1.0], [2.0, 2.0, 1.0]]])
    mu = mf_values(BELL, pair, x[:, None])[:, 0, :]
    rows = []
    for exponent in TNORM_EXPONENTS:
        conj = tnorm_ss_reduce(mu, exponent)
        rows.extend((exponent, xi, a, b, t) for xi, (a, b), t in zip(x, mu, conj))
    artifacts.write_csv_rows(out / "tnorm_curves.csv", ("p", "x", "a", "b", "tnorm"), rows)
    artifacts.write_metadata(out / artifacts.METADATA_FILE, "curves")
    return out


def run_synth(n: int, seed: int, noise_sd: float, path: Path) -> Path:
    data = synth_generate(n, seed, noise_sd)
    mk_dir(path.parent)
    write_csv(data, path)
    logger.info("Wrote %d rows to %s (fingerprint %s)", len(data), path, fingerprint(data))
    return path


def _add_data_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="YAML run configuration")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--data", type=Path, help="CSV data file")
    source.add_argument("--synth-n", type=int, help="rows of synthetic data to generate")
    parser.add_argument("--synth-seed", type=int)
    parser.add_argument("--noise-sd", type=float)
    parser.add_argument("--seeds", type=int, nargs="+")
    parser.add_argument("--train-fraction", type=float)
    parser.add_argument("--split-seed", type=int)
    parser.add_argument("--output-dir", type=Path)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evonf", description="Evolutionary neuro-fuzzy modelling of export intensity."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="write a synthetic dataset")
    synth.add_argument("--n", type=int, default=69)
    synth.add_argument("--seed", type=int, default=7)
    synth.add_argument("--noise-sd", type=float, default=0.05)
    synth.add_argument("--out", type=Path, required=True)

    evonf = commands.add_parser("train-evonf", help="evolve Takagi-Sugeno models")
    _add_data_arguments(evonf)
    evonf.add_argument("--population", type=int)
    evonf.add_argument("--generations", type=int)
    evonf.add_argument("--gd-epochs", type=int)
    evonf.add_argument("--mf-kind", choices=(GAUSSIAN, BELL))
    evonf.add_argument("--mf-per-input", type=int)
    evonf.add_argument("--workers", type=int)
    evonf.add_argument("--target-rmse", type=float)

    mlp = commands.add_parser("train-mlp", help="train the perceptron baseline")
    _add_data_arguments(mlp)
    mlp.add_argument("--hidden", type=int)
    mlp.add_argument("--rate", type=float)
    mlp.add_argument("--momentum", type=float)
    mlp.add_argument("--epochs", type=int)

    compare = commands.add_parser("compare", help="compare EvoNF and MLP runs")
    compare.add_argument("--evonf", type=Path, required=True)
    compare.add_argument("--mlp", type=Path, required=True)
    compare.add_argument("--output-dir", type=Path)

    curves = commands.add_parser("curves", help="write operator illustration data")
    curves.add_argument("--output-dir", type=Path)
    return parser


def _set(layer: Dict[str, Any], section: Optional[str], key: str, value: Any) -> None:
    if value is None:
        return
    if section is None:
        layer[key] = value
    else:
        layer.setdefault(section, {})[key] = value


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Configuration layer holding only the flags given on the command line."""
    layer: Dict[str, Any] = {}
    if args.data is not None:
        layer["data"] = args.data
    if args.synth_n is not None:
        layer["data"] = None
        _set(layer, "synth", "n", args.synth_n)
    _set(layer, "synth", "seed", args.synth_seed)
    _set(layer, "synth", "noise_sd", args.noise_sd)
    _set(layer, None, "seeds", args.seeds)
    _set(layer, None, "train_fraction", args.train_fraction)
    _set(layer, None, "split_seed", args.split_seed)
    _set(layer, None, "output_dir", args.output_dir)
    flags = {
        "evolution": {
            "population_size": "population",
            "max_generations": "generations",
            "gd_epochs_per_eval": "gd_epochs",
            "mf_kind": "mf_kind",
            "mf_per_input": "mf_per_input",
            "workers": "workers",
            "target_rmse": "target_rmse",
        },
        "mlp": {"hidden": "hidden", "rate": "rate", "momentum": "momentum", "epochs": "epochs"},
    }
    for section, mapping in flags.items():
        for key, attr in mapping.items():
            _set(layer, section, key, getattr(args, attr, None))
    return layer


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    setup_logging(LOGLEVEL)
    try:
        if args.command == "synth":
            run_synth(args.n, args.seed, args.noise_sd, args.out)
        elif args.command in ("train-evonf", "train-mlp"):
            config = build_config(args.config, overrides_from_args(args))
            if args.command == "train-evonf":
                run_train_evonf(config)
            else:
                run_train_mlp(config)
        elif args.command == "compare":
            run_compare(args.evonf, args.mlp, args.output_dir or OUTPUT_DIR)
        elif args.command == "curves":
            run_curves(args.output_dir or OUTPUT_DIR)
    except EvoNFException as e:
        message = " ".join(str(e).split())
        print(f"evonf-error[{e.code}]: {message}", file=sys.stderr)
        return 2
    return 0
