"""On-disk formats of trained models and run results.

Models are JSON documents with an explicit format version; tables are plain CSV with a header
row. Timestamps only ever go into ``metadata.json`` so that all other artifacts of a seeded
run are byte-identical across repetitions.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Final, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import pendulum

from evonf import __version__
from evonf.common.exceptions import DataIOError, LayoutMismatchError, MissingArtifactError
from evonf.dataset import GENERATOR_VERSION, Metrics, Scaling
from evonf.evolution import GENERATION_LOG_COLUMNS, GenerationLog
from evonf.fuzzy import TNormParam
from evonf.genome import FIS_TYPE, EvoNFCandidate
from evonf.inference import RuleBase, TSKModel, export_rules
from evonf.local_search import LearnParams
from evonf.mlp import MLP

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION: Final = 1

MODEL_FILE: Final = "model.json"
MLP_FILE: Final = "mlp.json"
GENERATIONS_FILE: Final = "generations.csv"
RULES_FILE: Final = "rules.txt"
METRICS_FILE: Final = "metrics.csv"
PREDICTIONS_FILE: Final = "predictions.csv"
LOSS_CURVE_FILE: Final = "loss_curve.csv"
CONFIG_FILE: Final = "config.json"
SUMMARY_FILE: Final = "summary.csv"
METADATA_FILE: Final = "metadata.json"
COMPARISON_FILE: Final = "comparison.csv"
TEST_PREDICTIONS_FILE: Final = "test_predictions.csv"

MLP_SUMMARY_COLUMNS: Final = ("seed", "train_rmse", "test_rmse", "test_cc")
SUMMARY_COLUMNS: Final = MLP_SUMMARY_COLUMNS + ("active_rules",)
COMPARISON_COLUMNS: Final = ("paradigm", "train_rmse", "test_rmse", "test_cc")


def _format(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([_format(v) for v in row] for row in rows)
    except OSError as e:
        raise DataIOError(f"Cannot write {path}: {e}") from e
    logger.info("Wrote %s", path)
    return path


def write_json(path: Path, document: Mapping[str, Any]) -> Path:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(document, indent=2, sort_keys=True))
            f.write("\n")
    except OSError as e:
        raise DataIOError(f"Cannot write {path}: {e}") from e
    logger.info("Wrote %s", path)
    return path


def read_json(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise MissingArtifactError(f"Missing artifact {path}")
    with open(path, encoding="utf-8") as f:
        document: Dict[str, Any] = json.load(f)
    return document


def read_csv(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise MissingArtifactError(f"Missing artifact {path}")
    return pd.read_csv(path)


# fuzzy models ----------------------------------------------------------------------------


def model_to_dict(
    candidate: EvoNFCandidate,
    input_names: Sequence[str],
    scaling: Optional[Scaling] = None,
    columns: Optional[Sequence[str]] = None,
) -> Dict[str, Any]:
    model = candidate.model
    rb = model.rulebase
    return {
        "format": "evonf-model",
        "version": MODEL_FORMAT_VERSION,
        "fis_type": FIS_TYPE,
        "input_names": list(input_names),
        "mf_kind": model.mf_kind,
        "mf_params": model.mf_params.tolist(),
        "antecedents": rb.antecedents.astype(int).tolist(),
        "consequents": rb.consequents.tolist(),
        "active": rb.active.astype(int).tolist(),
        "tnorm_p": model.tnorm.p,
        "learn": {"rate": candidate.learn.rate, "momentum": candidate.learn.momentum},
        "fitness": candidate.fitness,
        "scaling": scaling.to_dict(columns) if scaling is not None and columns else None,
    }


def model_from_dict(document: Mapping[str, Any]) -> Tuple[EvoNFCandidate, List[str]]:
    if (
        document.get("format") != "evonf-model"
        or document.get("version") != MODEL_FORMAT_VERSION
    ):
        raise LayoutMismatchError(
            f"Unsupported model document {document.get('format')!r}"
            f" version {document.get('version')!r}"
        )
    model = TSKModel(
        document["mf_kind"],
        np.array(document["mf_params"], dtype=float),
        RuleBase(
            np.array(document["antecedents"], dtype=bool),
            np.array(document["consequents"], dtype=float),
            np.array(document["active"], dtype=bool),
        ),
        TNormParam(float(document["tnorm_p"])),
    )
    learn = LearnParams(document["learn"]["rate"], document["learn"]["momentum"])
    return EvoNFCandidate(model, learn, document.get("fitness")), list(document["input_names"])


def save_model(
    path: Path,
    candidate: EvoNFCandidate,
    input_names: Sequence[str],
    scaling: Optional[Scaling] = None,
    columns: Optional[Sequence[str]] = None,
) -> Path:
    return write_json(path, model_to_dict(candidate, input_names, scaling, columns))


def load_model(path: Path) -> Tuple[EvoNFCandidate, List[str]]:
    return model_from_dict(read_json(path))


def write_rules(path: Path, model: TSKModel, input_names: Sequence[str]) -> Path:
    text = export_rules(model, input_names)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"Cannot write {path}: {e}") from e
    logger.info("Wrote %s", path)
    return path


def write_generation_log(path: Path, log: Sequence[GenerationLog]) -> Path:
    return write_csv_rows(
        path,
        GENERATION_LOG_COLUMNS,
        (
            (e.generation, e.best_train_rmse, e.mean_train_rmse, e.best_test_rmse, e.active_rules)
            for e in log
        ),
    )


# baseline network ------------------------------------------------------------------------


def save_mlp(path: Path, net: MLP, input_names: Sequence[str]) -> Path:
    return write_json(
        path,
        {
            "format": "evonf-mlp",
            "version": MODEL_FORMAT_VERSION,
            "input_names": list(input_names),
            "w1": net.w1.tolist(),
            "b1": net.b1.tolist(),
            "w2": net.w2.tolist(),
            "b2": net.b2,
        },
    )


def load_mlp(path: Path) -> MLP:
    document = read_json(path)
    if document.get("format") != "evonf-mlp":
        raise LayoutMismatchError(f"{path} is not a network document.")
    return MLP(
        np.array(document["w1"], dtype=float),
        np.array(document["b1"], dtype=float),
        np.array(document["w2"], dtype=float),
        float(document["b2"]),
    )


def write_loss_curve(path: Path, curve: Sequence[float]) -> Path:
    return write_csv_rows(path, ("epoch", "train_rmse"), enumerate(curve, start=1))


# results ---------------------------------------------------------------------------------


def write_metrics(path: Path, results: Mapping[str, Metrics]) -> Path:
    return write_csv_rows(
        path, ("split", "rmse", "cc"), ((split, m.rmse, m.cc) for split, m in results.items())
    )


def read_metrics(path: Path) -> Dict[str, Metrics]:
    frame = read_csv(path)
    return {
        str(row.split): Metrics(float(row.rmse), float(row.cc))
        for row in frame.itertuples(index=False)
    }


def write_predictions(
    path: Path, index: Sequence[int], target: Sequence[float], prediction: Sequence[float]
) -> Path:
    return write_csv_rows(
        path, ("index", "target", "prediction"), zip(index, target, prediction)
    )


def read_predictions(path: Path) -> pd.DataFrame:
    return read_csv(path)


def write_summary(
    path: Path, rows: Sequence[Mapping[str, Any]], columns: Sequence[str] = SUMMARY_COLUMNS
) -> Path:
    """Per-seed result rows followed by a ``mean`` row."""
    frame = pd.DataFrame(list(rows), columns=list(columns))
    means = frame.drop(columns="seed").astype(float).mean()
    body: List[List[Any]] = [[row[c] for c in columns] for row in rows]
    body.append(["mean"] + [float(means[c]) for c in columns[1:]])
    return write_csv_rows(path, columns, body)


def write_comparison(path: Path, rows: Sequence[Mapping[str, Any]]) -> Path:
    return write_csv_rows(
        path, COMPARISON_COLUMNS, ([row[c] for c in COMPARISON_COLUMNS] for row in rows)
    )


def write_metadata(
    path: Path, command: str, fingerprint: Optional[str] = None, **extra: Any
) -> Path:
    """Run provenance; the only artifact carrying a timestamp."""
    return write_json(
        path,
        {
            "command": command,
            "created": pendulum.now("UTC").to_iso8601_string(),
            "evonf_version": __version__,
            "generator_version": GENERATOR_VERSION,
            "dataset_fingerprint": fingerprint,
            **extra,
        },
    )
