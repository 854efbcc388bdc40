"""Train random-forest classifiers and export them as `.forest` text models.

The exported model targets the packed-inference toolchain's conventions:
unsigned fixed-point thresholds, decision = feature > threshold with the
firing side on the right.  scikit-learn splits send feature <= threshold
to the left child, which is the same routing once thresholds are floored
onto the fixed-point grid, so children are emitted unswapped.

Features are min-max scaled onto the integer grid [0, 2^p - 1] and the
classifier is trained on the quantized values, so the exported model and
the host library see identical inputs; quantization is then the only
possible source of prediction divergence.
"""

from __future__ import annotations

import json
import shutil
import subprocess
import tempfile
from dataclasses import asdict, dataclass
from decimal import Decimal
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.ensemble import RandomForestClassifier
from sklearn.model_selection import train_test_split


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class ExportConfig:
    dataset: str
    label_column: str
    trees: int = 5
    max_depth: int = 8
    precision: int = 8
    frac_bits: int = 0
    seed: int = 1
    test_fraction: float = 0.25


@dataclass
class ExportResult:
    forest_path: str
    sidecar_path: str
    n_features: int
    used_features: int
    train_accuracy: float
    test_accuracy: float
    match_rate: float | None = None


def load_dataset(cfg: ExportConfig) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """CSV -> (feature matrix, labels, feature column names)."""
    try:
        frame = pd.read_csv(cfg.dataset)
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise ExportError(f"cannot load dataset {cfg.dataset}: {exc}") from exc
    if cfg.label_column not in frame.columns:
        raise ExportError(f"label column {cfg.label_column!r} not in dataset")
    labels = frame[cfg.label_column].to_numpy()
    features = frame.drop(columns=[cfg.label_column])
    if features.shape[1] == 0:
        raise ExportError("dataset has no feature columns")
    try:
        matrix = features.to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise ExportError(f"non-numeric feature column: {exc}") from exc
    return matrix, labels, list(features.columns)


def quantize_features(matrix: np.ndarray, p: int,
                      lo: np.ndarray | None = None,
                      hi: np.ndarray | None = None):
    """Min-max scale each column onto the integer grid [0, 2^p - 1]."""
    if lo is None:
        lo = matrix.min(axis=0)
    if hi is None:
        hi = matrix.max(axis=0)
    top = (1 << p) - 1
    span = np.where(hi > lo, hi - lo, 1.0)
    units = np.rint((matrix - lo) / span * top)
    return np.clip(units, 0, top), lo, hi


def _label_token(value) -> str:
    return "_".join(str(value).split()) or "_"


def _emit_tree(tree, frac_bits: int) -> tuple[str, int]:
    """One `.forest` tree line from a fitted sklearn tree; returns (text, max feature)."""
    left = tree.children_left
    right = tree.children_right
    feature = tree.feature
    threshold = tree.threshold
    value = tree.value
    scale = Decimal(1 << frac_bits)
    max_feature = -1

    def emit(node: int) -> str:
        nonlocal max_feature
        if left[node] == -1:
            label = int(np.argmax(value[node][0]))
            return f"leaf {label}"
        f = int(feature[node])
        max_feature = max(max_feature, f)
        units = int(np.floor(threshold[node]))
        text = Decimal(units) / scale
        return (f"branch {f} {text} {emit(int(left[node]))} "
                f"{emit(int(right[node]))}")

    return emit(0), max_feature


def train_and_export(cfg: ExportConfig, out_base: str) -> ExportResult:
    """Train, export <out_base>.forest plus a JSON sidecar, report accuracy."""
    matrix, labels, columns = load_dataset(cfg)
    units, lo, hi = quantize_features(matrix, cfg.precision)
    x_train, x_test, y_train, y_test = train_test_split(
        units, labels, test_size=cfg.test_fraction, random_state=cfg.seed)

    clf = RandomForestClassifier(n_estimators=cfg.trees,
                                 max_depth=cfg.max_depth,
                                 random_state=cfg.seed)
    clf.fit(x_train, y_train)

    lines = ["labels " + " ".join(_label_token(c) for c in clf.classes_)]
    used = -1
    for estimator in clf.estimators_:
        text, max_f = _emit_tree(estimator.tree_, cfg.frac_bits)
        lines.append(text)
        used = max(used, max_f)
    if used < 0:
        raise ExportError("trained forest contains no splits; nothing to export")

    forest_path = Path(f"{out_base}.forest")
    forest_path.parent.mkdir(parents=True, exist_ok=True)
    forest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    sidecar = {
        "config": asdict(cfg),
        "feature_columns": columns,
        "classes": [_label_token(c) for c in clf.classes_],
        "scaling": {"min": lo.tolist(), "max": hi.tolist()},
        "model_features_used": used + 1,
        "train_accuracy": float(clf.score(x_train, y_train)),
        "test_accuracy": float(clf.score(x_test, y_test)),
    }
    sidecar_path = Path(f"{out_base}.json")
    sidecar_path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")

    return ExportResult(
        forest_path=str(forest_path),
        sidecar_path=str(sidecar_path),
        n_features=len(columns),
        used_features=used + 1,
        train_accuracy=sidecar["train_accuracy"],
        test_accuracy=sidecar["test_accuracy"],
    )


# -- cross-check against the inference toolchain --------------------------------


def _units_to_text(units: float, frac_bits: int) -> str:
    return str(Decimal(int(units)) / Decimal(1 << frac_bits))


def _query_blocks(units: np.ndarray, n_features: int, frac_bits: int) -> str:
    blocks = []
    for row in units:
        lines = [f"feature {f} {_units_to_text(row[f], frac_bits)}"
                 for f in range(n_features)]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def verify_export(cfg: ExportConfig, out_base: str, result: ExportResult,
                  copse_bin: str | None = None, max_samples: int = 200) -> float:
    """Match rate between the exported model's predictions and the host's.

    Re-trains with the same seed to recover the held-out split, compiles
    the exported file with the `copse` CLI, classifies the held-out
    samples through it, and compares pluralities against the classifier's
    own predictions on the identical quantized inputs.  Updates the
    sidecar with the measured rate.
    """
    copse_bin = copse_bin or shutil.which("copse")
    if not copse_bin:
        raise ExportError("copse CLI not found; pass copse_bin explicitly")

    matrix, labels, _ = load_dataset(cfg)
    units, _, _ = quantize_features(matrix, cfg.precision)
    x_train, x_test, y_train, _ = train_test_split(
        units, labels, test_size=cfg.test_fraction, random_state=cfg.seed)
    clf = RandomForestClassifier(n_estimators=cfg.trees,
                                 max_depth=cfg.max_depth,
                                 random_state=cfg.seed)
    clf.fit(x_train, y_train)

    sample = x_test[:max_samples]
    expected = [_label_token(c) for c in clf.predict(sample)]

    with tempfile.TemporaryDirectory() as tmp:
        manifest = Path(tmp) / "model.copse"
        compile_cmd = [copse_bin, "compile", result.forest_path,
                       "-o", str(manifest), "-p", str(cfg.precision),
                       "--frac-bits", str(cfg.frac_bits)]
        proc = subprocess.run(compile_cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise ExportError(f"compile failed: {proc.stderr.strip()}")

        queries = Path(tmp) / "queries.txt"
        queries.write_text(
            _query_blocks(sample, result.used_features, cfg.frac_bits),
            encoding="utf-8")
        proc = subprocess.run([copse_bin, "infer", str(manifest), str(queries)],
                              capture_output=True, text=True)
        if proc.returncode != 0:
            raise ExportError(f"infer failed: {proc.stderr.strip()}")

    got = [line.split()[1] for line in proc.stdout.splitlines()
           if line.startswith("plurality ")]
    if len(got) != len(expected):
        raise ExportError(
            f"expected {len(expected)} results, got {len(got)}")
    matches = sum(g == e for g, e in zip(got, expected))
    rate = matches / len(expected)

    sidecar_path = Path(result.sidecar_path)
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    sidecar["oracle_match_rate"] = rate
    sidecar["oracle_match_samples"] = len(expected)
    sidecar_path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    result.match_rate = rate
    return rate
