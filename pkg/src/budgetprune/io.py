"""File formats: forest JSON, CSV and svmlight datasets, cost files, curves.

Floats are written in Python's shortest round-trip form, so reading a file
back gives bit-identical values, and identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forest import CostModel, DecisionTree, Forest

FORMAT = "budgetprune-forest"
VERSION = 1


class FormatError(ValueError):
    """A file does not follow the expected layout."""


# --------------------------------------------------------------------------
# forests

def forest_to_dict(forest: Forest) -> dict:
    trees = []
    for t in forest.trees:
        trees.append({
            "feature": t.feature.tolist(),
            "threshold": [None if leaf else float(v) for v, leaf in zip(t.threshold, t.is_leaf)],
            "left": t.left.tolist(),
            "right": t.right.tolist(),
            "sample_count": t.sample_count.tolist(),
            "error_count": t.error_count.tolist(),
            "class_distribution": t.class_distribution.tolist(),
            "predicted_label": t.predicted_label.tolist(),
        })
    return {
        "format": FORMAT,
        "version": VERSION,
        "num_trees": len(forest.trees),
        "num_features": forest.num_features,
        "num_classes": forest.num_classes,
        "classes": forest.classes,
        "trees": trees,
    }


def forest_from_dict(doc: dict) -> Forest:
    if doc.get("format") != FORMAT:
        raise FormatError("not a forest document")
    if doc.get("version") != VERSION:
        raise FormatError(f"unsupported forest version {doc.get('version')!r}")
    K, M = int(doc["num_features"]), int(doc["num_classes"])
    trees = []
    for t in doc["trees"]:
        thr = [0.0 if v is None else float(v) for v in t["threshold"]]
        trees.append(DecisionTree(t["feature"], thr, t["left"], t["right"], K, M,
                                  t["sample_count"], t["error_count"],
                                  np.array(t["class_distribution"], dtype=np.float64).reshape(-1, M),
                                  t["predicted_label"]))
    if len(trees) != doc["num_trees"]:
        raise FormatError("num_trees does not match the tree list")
    return Forest(trees, K, M, doc.get("classes"))


def dumps_forest(forest: Forest) -> str:
    return json.dumps(forest_to_dict(forest), sort_keys=True, separators=(",", ":")) + "\n"


def save_forest(forest: Forest, path) -> None:
    Path(path).write_text(dumps_forest(forest))


def load_forest(path) -> Forest:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return forest_from_dict(doc)


def save_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


# --------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    classes: list[str]


def _label_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def _encode(raw: list[str], classes: list[str] | None, path) -> tuple[np.ndarray, list[str]]:
    if classes is None:
        classes = sorted(set(raw), key=_label_key)
    index = {c: j for j, c in enumerate(classes)}
    unknown = sorted(set(raw) - index.keys())
    if unknown:
        raise FormatError(f"{path}: labels {unknown[:5]} not among the known classes")
    return np.array([index[s] for s in raw], dtype=np.int64), list(classes)


def _canonical_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def load_csv(path, label: str | None = None, classes=None) -> Dataset:
    """CSV with a header row. The label column is ``label`` if given, else a
    column named ``label``, else the last column; the rest are features."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label is not None:
        if label not in header:
            raise FormatError(f"{path}: no column named {label!r}")
        j = header.index(label)
    else:
        j = header.index("label") if "label" in header else len(header) - 1
    body = [r for r in rows[1:] if r]
    for n, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise FormatError(f"{path}:{n}: expected {len(header)} fields, got {len(r)}")
    raw = []
    X = np.empty((len(body), len(header) - 1))
    for n, r in enumerate(body):
        raw.append(r[j].strip())
        try:
            X[n] = [float(v) for c, v in enumerate(r) if c != j]
        except ValueError as exc:
            raise FormatError(f"{path}:{n + 2}: {exc}") from exc
    # numeric labels such as "1" and "1.0" name the same class
    raw = [_canonical_number(float(s)) if _label_key(s)[0] == 0 else s for s in raw]
    y, classes = _encode(raw, classes, path)
    return Dataset(X, y, classes)


def load_svmlight(path, n_features: int | None = None, classes=None) -> Dataset:
    from sklearn.datasets import load_svmlight_file

    try:
        X, yf = load_svmlight_file(str(path), n_features=n_features, zero_based=True)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    raw = [_canonical_number(v) for v in yf]
    y, classes = _encode(raw, classes, path)
    return Dataset(X.toarray(), y, classes)


SVMLIGHT_SUFFIXES = (".svm", ".svmlight", ".libsvm")


def load_dataset(path, label: str | None = None, classes=None, n_features: int | None = None) -> Dataset:
    """Dispatch on the file suffix: svmlight for .svm/.svmlight/.libsvm, CSV otherwise."""
    if Path(path).suffix.lower() in SVMLIGHT_SUFFIXES:
        ds = load_svmlight(path, n_features, classes)
    else:
        ds = load_csv(path, label, classes)
    if n_features is not None and ds.X.shape[1] != n_features:
        raise FormatError(f"{path}: {ds.X.shape[1]} features, expected {n_features}")
    return ds


# --------------------------------------------------------------------------
# costs

def load_costs(path, num_features: int) -> CostModel:
    """Rows ``feature_index,cost[,group_id]`` with 0-based indices; an optional
    header row is skipped. Every feature must be listed once. With groups,
    the listed cost is the group's cost and must agree within a group."""
    with open(path, newline="") as fh:
        rows = [[c.strip() for c in r] for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows:
        try:
            int(rows[0][0])
        except ValueError:
            rows = rows[1:]
    widths = {len(r) for r in rows}
    if not rows or not widths <= {2, 3} or len(widths) != 1:
        raise FormatError(f"{path}: expected rows feature_index,cost[,group_id]")
    costs = np.full(num_features, np.nan)
    groups = np.zeros(num_features, dtype=np.int64)
    for n, r in enumerate(rows):
        try:
            k, c = int(r[0]), float(r[1])
            g = int(r[2]) if len(r) == 3 else 0
        except ValueError as exc:
            raise FormatError(f"{path}: row {n + 1}: {exc}") from exc
        if not 0 <= k < num_features:
            raise FormatError(f"{path}: feature index {k} out of range")
        if not math.isnan(costs[k]):
            raise FormatError(f"{path}: feature {k} listed twice")
        if not (math.isfinite(c) and c >= 0):
            raise FormatError(f"{path}: cost of feature {k} must be finite and nonnegative")
        costs[k], groups[k] = c, g
    if np.isnan(costs).any():
        raise FormatError(f"{path}: no cost for feature {int(np.flatnonzero(np.isnan(costs))[0])}")
    if widths == {2}:
        return CostModel(costs)
    ids, group_of = np.unique(groups, return_inverse=True)
    group_costs = np.zeros(len(ids))
    for g in range(len(ids)):
        vals = np.unique(costs[group_of == g])
        if len(vals) != 1:
            raise FormatError(f"{path}: group {ids[g]} lists different costs {vals.tolist()}")
        group_costs[g] = vals[0]
    return CostModel(costs, group_of, group_costs)


# --------------------------------------------------------------------------
# curves

CURVE_HEADER = ("knob", "cost", "test_error", "train_error", "feature_cost_term", "gap", "seconds")


def format_number(v) -> str:
    """Shortest round-trip decimal; integers without a fraction; blanks for None."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_curve(rows, path, header=CURVE_HEADER) -> None:
    """Write dict rows with the given columns; missing values stay blank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_number(r.get(c)) if not isinstance(r.get(c), str) else r[c]
                        for c in header])


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
