"""CSV datasets, the JSON model artifact and classification tables.

Floats are written with ``repr``, the shortest string that parses back to
the same double, so every numeric field survives a save/load cycle exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .covariance import EigenDecomposition, ModelName
from .criteria import PenaltySpec
from .errors import EmptyTrainingClass, ParseError, SchemaVersionError, ShapeError
from .transductive import FitResult, LabeledDataset, MixtureParameters, UnlabeledDataset

__all__ = [
    "SCHEMA_VERSION",
    "UNLABELED",
    "Artifact",
    "read_table",
    "load_datasets",
    "artifact_from_fit",
    "dumps_artifact",
    "loads_artifact",
    "save_artifact",
    "load_artifact",
    "class_display_names",
    "classification_rows",
    "write_csv",
]

SCHEMA_VERSION = 1
UNLABELED = "?"


# ---------------------------------------------------------------------------
# datasets


def read_table(path, label_column: str | None = None):
    """Read a CSV with a header: ``(feature names, features (n, p), labels or None)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    label_idx = None
    if label_column is not None and label_column in header:
        label_idx = header.index(label_column)
    feat_idx = [i for i in range(len(header)) if i != label_idx]
    X = np.empty((len(rows) - 1, len(feat_idx)))
    labels = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        for j, i in enumerate(feat_idx):
            try:
                v = float(row[i])
            except ValueError:
                raise ParseError(f"{path}: row {r}, column {header[i]!r}: {row[i]!r} is not a number") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: row {r}, column {header[i]!r}: non-finite value")
            X[r - 2, j] = v
        if label_idx is not None:
            labels.append(row[label_idx].strip())
    return [header[i] for i in feat_idx], X, (labels if label_idx is not None else None)


def _is_unlabeled(label: str) -> bool:
    return label == "" or label == UNLABELED


def load_datasets(train_path=None, test_path=None, combined_path=None, label_column: str = "label"):
    """Labelled and unlabelled datasets from two files or one combined file.

    In a combined file rows labelled ``?`` (or empty) are unlabelled.  Class
    names are sorted lexicographically and numbered in that order.
    """
    if combined_path is not None:
        if train_path is not None or test_path is not None:
            raise ParseError("give either a combined file or train/test files")
        names, Z, labels = read_table(combined_path, label_column)
        if labels is None:
            raise ParseError(f"{combined_path}: no label column {label_column!r}")
        mask = np.array([not _is_unlabeled(s) for s in labels], dtype=bool)
        X, Y = Z[mask], Z[~mask]
        train_labels = [s for s, m in zip(labels, mask) if m]
    else:
        if train_path is None or test_path is None:
            raise ParseError("both a training and a test file are required")
        names, X, train_labels = read_table(train_path, label_column)
        if train_labels is None:
            raise ParseError(f"{train_path}: no label column {label_column!r}")
        test_names, Y, _ = read_table(test_path, label_column)
        if test_names != names:
            raise ParseError(f"feature columns differ: {names} vs {test_names}")
        keep = np.array([not _is_unlabeled(s) for s in train_labels], dtype=bool)
        X = X[keep]
        train_labels = [s for s, k in zip(train_labels, keep) if k]
    if not train_labels:
        raise EmptyTrainingClass("the training data contain no labelled rows")
    classes = sorted(set(train_labels))
    ids = {c: i for i, c in enumerate(classes)}
    labeled = LabeledDataset(X.reshape(len(train_labels), len(names)), np.array([ids[s] for s in train_labels]), tuple(classes))
    return labeled, UnlabeledDataset(Y.reshape(Y.shape[0], len(names)))


# ---------------------------------------------------------------------------
# artifact


@dataclass(frozen=True, eq=False)
class Artifact:
    approach: str
    model: ModelName
    learning_model: ModelName | None
    class_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    params: MixtureParameters
    alpha_l: float
    alpha_u: float
    c: float
    c_tilde: float
    density_quantiles: tuple[tuple[float, float], ...]
    density_threshold: float
    training_quantiles: tuple[tuple[float, float], ...]
    seed: int
    loglik_trace: tuple[float, ...]
    rbic: float
    penalty: PenaltySpec

    @property
    def G(self) -> int:
        return self.params.G

    @property
    def E(self) -> int:
        return self.params.E

    @property
    def p(self) -> int:
        return self.params.p


def artifact_from_fit(fit: FitResult, class_names=None, feature_names=None) -> Artifact:
    learned = fit.extras.get("learned")
    G, p = fit.params.G, fit.params.p
    return Artifact(
        approach=fit.approach,
        model=fit.model,
        learning_model=learned.model if learned is not None else None,
        class_names=tuple(class_names) if class_names is not None else tuple(str(g + 1) for g in range(G)),
        feature_names=tuple(feature_names) if feature_names is not None else tuple(f"x{j + 1}" for j in range(p)),
        params=fit.params,
        alpha_l=fit.alpha_l,
        alpha_u=fit.alpha_u,
        c=fit.c,
        c_tilde=fit.c_tilde,
        density_quantiles=tuple(fit.extras.get("density_quantiles", ())),
        density_threshold=float(fit.extras.get("density_threshold", -math.inf)),
        training_quantiles=tuple(learned.density_quantiles) if learned is not None else (),
        seed=fit.seed,
        loglik_trace=tuple(fit.loglik_trace),
        rbic=fit.rbic,
        penalty=fit.penalty,
    )


def _num(x: float):
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _unnum(x) -> float:
    return float(x)


def _vec(a) -> list:
    return [_num(v) for v in np.asarray(a, dtype=float).ravel()]


def _artifact_dict(a: Artifact) -> dict:
    P = a.params
    return {
        "schema_version": SCHEMA_VERSION,
        "approach": a.approach,
        "model": str(a.model),
        "learning_model": None if a.learning_model is None else str(a.learning_model),
        "G": P.G,
        "E": P.E,
        "p": P.p,
        "class_names": list(a.class_names),
        "feature_names": list(a.feature_names),
        "tau": _vec(P.tau),
        "mu": [_vec(m) for m in P.mu],
        "sigma": [
            {"lambda": _num(s.lam), "shape": _vec(s.shape), "orientation": [_vec(r) for r in s.orientation]}
            for s in P.sigma
        ],
        "alpha_l": _num(a.alpha_l),
        "alpha_u": _num(a.alpha_u),
        "c": _num(a.c),
        "c_tilde": _num(a.c_tilde),
        "density_quantiles": [[_num(l), _num(q)] for l, q in a.density_quantiles],
        "density_threshold": _num(a.density_threshold),
        "training_quantiles": [[_num(l), _num(q)] for l, q in a.training_quantiles],
        "seed": int(a.seed),
        "loglik_trace": _vec(a.loglik_trace),
        "rbic": _num(a.rbic),
        "penalty": {
            "kappa": a.penalty.kappa,
            "gamma": a.penalty.gamma,
            "delta": a.penalty.delta,
            "c": _num(a.penalty.c),
            "n_star": a.penalty.n_star,
            "approach": a.penalty.approach,
        },
    }


def dumps_artifact(a: Artifact) -> str:
    return json.dumps(_artifact_dict(a), indent=1, allow_nan=False) + "\n"


def loads_artifact(text: str) -> Artifact:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"artifact is not valid JSON: {exc}") from None
    version = d.get("schema_version") if isinstance(d, dict) else None
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported artifact schema version {version!r} (supported: {SCHEMA_VERSION})")
    try:
        sigma = []
        for s in d["sigma"]:
            sigma.append(
                EigenDecomposition(
                    _unnum(s["lambda"]),
                    np.array([_unnum(v) for v in s["shape"]]),
                    np.array([[_unnum(v) for v in r] for r in s["orientation"]]),
                )
            )
        params = MixtureParameters(
            np.array([_unnum(v) for v in d["tau"]]),
            np.array([[_unnum(v) for v in m] for m in d["mu"]]),
            tuple(sigma),
            int(d["G"]),
            ModelName(d["model"]),
        )
        if params.E != int(d["E"]) or params.p != int(d["p"]):
            raise ShapeError("artifact dimensions disagree with its arrays")
        pen = d["penalty"]
        return Artifact(
            approach=d["approach"],
            model=ModelName(d["model"]),
            learning_model=None if d["learning_model"] is None else ModelName(d["learning_model"]),
            class_names=tuple(d["class_names"]),
            feature_names=tuple(d["feature_names"]),
            params=params,
            alpha_l=_unnum(d["alpha_l"]),
            alpha_u=_unnum(d["alpha_u"]),
            c=_unnum(d["c"]),
            c_tilde=_unnum(d["c_tilde"]),
            density_quantiles=tuple((_unnum(l), _unnum(q)) for l, q in d["density_quantiles"]),
            density_threshold=_unnum(d["density_threshold"]),
            training_quantiles=tuple((_unnum(l), _unnum(q)) for l, q in d["training_quantiles"]),
            seed=int(d["seed"]),
            loglik_trace=tuple(_unnum(v) for v in d["loglik_trace"]),
            rbic=_unnum(d["rbic"]),
            penalty=PenaltySpec(int(pen["kappa"]), int(pen["gamma"]), int(pen["delta"]), _unnum(pen["c"]), int(pen["n_star"]), pen["approach"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed artifact: {exc!r}") from None


def save_artifact(a: Artifact, path) -> None:
    Path(path).write_text(dumps_artifact(a))


def load_artifact(path) -> Artifact:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    return loads_artifact(text)


# ---------------------------------------------------------------------------
# classification tables


def class_display_names(class_names, E: int) -> list[str]:
    """Known class names followed by ``HIDDEN_1 .. HIDDEN_H``."""
    names = list(class_names)
    return names + [f"HIDDEN_{h + 1}" for h in range(E - len(names))]


def classification_rows(labels, max_post, trimmed, names) -> list[list]:
    return [
        [i + 1, names[int(g)], repr(float(p)), int(bool(t))]
        for i, (g, p, t) in enumerate(zip(labels, max_post, trimmed))
    ]


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
