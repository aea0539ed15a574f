"""Command-line interface: ``raedda fit | predict | simulate | benchmark``.

Exit status 0 on success, 2 for unreadable input or bad options, 3 when the
estimation itself fails (the diagnostics are written next to the outputs).
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from pathlib import Path

import numpy as np

from .covariance import MODEL_ORDER, ModelName, allowed_discovery_models
from .errors import (
    ConfigError,
    EmptyInput,
    EmptyTrainingClass,
    InvalidConstraint,
    ModelLatticeViolation,
    ParseError,
    RaeddaError,
    SchemaVersionError,
    SearchFailure,
    ShapeError,
)
from .files import (
    artifact_from_fit,
    class_display_names,
    classification_rows,
    load_artifact,
    load_datasets,
    read_table,
    save_artifact,
    write_csv,
)
from .inductive import fit_inductive, predict_new
from .selection import SearchGrid, search
from .simulation import CONTAMINATION, PROPORTIONS, SCENARIOS, MethodSpec, ScenarioSpec, generate_scenario, run_monte_carlo
from .transductive import FitConfig, fit_transductive

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 2, 3
_USAGE_ERRORS = (
    ConfigError,
    ParseError,
    ShapeError,
    SchemaVersionError,
    EmptyInput,
    EmptyTrainingClass,
    ModelLatticeViolation,
    InvalidConstraint,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("RAEDDA_JOBS", "1")))
    except ValueError:
        return 1


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _classes_arg(text: str):
    """``E`` or ``search:MAX`` -> tuple of candidate class counts (minimum filled in later)."""
    if text.startswith("search:"):
        return ("search", int(text.split(":", 1)[1]))
    return ("fixed", int(text))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raedda", description="Robust adaptive eigen-decomposition discriminant analysis")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="fit a model and classify the test rows")
    fit.add_argument("--train", help="training CSV with a label column")
    fit.add_argument("--test", help="test CSV")
    fit.add_argument("--data", help="combined CSV; rows labelled '?' are test rows")
    fit.add_argument("--label-column", default="label")
    fit.add_argument("--approach", choices=("transductive", "inductive"), default="transductive")
    fit.add_argument("--alpha-l", type=float, default=0.0)
    fit.add_argument("--alpha-u", type=float, default=0.0)
    fit.add_argument("--c", default="auto", help="a number >= 1, 'auto' or 'auto:MULT'")
    fit.add_argument("--model", default="VVV", help="model name or 'search'")
    fit.add_argument("--learning-model", help="inductive learning-phase model (default: same as --model)")
    fit.add_argument("--classes", default=None, help="number of classes E or 'search:MAX' (default: G)")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--n-init", type=int, default=30)
    fit.add_argument("--n-init-hidden", type=int, default=30)
    fit.add_argument("--max-iter", type=int, default=1000)
    fit.add_argument("--epsilon", type=float, default=1e-5)
    fit.add_argument("--jobs", type=int, default=_default_jobs())
    fit.add_argument("--out", required=True, help="output directory")

    pred = sub.add_parser("predict", help="classify new rows with a saved model")
    pred.add_argument("--model", required=True, help="artifact JSON written by 'fit'")
    pred.add_argument("--data", required=True)
    pred.add_argument("--label-column", default="label", help="ignored column if present")
    pred.add_argument("--out", required=True, help="output CSV")

    sim = sub.add_parser("simulate", help="write one synthetic replicate")
    _scenario_args(sim, multi=False)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output directory")

    bench = sub.add_parser("benchmark", help="Monte-Carlo runs over scenarios and settings")
    _scenario_args(bench, multi=True)
    bench.add_argument("--approach", default="transductive", help="comma-separated approaches")
    bench.add_argument("--models", default=None, help="comma-separated models (default: the scenario's own)")
    bench.add_argument("--classes", default="3", help="comma-separated candidate numbers of classes")
    bench.add_argument("--c", default="auto", help="constraint spec used with multiplier 1")
    bench.add_argument("--trim-multipliers", default="1", type=_float_list)
    bench.add_argument("--c-multipliers", default=None, type=_float_list, help="auto-constraint multipliers")
    bench.add_argument("--B", type=int, default=5)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--n-init", type=int, default=10)
    bench.add_argument("--n-init-hidden", type=int, default=10)
    bench.add_argument("--jobs", type=int, default=_default_jobs())
    bench.add_argument("--out", required=True, help="output directory")
    return parser


def _scenario_args(p, multi: bool):
    suffix = " (comma-separated)" if multi else ""
    p.add_argument("--scenario", default="EII", help=f"one of {', '.join(SCENARIOS)}{suffix}")
    p.add_argument("--proportions", default="equal", help=f"one of {', '.join(PROPORTIONS)}{suffix}")
    p.add_argument("--contamination", default="none", help=f"one of {', '.join(CONTAMINATION)}{suffix}")


# ---------------------------------------------------------------------------
# fit


def _fit_config(args) -> FitConfig:
    return FitConfig(
        alpha_l=args.alpha_l,
        alpha_u=args.alpha_u,
        c=args.c,
        n_init=args.n_init,
        n_init_hidden=args.n_init_hidden,
        max_iter=args.max_iter,
        epsilon=args.epsilon,
        seed=args.seed,
    )


def _ranking_rows(result) -> list[list]:
    rows = []
    for i, cell in enumerate(result.ranking, start=1):
        rows.append([i, str(cell.model), cell.E, str(cell.c_spec), repr(cell.c), repr(cell.rbic), repr(cell.loglik), int(cell.converged), ""])
    for cell in result.failed:
        rows.append(["", str(cell.model), cell.E, str(cell.c_spec), "", "", "", 0, cell.error])
    return rows


def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labeled, unlabeled = load_datasets(args.train, args.test, args.data, args.label_column)
    names, _, _ = read_table(args.data or args.train, args.label_column)
    config = _fit_config(args)
    G = labeled.G
    mode, value = _classes_arg(args.classes) if args.classes else ("fixed", G)
    E_range = tuple(range(G, value + 1)) if mode == "search" else (value,)
    if not E_range or min(E_range) < G:
        raise ConfigError(f"the number of classes must be at least G={G}")
    search_models = args.model == "search"
    try:
        if search_models or len(E_range) > 1:
            models = MODEL_ORDER if search_models else (ModelName(args.model),)
            grid = SearchGrid(E_range, models, (args.c,), args.alpha_l, args.alpha_u)
            result = search(grid, labeled, unlabeled, config, args.approach, jobs=args.jobs)
            fit = result.best
            header = ["rank", "model", "E", "c_spec", "c", "rbic", "loglik", "converged", "error"]
            write_csv(out / "ranking.csv", header, _ranking_rows(result))
            if result.learning:
                write_csv(out / "learning_ranking.csv", ["model", "rbic"], [[str(m), repr(r)] for m, r in result.learning])
        elif args.approach == "transductive":
            fit = fit_transductive(config, labeled, unlabeled, E_range[0], args.model)
        else:
            learning = args.learning_model or args.model
            if ModelName(args.model) not in allowed_discovery_models(learning):
                raise ModelLatticeViolation(f"{args.model} cannot follow learning model {learning}")
            fit = fit_inductive(config, labeled, unlabeled, E_range[0], learning, args.model)
    except RaeddaError as exc:
        if isinstance(exc, _USAGE_ERRORS):
            raise
        lines = [f"{type(exc).__name__}: {exc}"] + list(getattr(exc, "diagnostics", []) or [])
        (out / "diagnostics.txt").write_text("\n".join(lines) + "\n")
        print(lines[0], file=sys.stderr)
        return EXIT_FAILED

    artifact = artifact_from_fit(fit, labeled.class_names, names)
    save_artifact(artifact, out / "model.json")
    display = class_display_names(labeled.class_names, fit.E)
    n = fit.n_test
    post = fit.posteriors[:n]
    rows = classification_rows(np.argmax(post, axis=1), post.max(axis=1), ~fit.trimming.phi[:n], display)
    write_csv(out / "classification.csv", ["row_id", "class", "max_posterior", "trimmed"], rows)
    if fit.approach == "inductive":
        rec = [
            [i + 1, labeled.class_names[g], display[m], int(not kept)]
            for i, g, m, kept in fit.extras.get("recovered", ())
        ]
        write_csv(out / "recovered.csv", ["train_row_id", "given_class", "class", "trimmed"], rec)
    trimmed_train = np.flatnonzero(~fit.trimming.zeta) + 1
    report = [
        f"approach: {fit.approach}",
        f"model: {fit.model}",
        f"classes: E={fit.E} (G={fit.G}, hidden={fit.E - fit.G})",
        f"c: {fit.c!r} (c_tilde {fit.c_tilde!r})",
        f"trimmed log-likelihood: {fit.loglik!r}",
        f"RBIC: {fit.rbic!r}",
        f"iterations: {fit.n_iter}, converged: {fit.converged}",
        f"trimmed training rows: {' '.join(str(i) for i in trimmed_train) or 'none'}",
    ] + [f"note: {d}" for d in fit.diagnostics]
    (out / "report.txt").write_text("\n".join(report) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args) -> int:
    art = load_artifact(args.model)
    names, X, _ = read_table(args.data, args.label_column)
    if X.shape[1] != art.p:
        raise ShapeError(f"{args.data} has {X.shape[1]} feature columns, the model expects {art.p}")
    display = class_display_names(art.class_names, art.E)
    rows = []
    if X.shape[0]:
        labels, outlier, mix = predict_new(art.params, X, art.density_threshold)
        max_post = np.exp(art.params.log_joint(X).max(axis=1) - mix)
        rows = classification_rows(labels, max_post, outlier, display)
    write_csv(args.out, ["row_id", "class", "max_posterior", "outlier"], rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / benchmark


def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_simulate(args) -> int:
    spec = ScenarioSpec(args.scenario, args.proportions, args.contamination, args.seed)
    labeled, unlabeled, truth = generate_scenario(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    feats = [f"x{j + 1}" for j in range(labeled.p)]
    given = [labeled.class_names[g] for g in labeled.labels]
    write_csv(out / "train.csv", ["label"] + feats, [[g] + [_fmt(v) for v in row] for g, row in zip(given, labeled.X)])
    write_csv(out / "test.csv", feats, [[_fmt(v) for v in row] for row in unlabeled.Y])
    flipped = set(truth.flipped.tolist())

    def name(k):
        return "outlier" if k < 0 else str(k + 1)

    rows = [["train", i + 1, name(k), given[i], int(i in flipped)] for i, k in enumerate(truth.train_labels)]
    rows += [["test", i + 1, name(k), "", 0] for i, k in enumerate(truth.test_labels)]
    write_csv(out / "truth.csv", ["set", "row_id", "true_class", "given_label", "flipped"], rows)
    return EXIT_OK


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def cmd_benchmark(args) -> int:
    scenarios = [
        ScenarioSpec(s, p, c)
        for s, p, c in itertools.product(_split(args.scenario), _split(args.proportions), _split(args.contamination))
    ]
    E_range = tuple(int(v) for v in _split(args.classes))
    c_specs = [args.c] if not args.c_multipliers else [f"auto:{m!r}" for m in args.c_multipliers]
    cells = []
    for scen, approach, trim, c in itertools.product(scenarios, _split(args.approach), args.trim_multipliers, c_specs):
        models = tuple(_split(args.models)) if args.models else (scen.covariance_scenario.split("-")[0],)
        method = MethodSpec(
            approach=approach,
            models=models,
            E_range=E_range,
            c=c,
            trim_multiplier=trim,
            n_init=args.n_init,
            n_init_hidden=args.n_init_hidden,
        )
        cells.append((scen, method))
    result = run_monte_carlo(cells, args.B, args.seed, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = ("pct_label_noise", "pct_hidden_group", "ari", "pct_novelty")
    header = ["cell", "scenario", "proportions", "contamination", "approach", "trim_multiplier", "c", "n_ok", "n_failed"]
    header += [f"{m}_{q}" for m in metrics for q in ("q1", "median", "q3")]
    rows, summary = [], []
    for i, cs in enumerate(result.cells):
        s, m = cs.scenario, cs.method
        row = [i, s.covariance_scenario, s.proportions, s.contamination, m.approach, _fmt(m.trim_multiplier), str(m.c), cs.n_ok, cs.n_failed]
        row += [_fmt(v) for k in metrics for v in cs.quartiles[k]]
        rows.append(row)
        summary.append(
            {
                "cell": i,
                "scenario": s.covariance_scenario,
                "proportions": s.proportions,
                "contamination": s.contamination,
                "approach": m.approach,
                "models": [str(x) for x in m.models],
                "E_range": list(m.E_range),
                "trim_multiplier": m.trim_multiplier,
                "c": str(m.c),
                "n_ok": cs.n_ok,
                "n_failed": cs.n_failed,
                "quartiles": {k: list(v) for k, v in cs.quartiles.items()},
                "hidden_counts": {str(k): v for k, v in cs.hidden_counts.items()},
                "selected": {f"{a}/{b}": v for (a, b), v in cs.selected.items()},
            }
        )
    write_csv(out / "summary.csv", header, rows)
    (out / "summary.json").write_text(json.dumps({"B": args.B, "seed": args.seed, "cells": summary}, indent=1) + "\n")
    long_header = ["cell", "replicate"] + list(metrics) + ["model", "E", "n_hidden", "c", "rbic", "error"]
    long_rows = []
    for r in result.records:
        if r["error"] is None:
            long_rows.append([r["cell"], r["replicate"]] + [_fmt(r[m]) for m in metrics] + [r["model"], r["E"], r["n_hidden"], _fmt(r["c"]), _fmt(r["rbic"]), ""])
        else:
            long_rows.append([r["cell"], r["replicate"]] + [""] * 9 + [r["error"]])
    write_csv(out / "replicates.csv", long_header, long_rows)
    return EXIT_OK


_COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"raedda: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SearchFailure as exc:
        print(f"raedda: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except RaeddaError as exc:
        print(f"raedda: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
