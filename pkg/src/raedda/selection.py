"""Grid search over the number of classes, the covariance model and ``c``.

Cells are ranked by RBIC, larger first.  Exact ties go to the simpler model,
then to fewer classes, then to the smaller constraint.  Fits are only
compared when they share the same trimming fractions.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .covariance import MODEL_ORDER, ModelName, allowed_discovery_models, canonical_discovery_model
from .errors import ConfigError, RaeddaError, SearchFailure
from .inductive import LearnedModel, fit_inductive, fit_learning_phase
from .transductive import FitConfig, FitResult, LabeledDataset, UnlabeledDataset, fit_transductive, parse_c

__all__ = ["SearchGrid", "CellResult", "SearchResult", "search", "rank_fits"]


@dataclass(frozen=True)
class SearchGrid:
    """Candidate numbers of classes, models and constraints at fixed trimming levels."""

    E_range: tuple[int, ...]
    models: tuple[ModelName, ...] = MODEL_ORDER
    c_values: tuple = ("auto",)
    alpha_l: float = 0.0
    alpha_u: float = 0.0

    def __post_init__(self):
        E_range = tuple(int(e) for e in self.E_range)
        models = tuple(ModelName(m) for m in self.models)
        c_values = tuple(self.c_values)
        if not E_range or not models or not c_values:
            raise ConfigError("the search grid is empty")
        for c in c_values:
            parse_c(c)
        object.__setattr__(self, "E_range", E_range)
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "c_values", c_values)


@dataclass(frozen=True)
class CellResult:
    model: ModelName
    E: int
    c_spec: object
    c: float
    rbic: float
    loglik: float
    converged: bool
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True, eq=False)
class SearchResult:
    """Ranked successful cells, failed cells, the best fit and (inductive) the learning step."""

    ranking: tuple[CellResult, ...]
    failed: tuple[CellResult, ...]
    best: FitResult
    learning: tuple[tuple[ModelName, float], ...] = ()
    learned: LearnedModel | None = None


def _c_key(c_value: float) -> float:
    return math.inf if math.isnan(c_value) else c_value


def _sort_key(cell: CellResult):
    return (-cell.rbic, cell.model.rank, cell.E, _c_key(cell.c))


def rank_fits(fits: Sequence[FitResult]) -> list[FitResult]:
    """Order fits by RBIC with the deterministic tie-break.

    Refuses to compare fits obtained with different trimming fractions.
    """
    levels = {(f.alpha_l, f.alpha_u) for f in fits}
    if len(levels) > 1:
        raise ConfigError(f"cannot rank fits with different trimming levels {sorted(levels)}")
    return sorted(fits, key=lambda f: (-f.rbic, f.model.rank, f.E, f.c))


def _fit_cell(task):
    approach, config, labeled, unlabeled, E, model, learned = task
    try:
        if approach == "transductive":
            fit = fit_transductive(config, labeled, unlabeled, E, model)
        else:
            fit = fit_inductive(config, labeled, unlabeled, E, learned.model, model, learned=learned)
        return fit, None
    except RaeddaError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _map(tasks, jobs):
    if jobs and jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_fit_cell, tasks))
    return [_fit_cell(t) for t in tasks]


def search(
    grid: SearchGrid,
    labeled: LabeledDataset,
    unlabeled: UnlabeledDataset,
    config: FitConfig | None = None,
    approach: str = "transductive",
    *,
    jobs: int = 1,
    keep_fits: bool = False,
) -> SearchResult:
    """Fit every grid cell and rank the successful ones.

    The inductive search first picks the learning-phase model by its own
    RBIC on the labelled rows, then searches the discovery models reachable
    from it.  Discovery models equivalent under the inherited factors are
    fitted once.  With ``keep_fits`` every fit is kept in ``best.extras
    ["fits"]`` keyed by ``(model, E, c_spec)``.
    """
    if approach not in ("transductive", "inductive"):
        raise ConfigError(f"unknown approach {approach!r}")
    config = config or FitConfig()
    base = dataclasses.replace(config, alpha_l=grid.alpha_l, alpha_u=grid.alpha_u)
    bad_E = [E for E in grid.E_range if E < labeled.G]
    if bad_E:
        raise ConfigError(f"E values {bad_E} are below the number of labelled classes {labeled.G}")

    learning_table: list[tuple[ModelName, float]] = []
    learned = None
    models = list(grid.models)
    diagnostics: list[str] = []
    if approach == "inductive":
        best_learned = None
        for m in grid.models:
            try:
                cand = fit_learning_phase(labeled, m, base.alpha_l, base.n_init, base.seed)
            except RaeddaError as exc:
                diagnostics.append(f"learning {m}: {type(exc).__name__}: {exc}")
                continue
            learning_table.append((m, cand.rbic))
            if best_learned is None or cand.rbic > best_learned.rbic:
                best_learned = cand
        if best_learned is None:
            raise SearchFailure("every learning-phase model failed", diagnostics)
        learned = best_learned
        allowed = allowed_discovery_models(learned.model)
        models = [m for m in grid.models if m in allowed]
        if not models:
            raise SearchFailure(f"no grid model can follow learning model {learned.model}", diagnostics)

    cells, tasks, index = [], [], {}
    for c_spec in grid.c_values:
        cfg = dataclasses.replace(base, c=c_spec)
        for E in grid.E_range:
            for m in models:
                key_model = canonical_discovery_model(learned.model, m) if learned is not None else m
                key = (key_model, E, str(c_spec))
                if key not in index:
                    index[key] = len(tasks)
                    tasks.append((approach, cfg, labeled, unlabeled, E, key_model if learned is None else m, learned))
                cells.append((m, E, c_spec, index[key]))
    outcomes = _map(tasks, jobs)

    ok, failed, fits = [], [], {}
    for m, E, c_spec, i in cells:
        fit, err = outcomes[i]
        if fit is None:
            failed.append(CellResult(m, E, c_spec, math.nan, math.nan, math.nan, False, err))
            diagnostics.append(f"{m} E={E} c={c_spec}: {err}")
            continue
        ok.append(CellResult(m, E, c_spec, fit.c, fit.rbic, fit.loglik, fit.converged))
        fits[(m, E, c_spec)] = fit
    if not ok:
        raise SearchFailure("every grid cell failed", diagnostics)
    ranking = sorted(ok, key=_sort_key)
    top = ranking[0]
    best = fits[(top.model, top.E, top.c_spec)]
    if best.model != top.model:
        # equivalent discovery models share a fit; report the requested name
        best = dataclasses.replace(best, model=top.model, extras=dict(best.extras))
    else:
        best = dataclasses.replace(best, extras=dict(best.extras))
    if keep_fits:
        best.extras["fits"] = fits
    return SearchResult(tuple(ranking), tuple(failed), best, tuple(learning_table), learned)
