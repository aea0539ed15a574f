"""Synthetic contaminated scenarios, evaluation metrics and Monte-Carlo runs.

Three 6-variate Gaussian groups; the third one only appears in the test
set.  Contamination adds uniform outliers far from every group (in both
sets) and flips the labels of some genuine training rows.
"""

from __future__ import annotations

import dataclasses
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb
from scipy.stats import chi2

from .covariance import ModelName
from .errors import ConfigError, GenerationFailure, RaeddaError, ShapeError
from .selection import SearchGrid, search
from .inductive import fit_inductive
from .transductive import FitConfig, FitResult, LabeledDataset, UnlabeledDataset, fit_transductive

__all__ = [
    "SCENARIOS",
    "PROPORTIONS",
    "CONTAMINATION",
    "ScenarioSpec",
    "GroundTruth",
    "MetricsReport",
    "MethodSpec",
    "CellSummary",
    "MonteCarloResult",
    "scenario_parameters",
    "generate_scenario",
    "adjusted_rand_index",
    "score_fit",
    "run_monte_carlo",
]

SCENARIOS = {
    "EII": (1, 1, 1, 1, 0, 1),
    "EEI": (5, 1, 5, 1, 0, 5),
    "EVV": (5, 5, 1, 3, -2, 3),
    "VVV": (1, 20, 5, 15, -10, 15),
    "VVV-overlap": (1, 45, 30, 15, -10, 15),
}
PROPORTIONS = {
    "equal": ((285, 285), (360, 360, 360)),
    "unequal": ((190, 380), (210, 430, 60)),
}
CONTAMINATION = {"none": (0, 0), "low": (10, 40), "medium": (20, 80), "high": (30, 120)}
_ALIASES = {"strong": "high"}

CHI2_LEVEL = 0.975
MAX_ATTEMPTS = 1_000_000


@dataclass(frozen=True)
class ScenarioSpec:
    covariance_scenario: str = "EII"
    proportions: str = "equal"
    contamination: str = "none"
    seed: int = 0

    def __post_init__(self):
        cont = _ALIASES.get(self.contamination, self.contamination)
        if self.covariance_scenario not in SCENARIOS:
            raise ConfigError(f"unknown covariance scenario {self.covariance_scenario!r}")
        if self.proportions not in PROPORTIONS:
            raise ConfigError(f"unknown proportions {self.proportions!r}")
        if cont not in CONTAMINATION:
            raise ConfigError(f"unknown contamination level {self.contamination!r}")
        object.__setattr__(self, "contamination", cont)

    @property
    def q(self) -> tuple[int, int]:
        return CONTAMINATION[self.contamination]

    @property
    def sizes(self):
        return PROPORTIONS[self.proportions]

    @property
    def N(self) -> int:
        return sum(self.sizes[0]) + self.q[0]

    @property
    def M(self) -> int:
        return sum(self.sizes[1]) + self.q[1]


def scenario_parameters(name: str) -> tuple[np.ndarray, np.ndarray]:
    """Means (3, 6) and covariances (3, 6, 6) of a covariance scenario."""
    a, b, c, d, e, f = SCENARIOS[name]
    mu = np.zeros((3, 6))
    mu[0, 1], mu[1, 0], mu[2, :2] = 8.0, 8.0, -8.0
    sigma = np.tile(np.eye(6), (3, 1, 1))
    sigma[0, 1, 1] = a
    sigma[1, 0, 0], sigma[1, 1, 1] = b, c
    sigma[2, :2, :2] = [[d, e], [e, f]]
    return mu, sigma


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """0-based labels; -1 marks a planted outlier.

    ``train_labels`` are the labels before flipping, ``flipped`` the
    training rows whose given label is wrong.
    """

    test_labels: np.ndarray
    train_labels: np.ndarray
    flipped: np.ndarray
    train_outliers: np.ndarray
    test_outliers: np.ndarray
    G: int = 2


def _outliers(rng, n, mu, sigma, low, high, threshold):
    if n == 0:
        return np.zeros((0, mu.shape[1]))
    prec = np.linalg.inv(sigma)
    out, attempts = [], 0
    while sum(len(o) for o in out) < n:
        if attempts >= MAX_ATTEMPTS:
            raise GenerationFailure(f"outlier rejection sampling exceeded {MAX_ATTEMPTS} attempts")
        batch = min(max(4 * n, 64), MAX_ATTEMPTS - attempts)
        cand = rng.uniform(low, high, size=(batch, mu.shape[1]))
        attempts += batch
        diff = cand[:, None, :] - mu[None]
        d2 = np.einsum("ngi,gij,ngj->ng", diff, prec, diff)
        out.append(cand[np.all(d2 > threshold, axis=1)])
    return np.vstack(out)[:n]


def generate_scenario(spec: ScenarioSpec):
    """Draw one replicate: ``(LabeledDataset, UnlabeledDataset, GroundTruth)``.

    Genuine rows come first (grouped by class), planted outliers last.
    Training outliers get a uniformly random label among the observed
    classes.
    """
    rng = np.random.default_rng(spec.seed)
    mu, sigma = scenario_parameters(spec.covariance_scenario)
    (n1, n2), (m1, m2, m3) = spec.sizes
    q_l, q_u = spec.q
    chol = np.linalg.cholesky(sigma)

    def draw(g, k):
        return mu[g] + rng.standard_normal((k, 6)) @ chol[g].T

    X = np.vstack([draw(0, n1), draw(1, n2)])
    Y = np.vstack([draw(0, m1), draw(1, m2), draw(2, m3)])
    train_true = np.repeat([0, 1], [n1, n2])
    test_true = np.repeat([0, 1, 2], [m1, m2, m3])

    genuine = np.vstack([X, Y])
    spread = 6.0 * math.sqrt(max(np.linalg.eigvalsh(s).max() for s in sigma))
    low, high = genuine.min(axis=0) - spread, genuine.max(axis=0) + spread
    threshold = chi2.ppf(CHI2_LEVEL, 6)
    out_l = _outliers(rng, q_l, mu, sigma, low, high, threshold)
    out_u = _outliers(rng, q_u, mu, sigma, low, high, threshold)

    labels = train_true.copy()
    flipped = np.sort(rng.choice(n1 + n2, size=q_l, replace=False)) if q_l else np.zeros(0, dtype=int)
    G = 2
    for i in flipped:
        wrong = [g for g in range(G) if g != labels[i]]
        labels[i] = wrong[int(rng.integers(len(wrong)))]
    out_labels = rng.integers(G, size=q_l)

    X = np.vstack([X, out_l])
    Y = np.vstack([Y, out_u])
    labeled = LabeledDataset(X, np.concatenate([labels, out_labels]), ("1", "2"))
    unlabeled = UnlabeledDataset(Y)
    truth = GroundTruth(
        test_labels=np.concatenate([test_true, np.full(q_u, -1)]),
        train_labels=np.concatenate([train_true, np.full(q_l, -1)]),
        flipped=flipped.astype(int),
        train_outliers=np.arange(n1 + n2, n1 + n2 + q_l),
        test_outliers=np.arange(m1 + m2 + m3, m1 + m2 + m3 + q_u),
        G=G,
    )
    return labeled, unlabeled, truth


# ---------------------------------------------------------------------------
# metrics


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index from the pair-counting contingency table."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"partitions of different lengths {a.shape} and {b.shape}")
    n = a.shape[0]
    if n < 2:
        return 1.0
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1)
    both = comb(table, 2).sum()
    in_a = comb(table.sum(axis=1), 2).sum()
    in_b = comb(table.sum(axis=0), 2).sum()
    expected = in_a * in_b / comb(n, 2)
    top = 0.5 * (in_a + in_b)
    if top == expected:
        return 1.0
    return float((both - expected) / (top - expected))


@dataclass(frozen=True)
class MetricsReport:
    pct_label_noise: float
    pct_hidden_group: float
    ari: float
    pct_novelty: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fraction(hits: np.ndarray) -> float:
    return float(hits.mean()) if hits.size else 1.0


def score_fit(fit: FitResult, truth: GroundTruth) -> MetricsReport:
    """The four evaluation metrics of one fit on a generated replicate.

    A fraction over an empty set (no flipped labels, no hidden rows) is 1.
    """
    G = truth.G
    labels = fit.test_labels(outlier=-1)
    if labels.shape[0] != truth.test_labels.shape[0]:
        raise ShapeError("the fit and the ground truth disagree on the test size")
    label_noise = _fraction(~fit.trimming.zeta[truth.flipped])
    hidden = truth.test_labels >= G
    hidden_group = _fraction(labels[hidden] >= G) if fit.E > G else 0.0
    novel = hidden | (truth.test_labels < 0)
    novelty = _fraction((labels[novel] >= G) | (labels[novel] < 0))
    ari = adjusted_rand_index(labels, truth.test_labels)
    return MetricsReport(label_noise, hidden_group, ari, novelty)


# ---------------------------------------------------------------------------
# Monte-Carlo driver


@dataclass(frozen=True)
class MethodSpec:
    """How to fit a replicate.

    Trimming levels are ``trim_multiplier`` times the true contamination
    fractions (``2 Q_l / N`` and ``Q_u / M``).  With more than one model or
    number of classes the cell runs an RBIC search.
    """

    approach: str = "transductive"
    models: tuple = ("EII",)
    E_range: tuple = (3,)
    c: object = "auto"
    trim_multiplier: float = 1.0
    n_init: int = 10
    n_init_hidden: int = 10
    init_em_iter: int | None = 20
    max_iter: int = 500
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.approach not in ("transductive", "inductive"):
            raise ConfigError(f"unknown approach {self.approach!r}")
        object.__setattr__(self, "models", tuple(ModelName(m) for m in self.models))
        object.__setattr__(self, "E_range", tuple(int(e) for e in self.E_range))

    def trimming(self, scenario: ScenarioSpec) -> tuple[float, float]:
        q_l, q_u = scenario.q
        return self.trim_multiplier * 2 * q_l / scenario.N, self.trim_multiplier * q_u / scenario.M


def _fit_method(method: MethodSpec, scenario: ScenarioSpec, labeled, unlabeled, seed: int) -> FitResult:
    alpha_l, alpha_u = method.trimming(scenario)
    config = FitConfig(
        alpha_l=alpha_l,
        alpha_u=alpha_u,
        c=method.c,
        n_init=method.n_init,
        n_init_hidden=method.n_init_hidden,
        init_em_iter=method.init_em_iter,
        max_iter=method.max_iter,
        epsilon=method.epsilon,
        seed=seed,
    )
    if len(method.models) == 1 and len(method.E_range) == 1:
        fit_fn = fit_transductive if method.approach == "transductive" else _inductive_same
        return fit_fn(config, labeled, unlabeled, method.E_range[0], method.models[0])
    grid = SearchGrid(method.E_range, method.models, (method.c,), alpha_l, alpha_u)
    return search(grid, labeled, unlabeled, config, method.approach).best


def _inductive_same(config, labeled, unlabeled, E, model):
    return fit_inductive(config, labeled, unlabeled, E, model, model)


def _replicate(task):
    seed, rep, cells = task
    out = []
    data_cache = {}
    for ci, (scenario, method) in enumerate(cells):
        data_seed = int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])
        key = dataclasses.replace(scenario, seed=data_seed)
        if key not in data_cache:
            data_cache[key] = generate_scenario(key)
        labeled, unlabeled, truth = data_cache[key]
        fit_seed = int(np.random.SeedSequence([seed, rep, ci]).generate_state(1)[0])
        try:
            fit = _fit_method(method, scenario, labeled, unlabeled, fit_seed)
        except RaeddaError as exc:
            out.append({"cell": ci, "replicate": rep, "error": f"{type(exc).__name__}: {exc}"})
            continue
        record = {"cell": ci, "replicate": rep, "error": None}
        record.update(score_fit(fit, truth).as_dict())
        record.update(model=str(fit.model), E=fit.E, n_hidden=fit.E - truth.G, c=fit.c, rbic=fit.rbic)
        out.append(record)
    return out


METRICS = ("pct_label_noise", "pct_hidden_group", "ari", "pct_novelty")


@dataclass(frozen=True)
class CellSummary:
    scenario: ScenarioSpec
    method: MethodSpec
    n_ok: int
    n_failed: int
    quartiles: dict  # metric -> (q1, median, q3)
    hidden_counts: dict  # selected number of hidden classes -> replicates
    selected: dict  # (model, E) -> replicates

    def median(self, metric: str) -> float:
        return self.quartiles[metric][1]


@dataclass(frozen=True)
class MonteCarloResult:
    cells: tuple[CellSummary, ...]
    records: tuple[dict, ...] = field(default_factory=tuple)


def run_monte_carlo(cells, B: int, seed: int = 0, *, jobs: int = 1) -> MonteCarloResult:
    """Run ``B`` replicates of every ``(ScenarioSpec, MethodSpec)`` cell.

    Replicate ``r`` draws its data from the stream ``(seed, r)``, so cells
    sharing a scenario see the same datasets; the fit of cell ``k`` uses the
    stream ``(seed, r, k)``.  The scenario's own ``seed`` field is ignored.
    Failed replicates are excluded from the summaries and counted.
    """
    if B < 1:
        raise ConfigError("B must be >= 1")
    cells = [(s, m) for s, m in cells]
    tasks = [(seed, rep, cells) for rep in range(B)]
    if jobs and jobs > 1 and B > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_rep = list(pool.map(_replicate, tasks))
    else:
        per_rep = [_replicate(t) for t in tasks]
    records = tuple(r for rep in per_rep for r in rep)
    summaries = []
    for ci, (scenario, method) in enumerate(cells):
        rows = [r for r in records if r["cell"] == ci]
        good = [r for r in rows if r["error"] is None]
        quartiles = {}
        for m in METRICS:
            vals = np.array([r[m] for r in good])
            quartiles[m] = tuple(float(v) for v in np.quantile(vals, [0.25, 0.5, 0.75])) if vals.size else (math.nan,) * 3
        hidden = Counter(r["n_hidden"] for r in good)
        selected = Counter((r["model"], r["E"]) for r in good)
        summaries.append(
            CellSummary(scenario, method, len(good), len(rows) - len(good), quartiles, dict(sorted(hidden.items())), dict(sorted(selected.items())))
        )
    return MonteCarloResult(tuple(summaries), records)
