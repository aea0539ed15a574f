"""Trimmed EM fitted jointly on labelled and unlabelled data.

The labelled rows contribute ``log(tau_g phi(x; mu_g, Sigma_g))`` for their
own class, the unlabelled rows the log of the full mixture density.  At every
iteration a fixed number of the least plausible rows of each set is
discarded (impartial trimming) before the usual E and M steps.  Classes
beyond the G labelled ones are "hidden" and are estimated from the
unlabelled rows only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from . import criteria
from .covariance import (
    EigenDecomposition,
    ModelName,
    ScatterAccumulator,
    eigen_ratio,
    log_gaussian_densities,
    mstep_covariances,
)
from .errors import (
    ConfigError,
    DegenerateCovariance,
    EmptyComponent,
    InitializationFailure,
    NumericalUnderflow,
    ShapeError,
)

__all__ = [
    "LabeledDataset",
    "UnlabeledDataset",
    "MixtureParameters",
    "TrimmingIndicators",
    "FitConfig",
    "FitResult",
    "Reassignment",
    "n_trimmed",
    "resolve_c",
    "trimmed_observed_loglik",
    "robust_init_known",
    "init_hidden",
    "concentration_step",
    "e_step",
    "m_step",
    "aitken_converged",
    "fit_transductive",
    "reassign_trimmed_training",
]


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Training rows ``X`` (N, p) with class indices ``labels`` in ``0..G-1``."""

    X: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        labels = np.asarray(self.labels)
        if X.ndim != 2 or labels.ndim != 1 or labels.shape[0] != X.shape[0]:
            raise ShapeError(f"{X.shape[0]} rows but {labels.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise ValueError("training data contain non-finite values")
        labels = labels.astype(int)
        names = self.class_names
        G = len(names) if names is not None else (int(labels.max()) + 1 if labels.size else 0)
        if labels.size and (labels.min() < 0 or labels.max() >= G):
            raise ShapeError("labels must lie in 0..G-1")
        if names is None:
            names = tuple(str(g + 1) for g in range(G))
        X.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(str(s) for s in names))

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def G(self) -> int:
        return len(self.class_names)

    def onehot(self, E: int | None = None) -> np.ndarray:
        out = np.zeros((self.N, E or self.G))
        out[np.arange(self.N), self.labels] = 1.0
        return out

    def class_counts(self, mask: np.ndarray | None = None) -> np.ndarray:
        labels = self.labels if mask is None else self.labels[mask]
        return np.bincount(labels, minlength=self.G)


@dataclass(frozen=True, eq=False)
class UnlabeledDataset:
    """Test rows ``Y`` (M, p)."""

    Y: np.ndarray

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.ndim != 2:
            raise ShapeError(f"expected a matrix, got shape {Y.shape}")
        if not np.all(np.isfinite(Y)):
            raise ValueError("test data contain non-finite values")
        Y.flags.writeable = False
        object.__setattr__(self, "Y", Y)

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True, eq=False)
class MixtureParameters:
    tau: np.ndarray
    mu: np.ndarray
    sigma: tuple[EigenDecomposition, ...]
    G: int
    model: ModelName

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        if not (tau.shape[0] == mu.shape[0] == len(self.sigma)):
            raise ShapeError("tau, mu and sigma disagree on the number of groups")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", tuple(self.sigma))
        object.__setattr__(self, "model", ModelName(self.model))

    @property
    def E(self) -> int:
        return self.tau.shape[0]

    @property
    def H(self) -> int:
        return self.E - self.G

    @property
    def p(self) -> int:
        return self.mu.shape[1]

    def component_log_densities(self, X: np.ndarray) -> np.ndarray:
        return log_gaussian_densities(X, self.mu, self.sigma)

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        """``log(tau_g) + log phi(x; mu_g, Sigma_g)``, shape (n, E)."""
        with np.errstate(divide="ignore"):
            return np.log(self.tau) + self.component_log_densities(X)

    def covariances(self) -> np.ndarray:
        return np.stack([s.covariance() for s in self.sigma])


@dataclass(frozen=True, eq=False)
class TrimmingIndicators:
    """Keep flags: ``zeta`` for labelled rows, ``phi`` for unlabelled rows."""

    zeta: np.ndarray
    phi: np.ndarray


class Reassignment(NamedTuple):
    index: int
    label: int | None  # None marks an outlier


def n_trimmed(n: int, alpha: float) -> int:
    """Number of discarded rows, ``floor(n * alpha)``."""
    return int(math.floor(n * alpha + 1e-9))


def parse_c(spec) -> tuple[float | None, float | None]:
    """Split a constraint spec into ``(explicit value, auto multiplier)``."""
    if isinstance(spec, str):
        s = spec.strip().lower()
        if s.startswith("auto"):
            rest = s[4:]
            if rest == "":
                return None, 1.0
            if not rest.startswith(":"):
                raise ConfigError(f"bad constraint spec {spec!r}")
            try:
                mult = float(rest[1:])
            except ValueError:
                raise ConfigError(f"bad constraint multiplier in {spec!r}") from None
            if not mult >= 1:
                raise ConfigError("the constraint multiplier must be >= 1")
            return None, mult
        try:
            spec = float(s)
        except ValueError:
            raise ConfigError(f"bad constraint spec {spec!r}") from None
    value = float(spec)
    if not value >= 1:
        raise ConfigError(f"constraint must be >= 1, got {value}")
    return value, None


def resolve_c(spec, c_tilde: float) -> float:
    """Numeric constraint: explicit value, or multiplier times ``c_tilde``."""
    value, mult = parse_c(spec)
    return value if value is not None else mult * float(c_tilde)


def _mstep_c(c: float) -> float | None:
    return None if math.isinf(c) else c


@dataclass(frozen=True)
class FitConfig:
    """Settings shared by the transductive and inductive fits.

    ``c`` is a number >= 1 or ``"auto"`` / ``"auto:K"``, meaning K times the
    eigenvalue ratio of the robustly estimated known groups.  Each hidden
    restart first runs ``init_em_iter`` iterations; only the best one is then
    iterated to convergence (``None`` runs every restart to convergence).
    """

    alpha_l: float = 0.0
    alpha_u: float = 0.0
    c: float | str = "auto"
    n_init: int = 30
    n_init_hidden: int = 30
    init_em_iter: int | None = 20
    max_iter: int = 1000
    epsilon: float = 1e-5
    seed: int = 0
    inner_tol: float = 1e-8
    inner_max_iter: int = 100

    def __post_init__(self):
        for name in ("alpha_l", "alpha_u"):
            a = getattr(self, name)
            if not 0.0 <= a < 0.5:
                raise ConfigError(f"{name} must lie in [0, 0.5), got {a}")
        parse_c(self.c)
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.n_init < 1 or self.n_init_hidden < 1 or self.max_iter < 1:
            raise ConfigError("restart counts and max_iter must be >= 1")
        if self.init_em_iter is not None and self.init_em_iter < 1:
            raise ConfigError("init_em_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a transductive or inductive fit.

    ``posteriors`` and ``trimming.phi`` refer to the rows the EM ran on: the
    test rows for a transductive fit, the augmented test rows (test rows
    first) for an inductive one.
    """

    approach: str
    params: MixtureParameters
    trimming: TrimmingIndicators
    posteriors: np.ndarray
    loglik_trace: tuple[float, ...]
    penalty: criteria.PenaltySpec
    converged: bool
    diagnostics: tuple[str, ...]
    model: ModelName
    c: float
    c_tilde: float
    alpha_l: float
    alpha_u: float
    seed: int
    n_test: int
    extras: dict = field(default_factory=dict)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    @property
    def rbic(self) -> float:
        return criteria.rbic(self.loglik, self.penalty)

    @property
    def E(self) -> int:
        return self.params.E

    @property
    def G(self) -> int:
        return self.params.G

    @property
    def n_iter(self) -> int:
        return len(self.loglik_trace) - 1

    def map_labels(self) -> np.ndarray:
        """MAP class index of every EM row (``argmax`` of the posteriors)."""
        return np.argmax(self.posteriors, axis=1)

    def test_labels(self, outlier: int = -1) -> np.ndarray:
        """MAP class of every original test row, ``outlier`` where trimmed."""
        lab = self.map_labels()[: self.n_test].copy()
        lab[~self.trimming.phi[: self.n_test]] = outlier
        return lab


# ---------------------------------------------------------------------------
# building blocks


# quantile levels of the fitted mixture log-densities stored for scoring new points
LADDER_LEVELS = (0.0, 0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5)


def _ladder(scores: np.ndarray) -> tuple[tuple[float, float], ...]:
    if scores.size == 0:
        return ()
    q = np.quantile(scores, LADDER_LEVELS)
    return tuple((float(a), float(b)) for a, b in zip(LADDER_LEVELS, q))


def _keep_mask(scores: np.ndarray, n_trim: int) -> np.ndarray:
    keep = np.ones(scores.shape[0], dtype=bool)
    if n_trim > 0:
        order = np.argsort(scores, kind="stable")
        keep[order[:n_trim]] = False
    return keep


def _check_dims(params: MixtureParameters, *arrays):
    for a in arrays:
        if a.shape[0] and a.shape[1] != params.p:
            raise ShapeError(f"data have {a.shape[1]} columns, parameters {params.p}")


def _labeled_scores(params, labeled, comp_ld=None, contribution=True):
    if comp_ld is None:
        comp_ld = params.component_log_densities(labeled.X)
    ld = comp_ld[np.arange(labeled.N), labeled.labels]
    if contribution:
        with np.errstate(divide="ignore"):
            ld = ld + np.log(params.tau[labeled.labels])
    return ld


def trimmed_observed_loglik(
    params: MixtureParameters,
    labeled: LabeledDataset,
    unlabeled: UnlabeledDataset,
    trimming: TrimmingIndicators,
) -> float:
    """Trimmed observed-data log-likelihood, evaluated in log space."""
    _check_dims(params, labeled.X, unlabeled.Y)
    if trimming.zeta.shape[0] != labeled.N or trimming.phi.shape[0] != unlabeled.M:
        raise ShapeError("trimming flags do not match the data")
    total = 0.0
    if labeled.N:
        total += float(np.sum(_labeled_scores(params, labeled)[trimming.zeta]))
    if unlabeled.M:
        lj = params.log_joint(unlabeled.Y[trimming.phi])
        total += float(np.sum(logsumexp(lj, axis=1)))
    return total


def concentration_step(
    params: MixtureParameters,
    labeled: LabeledDataset,
    unlabeled: UnlabeledDataset,
    alpha_l: float,
    alpha_u: float,
    *,
    rule: str = "contribution",
) -> TrimmingIndicators:
    """Discard the least plausible ``floor(N alpha_l)`` and ``floor(M alpha_u)`` rows.

    Unlabelled rows are ranked by mixture density.  Labelled rows are ranked
    by ``tau_g phi(x; mu_g, Sigma_g)`` of their own class (``rule=
    "contribution"``, their actual term in the trimmed likelihood) or by the
    class-conditional density alone (``rule="density"``).  Ties go to the
    lower row index first.
    """
    _check_dims(params, labeled.X, unlabeled.Y)
    if rule not in ("contribution", "density"):
        raise ValueError(f"unknown rule {rule!r}")
    zeta = _keep_mask(
        _labeled_scores(params, labeled, contribution=rule == "contribution"),
        n_trimmed(labeled.N, alpha_l),
    )
    if unlabeled.M:
        mix = logsumexp(params.log_joint(unlabeled.Y), axis=1)
    else:
        mix = np.zeros(0)
    phi = _keep_mask(mix, n_trimmed(unlabeled.M, alpha_u))
    return TrimmingIndicators(zeta, phi)


def _posteriors(log_joint: np.ndarray) -> np.ndarray:
    norm = logsumexp(log_joint, axis=1, keepdims=True)
    if np.any(~np.isfinite(norm)):
        raise NumericalUnderflow("a row has zero density under every component")
    return np.exp(log_joint - norm)


def e_step(params: MixtureParameters, unlabeled: UnlabeledDataset, phi: np.ndarray | None = None) -> np.ndarray:
    """Posterior class probabilities of every unlabelled row, shape (M, E).

    Rows with ``phi`` false are computed too; callers ignore them.
    """
    _check_dims(params, unlabeled.Y)
    return _posteriors(params.log_joint(unlabeled.Y))


def _joint_m_step(X, Y, wl, wu, kept_total, G, model, c, warm, inner, diagnostics):
    Z = np.vstack([X, Y])
    weights = np.vstack([wl, wu])
    n = weights.sum(axis=0)
    if np.any(n <= 1e-10):
        raise EmptyComponent(f"group {int(np.argmin(n))} lost all its weight")
    scatter, mu = ScatterAccumulator.from_weights(Z, weights)
    sigma = mstep_covariances(
        model,
        scatter,
        c,
        warm_start=warm,
        tol=inner[0],
        max_iter=inner[1],
        diagnostics=diagnostics,
    )
    return MixtureParameters(n / kept_total, mu, sigma, G, model)


def m_step(
    labeled: LabeledDataset,
    unlabeled: UnlabeledDataset,
    zeta: np.ndarray,
    phi: np.ndarray,
    posteriors: np.ndarray,
    model,
    c: float | None,
    warm_start: Sequence[EigenDecomposition] | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    diagnostics: list | None = None,
) -> MixtureParameters:
    """Weighted updates of tau, mu and the patterned covariances on the kept rows."""
    zeta = np.asarray(zeta, dtype=bool)
    phi = np.asarray(phi, dtype=bool)
    E = posteriors.shape[1]
    wl = labeled.onehot(E) * zeta[:, None]
    wu = posteriors * phi[:, None]
    kept = int(zeta.sum()) + int(phi.sum())
    c = None if c is None else _mstep_c(float(c))
    return _joint_m_step(
        labeled.X, unlabeled.Y, wl, wu, kept, labeled.G, model, c, warm_start, (tol, max_iter), diagnostics
    )


def aitken_converged(l0: float, l1: float, l2: float, epsilon: float = 1e-5) -> bool:
    """Aitken-accelerated stopping rule on three consecutive log-likelihoods."""
    d1, d2 = l1 - l0, l2 - l1
    if abs(d1) < 1e-12:
        return abs(d2) < epsilon
    a = d2 / d1
    if a >= 1:
        return abs(d2) < epsilon
    l_inf = l1 + d2 / (1.0 - a)
    return abs(l_inf - l1) < epsilon


# ---------------------------------------------------------------------------
# robust initialisation of the labelled classes


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _fit_known(labeled: LabeledDataset, weights: np.ndarray, model, n_kept: int, warm=None) -> MixtureParameters:
    n = weights.sum(axis=0)
    if np.any(n <= 0):
        raise EmptyComponent(f"class {labeled.class_names[int(np.argmin(n))]} has no retained rows")
    scatter, mu = ScatterAccumulator.from_weights(labeled.X, weights)
    sigma = mstep_covariances(model, scatter, None, warm_start=warm)
    return MixtureParameters(n / n_kept, mu, sigma, labeled.G, model)


def _subset_params(labeled, model, rng) -> MixtureParameters:
    p, G = labeled.p, labeled.G
    weights = np.zeros((labeled.N, G))
    for g in range(G):
        members = np.flatnonzero(labeled.labels == g)
        pick = rng.choice(members, size=p + 1, replace=False)
        weights[pick, g] = 1.0
    params = _fit_known(labeled, weights, model, G * (p + 1))
    return MixtureParameters(np.full(G, 1.0 / G), params.mu, params.sigma, G, model)


def _concentrate_known(labeled, model, alpha_l, params, max_steps=500):
    k = n_trimmed(labeled.N, alpha_l)
    kept = labeled.N - k
    onehot = labeled.onehot()
    prev = None
    for _ in range(max_steps):
        keep = _keep_mask(_labeled_scores(params, labeled, contribution=False), k)
        if prev is not None and np.array_equal(keep, prev):
            break
        params = _fit_known(labeled, onehot * keep[:, None], model, kept, params.sigma)
        prev = keep
    return params, prev


def _robust_init(labeled: LabeledDataset, model, alpha_l: float, n_init: int, rng):
    model = ModelName(model)
    p = labeled.p
    counts = labeled.class_counts()
    if labeled.G == 0 or np.any(counts < p + 1):
        raise InitializationFailure(f"every class needs at least p+1={p + 1} labelled rows, got {counts.tolist()}")
    if n_trimmed(labeled.N, alpha_l) == 0:
        # no trimming: the fixed point is the plain maximum-likelihood fit
        params = _fit_known(labeled, labeled.onehot(), model, labeled.N)
        zeta = np.ones(labeled.N, dtype=bool)
        return params, zeta, []
    best, failures = None, []
    for r in range(n_init):
        try:
            start = _subset_params(labeled, model, rng)
            params, zeta = _concentrate_known(labeled, model, alpha_l, start)
        except (EmptyComponent, DegenerateCovariance) as exc:
            failures.append(f"restart {r}: {exc}")
            continue
        obj = float(np.sum(_labeled_scores(params, labeled)[zeta]))
        if best is None or obj > best[0]:
            best = (obj, params, zeta)
    if best is None:
        raise InitializationFailure("all robust initialisations failed: " + "; ".join(failures[:5]))
    return best[1], best[2], failures


def robust_init_known(labeled: LabeledDataset, model, alpha_l: float, n_init: int = 30, seed=0):
    """Trimmed supervised fit of the G labelled classes.

    Each restart draws a random (p+1)-subset per class, then alternates
    discarding the ``floor(N alpha_l)`` rows of lowest class-conditional
    density with refitting on the rest, until the discarded set repeats.
    The restart with the largest labelled trimmed log-likelihood wins.
    Returns ``(params, zeta)``.
    """
    params, zeta, _ = _robust_init(labeled, model, alpha_l, n_init, _rng(seed))
    return params, zeta


# ---------------------------------------------------------------------------
# hidden classes


def _hidden_scatter(Y: np.ndarray, H: int, rng) -> tuple[np.ndarray, np.ndarray]:
    M, p = Y.shape
    means, W = np.empty((H, p)), np.empty((H, p, p))
    for h in range(H):
        pick = rng.choice(M, size=p + 1, replace=False)
        S = Y[pick]
        means[h] = S.mean(axis=0)
        R = S - means[h]
        W[h] = R.T @ R
    return means, W


def init_hidden(
    params_known: MixtureParameters,
    unlabeled: UnlabeledDataset,
    H: int,
    model,
    c,
    seed=0,
    known_sizes: Sequence[float] | None = None,
) -> MixtureParameters:
    """Starting values with ``H`` extra classes seeded from random test subsets.

    Hidden weights are ``u_h / sum(u) * H/E`` with ``u`` uniform, known weights
    are scaled by ``G/E``.  All covariances are re-estimated together from
    the known covariances (weighted by ``known_sizes``, default p+1 each)
    and the hidden subset scatters, so the start conforms to the model and
    to the ratio bound ``c`` (a number, ``"auto"`` or ``"auto:K"``).
    """
    if H == 0:
        return params_known
    rng = _rng(seed)
    model = ModelName(model)
    G, p = params_known.G, params_known.p
    E = G + H
    Y = unlabeled.Y
    if Y.shape[0] < p + 1:
        raise InitializationFailure(f"need at least {p + 1} test rows to seed a hidden class")
    c_val = resolve_c(c, eigen_ratio(params_known.sigma))
    means_h, W_h = _hidden_scatter(Y, H, rng)
    u = rng.uniform(size=H)
    tau = np.concatenate([params_known.tau * (G / E), u / u.sum() * (H / E)])
    sizes = np.full(G, p + 1.0) if known_sizes is None else np.asarray(known_sizes, dtype=float)
    W = np.concatenate([sizes[:, None, None] * params_known.covariances(), W_h])
    n = np.concatenate([sizes, np.full(H, p + 1.0)])
    sigma = mstep_covariances(model, ScatterAccumulator(W, n), _mstep_c(c_val), warm_start=params_known.sigma)
    mu = np.vstack([params_known.mu, means_h])
    return MixtureParameters(tau, mu, sigma, G, model)


# ---------------------------------------------------------------------------
# the EM loop


class _EMState:
    """Current parameters, trimming and log-likelihood trace of one EM run."""

    def __init__(self, params, labeled, unlabeled, alpha_l, alpha_u, c, inner):
        self.labeled, self.unlabeled = labeled, unlabeled
        self.k_l = n_trimmed(labeled.N, alpha_l)
        self.k_u = n_trimmed(unlabeled.M, alpha_u)
        self.kept = labeled.N - self.k_l + unlabeled.M - self.k_u
        self.c, self.inner = c, inner
        self.onehot = labeled.onehot(params.E)
        self.diagnostics: list[str] = []
        self.trace: list[float] = []
        self.converged = False
        self._evaluate(params)

    def _evaluate(self, params):
        self.params = params
        lab = self.labeled
        ld_l = params.component_log_densities(lab.X)
        with np.errstate(divide="ignore"):
            score_l = ld_l[np.arange(lab.N), lab.labels] + np.log(params.tau[lab.labels])
        self.zeta = _keep_mask(score_l, self.k_l)
        self.log_joint = params.log_joint(self.unlabeled.Y)
        mix = logsumexp(self.log_joint, axis=1)
        self.phi = _keep_mask(mix, self.k_u)
        self.trace.append(float(score_l[self.zeta].sum() + mix[self.phi].sum()))

    def step(self):
        post = _posteriors(self.log_joint)
        wl = self.onehot * self.zeta[:, None]
        wu = post * self.phi[:, None]
        params = _joint_m_step(
            self.labeled.X,
            self.unlabeled.Y,
            wl,
            wu,
            self.kept,
            self.params.G,
            self.params.model,
            self.c,
            self.params.sigma,
            self.inner,
            self.diagnostics,
        )
        self._evaluate(params)

    def run(self, n_steps: int, epsilon: float) -> bool:
        for _ in range(n_steps):
            self.step()
            if len(self.trace) >= 3 and aitken_converged(*self.trace[-3:], epsilon):
                self.converged = True
                break
        return self.converged


def _run_restarts(make_state, n_restarts: int, config: FitConfig, rng, failures: list):
    """Short runs from several starts, then the best one to convergence."""
    short = config.init_em_iter if n_restarts > 1 else None
    best = None
    for r in range(n_restarts):
        try:
            state = make_state(rng)
            state.run(short or config.max_iter, config.epsilon)
        except (EmptyComponent, DegenerateCovariance, NumericalUnderflow) as exc:
            failures.append(f"restart {r}: {exc}")
            continue
        if best is None or state.trace[-1] > best.trace[-1]:
            best = state
    if best is None:
        raise InitializationFailure("all hidden-class restarts failed: " + "; ".join(failures[:5]))
    if not best.converged:
        remaining = config.max_iter - (len(best.trace) - 1)
        best.run(max(remaining, 0), config.epsilon)
    return best


def fit_transductive(
    config: FitConfig,
    labeled: LabeledDataset,
    unlabeled: UnlabeledDataset,
    E: int,
    model,
) -> FitResult:
    """Robust initialisation, hidden-class seeding and the trimmed EM loop."""
    model = ModelName(model)
    if labeled.p != unlabeled.p:
        raise ShapeError(f"training has {labeled.p} columns, test has {unlabeled.p}")
    if unlabeled.M < 1:
        raise ShapeError("the test set is empty")
    G = labeled.G
    if E < G:
        raise ConfigError(f"E={E} is smaller than the number of labelled classes G={G}")
    rng = np.random.default_rng(config.seed)
    known, zeta0, failures = _robust_init(labeled, model, config.alpha_l, config.n_init, rng)
    c_tilde = eigen_ratio(known.sigma)
    c = resolve_c(config.c, c_tilde)
    c_m = _mstep_c(c)
    H = E - G
    sizes = labeled.class_counts(zeta0).astype(float)
    inner = (config.inner_tol, config.inner_max_iter)

    def make_state(gen):
        if H == 0:
            W = sizes[:, None, None] * known.covariances()
            sigma = mstep_covariances(model, ScatterAccumulator(W, sizes), c_m)
            start = MixtureParameters(known.tau, known.mu, sigma, G, model)
        else:
            start = init_hidden(known, unlabeled, H, model, c, gen, known_sizes=sizes)
        return _EMState(start, labeled, unlabeled, config.alpha_l, config.alpha_u, c_m, inner)

    hidden_failures: list[str] = []
    state = _run_restarts(make_state, config.n_init_hidden if H else 1, config, rng, hidden_failures)
    post = _posteriors(state.log_joint)
    mix = logsumexp(state.log_joint, axis=1)
    n_star = int(state.zeta.sum() + state.phi.sum())
    spec = criteria.penalty_spec(model, E, G, labeled.p, c, n_star, "transductive")
    diagnostics = sorted(set(state.diagnostics)) + failures[:3] + hidden_failures[:3]
    if not state.converged:
        diagnostics.append(f"EM stopped at max_iter={config.max_iter} before convergence")
    return FitResult(
        approach="transductive",
        params=state.params,
        trimming=TrimmingIndicators(state.zeta, state.phi),
        posteriors=post,
        loglik_trace=tuple(state.trace),
        penalty=spec,
        converged=state.converged,
        diagnostics=tuple(diagnostics),
        model=model,
        c=c,
        c_tilde=c_tilde,
        alpha_l=config.alpha_l,
        alpha_u=config.alpha_u,
        seed=config.seed,
        n_test=unlabeled.M,
        extras={
            "init_params": known,
            "init_zeta": zeta0,
            "density_threshold": float(mix[state.phi].min()) if state.phi.any() else -math.inf,
            "density_quantiles": _ladder(mix),
        },
    )


def reassign_trimmed_training(
    fit: FitResult, labeled: LabeledDataset, alpha_l: float | None = None
) -> list[Reassignment]:
    """Second look at the discarded training rows.

    Each one gets the MAP class of the fitted mixture; it keeps that label
    when its class-conditional density under the new label is above the
    ``alpha_l`` quantile of the training densities under the given labels,
    and is declared an outlier otherwise.
    """
    alpha_l = fit.alpha_l if alpha_l is None else alpha_l
    zeta = fit.trimming.zeta
    idx = np.flatnonzero(~zeta)
    if idx.size == 0:
        return []
    params = fit.params
    comp = params.component_log_densities(labeled.X)
    own = comp[np.arange(labeled.N), labeled.labels]
    k = n_trimmed(labeled.N, alpha_l)
    threshold = np.sort(own, kind="stable")[min(k, labeled.N - 1)]
    with np.errstate(divide="ignore"):
        joint = comp[idx] + np.log(params.tau)
    new = np.argmax(joint, axis=1)
    dens = comp[idx, new]
    return [
        Reassignment(int(i), int(g) if d > threshold else None) for i, g, d in zip(idx, new, dens)
    ]
