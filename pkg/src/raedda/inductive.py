"""Two-phase inductive fitting.

A trimmed supervised fit of the G labelled classes is computed once and then
frozen.  The discovery phase runs a trimmed EM on the test rows (plus the
training rows discarded by the learning phase) that only estimates the
hidden classes; the known classes keep their means and covariances and
their weights keep the learned proportions among themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import criteria
from .covariance import (
    ModelName,
    ScatterAccumulator,
    canonical_discovery_model,
    eigen_ratio,
    fixed_components,
    log_gaussian_densities,
    mstep_discovery,
)
from .errors import (
    ConfigError,
    DegenerateCovariance,
    EmptyComponent,
    InitializationFailure,
    NumericalUnderflow,
    ShapeError,
)
from .transductive import (
    FitConfig,
    FitResult,
    LabeledDataset,
    MixtureParameters,
    LADDER_LEVELS,
    TrimmingIndicators,
    UnlabeledDataset,
    _keep_mask,
    _ladder,
    _labeled_scores,
    _mstep_c,
    _posteriors,
    _rng,
    _robust_init,
    aitken_converged,
    n_trimmed,
    resolve_c,
)

__all__ = [
    "LADDER_LEVELS",
    "LearnedModel",
    "AugmentedTestSet",
    "fit_learning_phase",
    "build_augmented_test",
    "fit_discovery_phase",
    "fit_inductive",
    "predict_new",
]

@dataclass(frozen=True, eq=False)
class LearnedModel:
    """Frozen outcome of the learning phase.

    ``density_quantiles`` pairs quantile levels with the corresponding
    quantiles of the training rows' own-class log-densities.
    """

    params_bar: MixtureParameters
    zeta: np.ndarray
    model: ModelName
    c_tilde: float
    density_quantiles: tuple[tuple[float, float], ...]
    alpha_l: float
    loglik: float
    penalty: criteria.PenaltySpec
    class_names: tuple[str, ...]
    diagnostics: tuple[str, ...] = ()

    @property
    def G(self) -> int:
        return self.params_bar.G

    @property
    def p(self) -> int:
        return self.params_bar.p

    @property
    def rbic(self) -> float:
        return criteria.rbic(self.loglik, self.penalty)


@dataclass(frozen=True, eq=False)
class AugmentedTestSet:
    """Test rows followed by the training rows trimmed in the learning phase.

    ``source[m]`` is -1 for an original test row and the training row index
    otherwise; ``source_label[m]`` is the given training label (-1 for test
    rows).
    """

    Ystar: np.ndarray
    source: np.ndarray
    source_label: np.ndarray

    def __post_init__(self):
        Y = np.asarray(self.Ystar, dtype=float)
        if Y.ndim != 2 or not (Y.shape[0] == len(self.source) == len(self.source_label)):
            raise ShapeError("augmented rows and provenance disagree")
        for name, a in (("Ystar", Y), ("source", np.asarray(self.source, int)), ("source_label", np.asarray(self.source_label, int))):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def M(self) -> int:
        return self.Ystar.shape[0]

    @property
    def n_test(self) -> int:
        return int(np.sum(self.source < 0))

    @property
    def recovered(self) -> np.ndarray:
        """Training indices of the appended rows, in row order."""
        return self.source[self.source >= 0]


def _learned_from(labeled, model, alpha_l, params, zeta, failures) -> LearnedModel:
    own = _labeled_scores(params, labeled, contribution=False)
    loglik = float(np.sum(_labeled_scores(params, labeled)[zeta]))
    spec = criteria.penalty_spec(model, labeled.G, labeled.G, labeled.p, math.inf, int(zeta.sum()), "learning")
    return LearnedModel(
        params_bar=params,
        zeta=zeta,
        model=ModelName(model),
        c_tilde=eigen_ratio(params.sigma),
        density_quantiles=_ladder(own),
        alpha_l=float(alpha_l),
        loglik=loglik,
        penalty=spec,
        class_names=labeled.class_names,
        diagnostics=tuple(failures[:3]),
    )


def fit_learning_phase(labeled: LabeledDataset, model, alpha_l: float, n_init: int = 30, seed=0) -> LearnedModel:
    """Trimmed supervised fit of the labelled classes (the robust initialisation)."""
    if not 0.0 <= alpha_l < 0.5:
        raise ConfigError(f"alpha_l must lie in [0, 0.5), got {alpha_l}")
    params, zeta, failures = _robust_init(labeled, model, alpha_l, n_init, _rng(seed))
    zeta = zeta.copy()
    zeta.flags.writeable = False
    return _learned_from(labeled, model, alpha_l, params, zeta, failures)


def build_augmented_test(labeled: LabeledDataset, zeta: np.ndarray, unlabeled: UnlabeledDataset) -> AugmentedTestSet:
    """Append the trimmed training rows, in ascending index, to the test rows."""
    zeta = np.asarray(zeta, dtype=bool)
    if zeta.shape[0] != labeled.N:
        raise ShapeError("trimming flags do not match the training rows")
    if labeled.N and unlabeled.M and labeled.p != unlabeled.p:
        raise ShapeError(f"training has {labeled.p} columns, test has {unlabeled.p}")
    idx = np.flatnonzero(~zeta)
    Y = np.vstack([unlabeled.Y, labeled.X[idx]]) if idx.size else np.array(unlabeled.Y)
    source = np.concatenate([np.full(unlabeled.M, -1), idx])
    source_label = np.concatenate([np.full(unlabeled.M, -1), labeled.labels[idx]])
    return AugmentedTestSet(Y, source, source_label)


# ---------------------------------------------------------------------------
# discovery phase


class _DiscoveryState:
    """Hidden-class parameters, trimming and log-likelihood trace of one run."""

    def __init__(self, learned, Y, ld_known, tau, mu_h, sigma_h, alpha_u, canon, fixed, c):
        self.learned, self.Y, self.ld_known = learned, Y, ld_known
        self.k_u = n_trimmed(Y.shape[0], alpha_u)
        self.canon, self.fixed, self.c = canon, fixed, c
        self.diagnostics: list[str] = []
        self.trace: list[float] = []
        self.tau_history: list[np.ndarray] = []
        self.converged = False
        self._evaluate(tau, mu_h, sigma_h)

    def _evaluate(self, tau, mu_h, sigma_h):
        self.tau, self.mu_h, self.sigma_h = tau, mu_h, sigma_h
        self.tau_history.append(tau)
        G = self.learned.G
        with np.errstate(divide="ignore"):
            log_tau = np.log(tau)
        parts = [self.ld_known + log_tau[:G]]
        if len(sigma_h):
            parts.append(log_gaussian_densities(self.Y, mu_h, sigma_h) + log_tau[G:])
        self.log_joint = np.hstack(parts)
        mix = logsumexp(self.log_joint, axis=1)
        self.mix = mix
        self.phi = _keep_mask(mix, self.k_u)
        self.trace.append(float(mix[self.phi].sum()))

    def step(self):
        G = self.learned.G
        post = _posteriors(self.log_joint)
        w = post[:, G:] * self.phi[:, None]
        S = w.sum(axis=0)
        if np.any(S <= 1e-10):
            raise EmptyComponent(f"hidden group {int(np.argmin(S))} lost all its weight")
        kept = int(self.phi.sum())
        tau_h = S / kept
        tau = np.concatenate([self.learned.params_bar.tau * (1.0 - tau_h.sum()), tau_h])
        scatter, mu_h = ScatterAccumulator.from_weights(self.Y, w)
        sigma_h = mstep_discovery(self.learned.model, self.canon, scatter, self.fixed, self.c)
        self._evaluate(tau, mu_h, sigma_h)

    def run(self, n_steps: int, epsilon: float) -> bool:
        for _ in range(n_steps):
            self.step()
            if len(self.trace) >= 3 and aitken_converged(*self.trace[-3:], epsilon):
                self.converged = True
                break
        return self.converged


def _as_augmented(Ystar) -> AugmentedTestSet:
    if isinstance(Ystar, AugmentedTestSet):
        return Ystar
    if isinstance(Ystar, UnlabeledDataset):
        Ystar = Ystar.Y
    Y = np.atleast_2d(np.asarray(Ystar, dtype=float))
    return AugmentedTestSet(Y, np.full(Y.shape[0], -1), np.full(Y.shape[0], -1))


def _seed_hidden(learned, Y, H, canon, fixed, c, rng):
    """Random (p+1)-subsets of the augmented rows seed the hidden classes."""
    G, p = learned.G, learned.p
    E = G + H
    M = Y.shape[0]
    if M < p + 1:
        raise InitializationFailure(f"need at least {p + 1} test rows to seed a hidden class")
    means, W = np.empty((H, p)), np.empty((H, p, p))
    for h in range(H):
        pick = rng.choice(M, size=p + 1, replace=False)
        S = Y[pick]
        means[h] = S.mean(axis=0)
        R = S - means[h]
        W[h] = R.T @ R
    u = rng.uniform(size=H)
    tau = np.concatenate([learned.params_bar.tau * (G / E), u / u.sum() * (H / E)])
    sigma = mstep_discovery(learned.model, canon, ScatterAccumulator(W, np.full(H, p + 1.0)), fixed, c)
    return tau, means, sigma


def fit_discovery_phase(
    learned: LearnedModel,
    Ystar,
    H: int,
    discovery_model=None,
    alpha_u: float | None = None,
    c=None,
    config: FitConfig | None = None,
    *,
    rng=None,
) -> FitResult:
    """Trimmed EM on the augmented test rows estimating ``H`` hidden classes.

    ``c`` is a number or ``"auto"``/``"auto:K"`` (relative to the learned
    ``c_tilde``); ``None`` takes it from ``config``.  Known means and
    covariances are reused unchanged, known weights are rescaled so their
    ratios stay those of the learning phase.
    """
    config = config or FitConfig()
    alpha_u = config.alpha_u if alpha_u is None else float(alpha_u)
    if not 0.0 <= alpha_u < 0.5:
        raise ConfigError(f"alpha_u must lie in [0, 0.5), got {alpha_u}")
    if H < 0:
        raise ConfigError("H must be >= 0")
    discovery_model = learned.model if discovery_model is None else ModelName(discovery_model)
    canon = canonical_discovery_model(learned.model, discovery_model)
    aug = _as_augmented(Ystar)
    Y = aug.Ystar
    if Y.shape[0] < 1:
        raise ShapeError("the test set is empty")
    if Y.shape[1] != learned.p:
        raise ShapeError(f"test has {Y.shape[1]} columns, the learned model {learned.p}")
    rng = np.random.default_rng(config.seed) if rng is None else _rng(rng)
    c_val = resolve_c(config.c if c is None else c, learned.c_tilde)
    c_m = _mstep_c(c_val)
    bar = learned.params_bar
    G, E = bar.G, bar.G + H
    ld_known = bar.component_log_densities(Y)
    fixed = fixed_components(learned.model, bar.sigma)
    empty = (np.zeros((0, bar.p)), ())

    failures: list[str] = []
    if H == 0:
        state = _DiscoveryState(learned, Y, ld_known, bar.tau, *empty, alpha_u, canon, fixed, c_m)
        state.converged = True
    else:
        short = config.init_em_iter if config.n_init_hidden > 1 else None
        state = None
        for r in range(config.n_init_hidden):
            try:
                start = _seed_hidden(learned, Y, H, canon, fixed, c_m, rng)
                cand = _DiscoveryState(learned, Y, ld_known, *start, alpha_u, canon, fixed, c_m)
                cand.run(short or config.max_iter, config.epsilon)
            except (EmptyComponent, DegenerateCovariance, NumericalUnderflow) as exc:
                failures.append(f"restart {r}: {exc}")
                continue
            if state is None or cand.trace[-1] > state.trace[-1]:
                state = cand
        if state is None:
            raise InitializationFailure("all hidden-class restarts failed: " + "; ".join(failures[:5]))
        if not state.converged:
            state.run(max(config.max_iter - (len(state.trace) - 1), 0), config.epsilon)

    params = MixtureParameters(
        state.tau,
        np.vstack([bar.mu, state.mu_h]),
        tuple(bar.sigma) + tuple(state.sigma_h),
        G,
        discovery_model,
    )
    n_star = int(state.phi.sum())
    spec = criteria.penalty_spec(canon, E, G, bar.p, c_val, n_star, "inductive")
    diagnostics = list(learned.diagnostics) + sorted(set(state.diagnostics)) + failures[:3]
    if not state.converged:
        diagnostics.append(f"EM stopped at max_iter={config.max_iter} before convergence")
    post = _posteriors(state.log_joint)
    kept_scores = state.mix[state.phi]
    extras = {
        "learned": learned,
        "augmented": aug,
        "learning_model": learned.model,
        "canonical_model": canon,
        "tau_history": tuple(state.tau_history),
        "density_threshold": float(kept_scores.min()) if kept_scores.size else -math.inf,
        "density_quantiles": _ladder(state.mix),
    }
    return FitResult(
        approach="inductive",
        params=params,
        trimming=TrimmingIndicators(learned.zeta, state.phi),
        posteriors=post,
        loglik_trace=tuple(state.trace),
        penalty=spec,
        converged=state.converged,
        diagnostics=tuple(diagnostics),
        model=discovery_model,
        c=c_val,
        c_tilde=learned.c_tilde,
        alpha_l=learned.alpha_l,
        alpha_u=alpha_u,
        seed=config.seed,
        n_test=aug.n_test,
        extras=extras,
    )


def fit_inductive(
    config: FitConfig,
    labeled: LabeledDataset,
    unlabeled: UnlabeledDataset,
    E: int,
    learning_model,
    discovery_model=None,
    *,
    learned: LearnedModel | None = None,
) -> FitResult:
    """Learning phase, augmented test set and discovery phase in sequence.

    A ``learned`` model from an earlier call may be passed to skip the
    learning phase.  ``extras["recovered"]`` lists, for every trimmed training
    row, ``(training index, given label, discovery MAP class, kept)``.
    """
    learning_model = ModelName(learning_model)
    if labeled.p != unlabeled.p:
        raise ShapeError(f"training has {labeled.p} columns, test has {unlabeled.p}")
    if E < labeled.G:
        raise ConfigError(f"E={E} is smaller than the number of labelled classes G={labeled.G}")
    rng = np.random.default_rng(config.seed)
    if learned is None:
        learned = fit_learning_phase(labeled, learning_model, config.alpha_l, config.n_init, rng)
    elif learned.model != learning_model:
        raise ConfigError(f"learned model is {learned.model}, not {learning_model}")
    aug = build_augmented_test(labeled, learned.zeta, unlabeled)
    fit = fit_discovery_phase(learned, aug, E - labeled.G, discovery_model, config.alpha_u, None, config, rng=rng)
    lab = fit.map_labels()
    rows = np.flatnonzero(aug.source >= 0)
    fit.extras["recovered"] = tuple(
        (int(aug.source[m]), int(aug.source_label[m]), int(lab[m]), bool(fit.trimming.phi[m])) for m in rows
    )
    return fit


def predict_new(params: MixtureParameters, X, threshold: float = -math.inf):
    """MAP class of new rows and an outlier flag (mixture log-density below ``threshold``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lj = params.log_joint(X)
    mix = logsumexp(lj, axis=1)
    return np.argmax(lj, axis=1), mix < threshold, mix
