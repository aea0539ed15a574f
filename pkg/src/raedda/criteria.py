"""Parameter counts and the trimmed, constraint-aware information criterion.

``v = kappa + gamma + (delta - 1) * (1 - 1/c) + 1`` counts mixing weights and
means (kappa), orientation parameters (gamma) and eigenvalue parameters
(delta), discounting the latter as the ratio bound ``c`` tightens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .covariance import ModelName
from .errors import InvalidConstraint

__all__ = ["PenaltySpec", "parameter_counts", "penalty", "penalty_spec", "rbic", "bic"]

APPROACHES = ("transductive", "inductive", "learning")

# (gamma, delta) with all E groups estimated, then with only H hidden groups
# estimated on top of inherited learned factors.
_JOINT = {
    "EII": (lambda E, p: 0, lambda E, p: 1),
    "VII": (lambda E, p: 0, lambda E, p: E),
    "EEI": (lambda E, p: 0, lambda E, p: p),
    "VEI": (lambda E, p: 0, lambda E, p: E + p - 1),
    "EVI": (lambda E, p: 0, lambda E, p: E * p - (E - 1)),
    "VVI": (lambda E, p: 0, lambda E, p: E * p),
    "EEE": (lambda E, p: p * (p - 1) // 2, lambda E, p: p),
    "VEE": (lambda E, p: p * (p - 1) // 2, lambda E, p: E + p - 1),
    "EVE": (lambda E, p: p * (p - 1) // 2, lambda E, p: E * p - (E - 1)),
    "EEV": (lambda E, p: E * p * (p - 1) // 2, lambda E, p: p),
    "VVE": (lambda E, p: p * (p - 1) // 2, lambda E, p: E * p),
    "VEV": (lambda E, p: E * p * (p - 1) // 2, lambda E, p: E + p - 1),
    "EVV": (lambda E, p: E * p * (p - 1) // 2, lambda E, p: E * p - (E - 1)),
    "VVV": (lambda E, p: E * p * (p - 1) // 2, lambda E, p: E * p),
}

_HIDDEN = {
    "EII": (lambda H, p: 0, lambda H, p: 0),
    "VII": (lambda H, p: 0, lambda H, p: H),
    "EEI": (lambda H, p: 0, lambda H, p: 0),
    "VEI": (lambda H, p: 0, lambda H, p: H),
    "EVI": (lambda H, p: 0, lambda H, p: H * p - H),
    "VVI": (lambda H, p: 0, lambda H, p: H * p),
    "EEE": (lambda H, p: 0, lambda H, p: 0),
    "VEE": (lambda H, p: 0, lambda H, p: H),
    "EVE": (lambda H, p: 0, lambda H, p: H * p - H),
    "EEV": (lambda H, p: H * p * (p - 1) // 2, lambda H, p: 0),
    "VVE": (lambda H, p: 0, lambda H, p: H * p),
    "VEV": (lambda H, p: H * p * (p - 1) // 2, lambda H, p: H),
    "EVV": (lambda H, p: H * p * (p - 1) // 2, lambda H, p: H * p - H),
    "VVV": (lambda H, p: H * p * (p - 1) // 2, lambda H, p: H * p),
}


def parameter_counts(model, E: int, G: int, p: int, approach: str = "transductive") -> tuple[int, int, int]:
    """Return ``(kappa, gamma, delta)``.

    ``approach`` is ``"transductive"`` (all E groups estimated jointly),
    ``"inductive"`` (only the E - G hidden groups of a discovery phase) or
    ``"learning"`` (the G known groups of a learning phase).
    """
    model = ModelName(model).value
    if approach == "transductive":
        g, d = _JOINT[model]
        return E * p + (E - 1), g(E, p), d(E, p)
    if approach == "learning":
        g, d = _JOINT[model]
        return G * p + (G - 1), g(G, p), d(G, p)
    if approach == "inductive":
        H = E - G
        g, d = _HIDDEN[model]
        return H * p + (E - 1), g(H, p), d(H, p)
    raise ValueError(f"unknown approach {approach!r}")


def _inv_c(c: float) -> float:
    c = float(c)
    if not c >= 1.0:
        raise InvalidConstraint(f"eigenvalue-ratio bound must be >= 1, got {c}")
    return 0.0 if math.isinf(c) else 1.0 / c


def penalty(model, E: int, G: int, p: int, c: float, approach: str = "transductive") -> float:
    kappa, gamma, delta = parameter_counts(model, E, G, p, approach)
    return kappa + gamma + (delta - 1) * (1.0 - _inv_c(c)) + 1


@dataclass(frozen=True)
class PenaltySpec:
    kappa: int
    gamma: int
    delta: int
    c: float
    n_star: int
    approach: str

    @property
    def v(self) -> float:
        return self.kappa + self.gamma + (self.delta - 1) * (1.0 - _inv_c(self.c)) + 1


def penalty_spec(model, E: int, G: int, p: int, c: float, n_star: int, approach: str = "transductive") -> PenaltySpec:
    kappa, gamma, delta = parameter_counts(model, E, G, p, approach)
    _inv_c(c)
    return PenaltySpec(kappa, gamma, delta, float(c), int(n_star), approach)


def rbic(fit_or_loglik, spec: PenaltySpec | None = None) -> float:
    """``2 * loglik - v * log(n_star)``.

    Accepts either a fit result (whose own penalty is used unless ``spec`` is
    given) or a maximised trimmed log-likelihood together with ``spec``.
    """
    if isinstance(fit_or_loglik, (int, float)):
        loglik = float(fit_or_loglik)
    else:
        loglik = fit_or_loglik.loglik
        spec = spec or fit_or_loglik.penalty
    if spec is None:
        raise ValueError("a penalty specification is required")
    return 2.0 * loglik - spec.v * math.log(spec.n_star)


def bic(loglik: float, n_params: int, n: int) -> float:
    """Classical BIC on the larger-is-better scale."""
    return 2.0 * loglik - n_params * math.log(n)
