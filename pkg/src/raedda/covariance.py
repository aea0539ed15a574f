"""Eigen-decomposed covariance matrices and their patterned M-step updates.

Every covariance is stored as ``Sigma = lam * D @ diag(shape) @ D.T`` where
``lam = |Sigma|**(1/p)`` is the volume, ``shape`` has unit product and ``D``
is orthogonal.  A three-letter model code fixes which of the three factors
are shared across groups (E), free per group (V) or trivial (I).

The M-step maximises the weighted Gaussian complete-data log-likelihood of
each model subject to the eigenvalue-ratio bound ``max(d) / min(d) <= c``
taken over every eigenvalue of every group.  For a fixed set of axes the
eigenvalue sub-problem is convex in ``log d``: independent patterns are
solved by exact clamping, coupled ones by a small log-barrier Newton solver.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import nnls

from .errors import (
    DegenerateCovariance,
    EmptyComponent,
    EmptyInput,
    InvalidConstraint,
    ModelLatticeViolation,
    ShapeError,
)

__all__ = [
    "ModelName",
    "MODEL_ORDER",
    "EigenDecomposition",
    "ScatterAccumulator",
    "FixedComponents",
    "decompose",
    "compose",
    "eigen_ratio",
    "constrain_eigenvalues",
    "mstep_covariances",
    "allowed_discovery_models",
    "canonical_discovery_model",
    "fixed_components",
    "mstep_discovery",
    "log_gaussian_densities",
    "complete_data_objective",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_EIG_FLOOR = 1e-12


class ModelName(str, enum.Enum):
    """The 14 parsimonious covariance models, simplest first."""

    EII = "EII"
    VII = "VII"
    EEI = "EEI"
    VEI = "VEI"
    EVI = "EVI"
    VVI = "VVI"
    EEE = "EEE"
    VEE = "VEE"
    EVE = "EVE"
    EEV = "EEV"
    VVE = "VVE"
    VEV = "VEV"
    EVV = "EVV"
    VVV = "VVV"

    def __str__(self) -> str:
        return self.value

    @property
    def volume(self) -> str:
        return self.value[0]

    @property
    def shape(self) -> str:
        return self.value[1]

    @property
    def orientation(self) -> str:
        return self.value[2]

    @property
    def ratio_constrained(self) -> bool:
        """Whether the eigenvalue-ratio bound is needed to keep the likelihood bounded."""
        return self.value not in ("EII", "EEI", "EEE", "EEV")

    @property
    def rank(self) -> int:
        return MODEL_ORDER.index(self)


MODEL_ORDER: tuple[ModelName, ...] = tuple(ModelName)


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    """Volume / shape / orientation factorisation of one covariance matrix.

    ``shape[l]`` is paired with column ``l`` of ``orientation``.  Matrices
    produced by :func:`decompose` and by models with free orientation have
    the shape sorted in non-increasing order; axis-aligned and common-axis
    models keep the axes in a fixed shared order instead.
    """

    lam: float
    shape: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lam", float(self.lam))
        for name in ("shape", "orientation"):
            arr = getattr(self, name)
            if not isinstance(arr, np.ndarray) or arr.flags.writeable:
                arr = np.array(arr, dtype=float)
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)
        p = self.shape.shape[0]
        if self.shape.ndim != 1 or self.orientation.shape != (p, p):
            raise ShapeError(f"shape {self.shape.shape} and orientation {self.orientation.shape} disagree")
        if not (self.lam > 0 and math.isfinite(self.lam)) or not np.all(self.shape > 0):
            raise DegenerateCovariance("volume and shape entries must be positive")
        if abs(float(np.sum(np.log(self.shape)))) > 1e-6:
            raise DegenerateCovariance("shape entries must have product 1")

    @property
    def p(self) -> int:
        return self.shape.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.lam * self.shape

    @property
    def log_det(self) -> float:
        return float(np.sum(np.log(self.eigenvalues)))

    def covariance(self) -> np.ndarray:
        return compose(self)


@dataclass(frozen=True, eq=False)
class ScatterAccumulator:
    """Weighted within-group cross-products ``W`` (E, p, p) and sizes ``n`` (E,)."""

    W: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        n = np.atleast_1d(np.asarray(self.n, dtype=float))
        if W.ndim == 2:
            W = W[None]
        if W.ndim != 3 or W.shape[1] != W.shape[2] or W.shape[0] != n.shape[0]:
            raise ShapeError(f"scatter shapes {W.shape} and {n.shape} disagree")
        if np.any(n < 0):
            raise ValueError("effective sizes must be non-negative")
        object.__setattr__(self, "W", 0.5 * (W + W.transpose(0, 2, 1)))
        object.__setattr__(self, "n", n)

    @property
    def E(self) -> int:
        return self.n.shape[0]

    @property
    def p(self) -> int:
        return self.W.shape[1]

    @classmethod
    def from_weights(cls, X: np.ndarray, weights: np.ndarray, means: np.ndarray | None = None):
        """Scatter of rows ``X`` (n, p) under column weights ``weights`` (n, E).

        Returns the accumulator together with the weighted means (E, p).
        """
        X = np.asarray(X, dtype=float)
        weights = np.asarray(weights, dtype=float)
        n = weights.sum(axis=0)
        if means is None:
            with np.errstate(invalid="ignore", divide="ignore"):
                means = (weights.T @ X) / n[:, None]
        W = np.empty((weights.shape[1], X.shape[1], X.shape[1]))
        for g in range(weights.shape[1]):
            R = X - means[g]
            W[g] = (R * weights[:, g, None]).T @ R
        return cls(W, n), means


@dataclass(frozen=True, eq=False)
class FixedComponents:
    """Learned factors a discovery model may inherit (None when not shared)."""

    lam: float | None
    shape: np.ndarray | None
    orientation: np.ndarray | None


def _sign_fix(V: np.ndarray) -> np.ndarray:
    # make the largest-magnitude entry of every column positive
    idx = np.argmax(np.abs(V), axis=-2)
    pick = np.take_along_axis(V, idx[..., None, :], axis=-2)
    signs = np.where(pick < 0, -1.0, 1.0)
    return V * signs


def _sorted_eigh(S: np.ndarray):
    """Eigenvalues in non-increasing order (stable on ties) and matching vectors."""
    w, V = np.linalg.eigh(S)
    order = np.argsort(-w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[..., None, :], axis=-1)
    return w, _sign_fix(V)


def _from_eigenvalues(d: np.ndarray, D: np.ndarray) -> EigenDecomposition:
    lam = float(np.exp(np.mean(np.log(d))))
    return EigenDecomposition(lam, d / lam, D)


def decompose(Sigma) -> EigenDecomposition:
    """Factorise an SPD matrix as ``lam * D diag(shape) D'``."""
    S = np.asarray(Sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {S.shape}")
    S = 0.5 * (S + S.T)
    if not np.all(np.isfinite(S)):
        raise DegenerateCovariance("matrix has non-finite entries")
    w, V = _sorted_eigh(S)
    if w[-1] <= 0:
        raise DegenerateCovariance(f"smallest eigenvalue {w[-1]:.3g} is not positive")
    return _from_eigenvalues(w, V)


def compose(dec: EigenDecomposition) -> np.ndarray:
    D = dec.orientation
    S = (D * dec.eigenvalues) @ D.T
    return 0.5 * (S + S.T)


def eigen_ratio(Sigmas) -> float:
    """Largest over smallest eigenvalue across all the given matrices."""
    items = list(Sigmas)
    if not items:
        raise EmptyInput("no covariance matrices given")
    eigs = []
    for S in items:
        if isinstance(S, EigenDecomposition):
            ev = S.eigenvalues
        else:
            S = np.asarray(S, dtype=float)
            ev = np.linalg.eigvalsh(0.5 * (S + S.T))
        if not np.all(np.isfinite(ev)) or np.min(ev) <= 0:
            raise DegenerateCovariance("matrix is not positive definite")
        eigs.append(ev)
    eigs = np.concatenate(eigs)
    return float(eigs.max() / eigs.min())


def _check_c(c) -> float | None:
    if c is None:
        return None
    c = float(c)
    if not c >= 1.0:
        raise InvalidConstraint(f"eigenvalue-ratio bound must be >= 1, got {c}")
    return c


# ---------------------------------------------------------------------------
# eigenvalue truncation


def _clamp_objective(e, w, m, c):
    lo = m[:, None]
    d = np.clip(e[None, :], lo, c * lo)
    # near-zero candidates score +inf and are never selected
    with np.errstate(over="ignore", divide="ignore"):
        return np.sum(w * (np.log(d) + e / d), axis=1)


def _optimal_threshold(e: np.ndarray, w: np.ndarray, c: float) -> float:
    """Lower clamp level m minimising sum w (log d + e/d), d = clip(e, m, c m)."""
    pos = e[e > 0]
    bps = np.unique(np.concatenate([pos, pos / c]))
    # candidate stationary points, one per interval between breakpoints
    order = np.argsort(e, kind="stable")
    es, ws = e[order], w[order]
    cum_we = np.concatenate([[0.0], np.cumsum(ws * es)])
    cum_w = np.concatenate([[0.0], np.cumsum(ws)])
    lo_edges = np.concatenate([[0.0], bps])
    hi_edges = np.concatenate([bps, [np.inf]])
    k_low = np.searchsorted(es, lo_edges, side="right")
    k_high = np.searchsorted(es / c, hi_edges, side="left")
    num = cum_we[k_low] + (cum_we[-1] - cum_we[k_high]) / c
    den = cum_w[k_low] + (cum_w[-1] - cum_w[k_high])
    with np.errstate(invalid="ignore", divide="ignore"):
        stat = num / den
    ok = (den > 0) & (stat > lo_edges) & (stat < hi_edges)
    cands = np.concatenate([bps, stat[ok]])
    cands = cands[cands > 0]
    obj = _clamp_objective(e, w, cands, c)
    return float(cands[int(np.argmin(obj))])


def _upper_level(m: float, c: float) -> float:
    up = c * m
    while up / m > c:
        up = np.nextafter(up, 0.0)
    return up


def constrain_eigenvalues(eigs: Sequence, weights: Sequence, c: float) -> list[np.ndarray]:
    """Optimally truncate eigenvalues so that their overall ratio is at most ``c``.

    Each entry ``e`` becomes ``clip(e, m, c*m)`` with the common level ``m``
    minimising ``sum_g weights[g] * sum_l (log d + e/d)``, i.e. maximising
    the Gaussian likelihood among all such truncations.
    """
    c = _check_c(c)
    arrays = [np.atleast_1d(np.asarray(a, dtype=float)) for a in eigs]
    if not arrays:
        raise EmptyInput("no eigenvalues given")
    if len(weights) != len(arrays):
        raise ShapeError("one weight per group is required")
    flat = np.concatenate([a.ravel() for a in arrays])
    if np.any(~np.isfinite(flat)) or np.any(flat < 0):
        raise DegenerateCovariance("eigenvalues must be finite and non-negative")
    if flat.max() <= 0:
        raise DegenerateCovariance("all eigenvalues are zero")
    lo = flat.min()
    if lo > 0 and flat.max() <= c * lo:
        return [a.copy() for a in arrays]
    w = np.concatenate([np.full(a.size, float(wt)) for a, wt in zip(arrays, weights)])
    m = _optimal_threshold(flat, w, c)
    up = _upper_level(m, c)
    return [np.clip(a, m, up) for a in arrays]


# ---------------------------------------------------------------------------
# coupled eigenvalue patterns: minimise sum w (x + e exp(-x)) over an affine
# family x = x0 + B theta, optionally with max(x) - min(x) <= log c


def _newton_free(x0, B, w, e, max_iter=200, theta=None, rtol=1e-13):
    theta = np.zeros(B.shape[1]) if theta is None else np.array(theta, dtype=float)
    scale = w.sum()

    def f(th):
        x = x0 + B @ th
        with np.errstate(over="ignore", invalid="ignore"):
            v = float(np.sum(w * (x + e * np.exp(-x))))
        # 0 * inf from a null eigenvalue: reject the trial step
        return v if np.isfinite(v) else np.inf

    val = f(theta)
    for _ in range(max_iter):
        x = x0 + B @ theta
        ex = e * np.exp(-x)
        g = B.T @ (w * (1.0 - ex))
        H = (B.T * (w * ex)) @ B
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        dec = float(g @ step)
        if dec <= rtol * scale:
            # inside the quadratic region one full step reaches round-off level
            theta = theta - step
            break
        t = 1.0
        for _ in range(60):
            new = f(theta - t * step)
            if new <= val - 0.25 * t * dec:
                break
            t *= 0.5
        else:
            break
        theta = theta - t * step
        val = new
    return x0 + B @ theta


def _barrier(x0, B, w, e, L, gap, z=None, s=None):
    """Log-barrier Newton method with slack t: t <= x_i <= t + L.

    Stops when the duality-gap bound ``2K/s`` falls below ``gap * sum(w)``.
    Returns the final ``(z, s)`` so a run can be resumed with a smaller gap.
    """
    K, k = B.shape
    sw = float(w.sum())
    if z is None:
        if np.ptp(x0) >= L:
            raise ValueError("barrier start is not strictly feasible")
        z = np.concatenate([np.zeros(k), [x0.min() - 0.5 * L]])
        s = K / sw
    s_final = 2.0 * K / (gap * sw)
    s = min(s, s_final)
    BT = B.T

    def value(z, s):
        x = x0 + B @ z[:k]
        a = x - z[k]
        b = z[k] + L - x
        if a.min() <= 0.0 or b.min() <= 0.0:
            return np.inf
        return s * float(w @ (x + e * np.exp(-x))) - float(np.log(a).sum() + np.log(b).sum())

    H = np.empty((k + 1, k + 1))
    while True:
        val = value(z, s)
        for _ in range(50):
            x = x0 + B @ z[:k]
            ia, ib = 1.0 / (x - z[k]), 1.0 / (z[k] + L - x)
            ex = e * np.exp(-x)
            q = ia * ia + ib * ib
            v = s * w * (1.0 - ex) - ia + ib
            grad = np.empty(k + 1)
            grad[:k] = BT @ v
            grad[k] = ia.sum() - ib.sum()
            H[:k, :k] = (BT * (s * w * ex + q)) @ B
            H[:k, k] = H[k, :k] = -(BT @ q)
            H[k, k] = q.sum()
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            dec = float(grad @ step)
            # centering error dec / s is kept well below the target gap
            if dec <= max(1e-9, 0.1 * gap * sw * s):
                break
            # largest step keeping every slack positive
            dx = B @ step[:k]
            da, db = dx - step[k], step[k] - dx
            with np.errstate(divide="ignore", invalid="ignore"):
                lim_a = np.where(da > 0, (x - z[k]) / da, np.inf)
                lim_b = np.where(db > 0, (z[k] + L - x) / db, np.inf)
            t = min(1.0, 0.99 * float(min(lim_a.min(), lim_b.min())))
            for _ in range(40):
                new = value(z - t * step, s)
                if new <= val - 0.25 * t * dec:
                    break
                t *= 0.5
            else:
                break
            z = z - t * step
            val = new
        if s >= s_final:
            break
        s = min(s * 100.0, s_final)
    return z, s


def _polish(x0, B, w, e, L, z, s):
    """Exact optimum on the active set guessed from a barrier iterate, or None.

    Active constraints have slack near ``1/(s * multiplier)``, inactive ones
    of order ``L``; those below the geometric mean of the two start as
    active; the equality-constrained
    problem is solved by Newton's method.  A constraint whose multiplier has
    the wrong sign is released and the solve repeated.  The result is
    accepted only if it is feasible and satisfies the sign conditions.
    """
    K, k = B.shape
    x = x0 + B @ z[:k]
    thr = np.sqrt(L / (s * w.mean()))
    lo = (x - z[k]) < thr
    up = (z[k] + L - x) < thr
    if not lo.any():
        lo[np.argmin(x - z[k])] = True
    if not up.any():
        up[np.argmin(z[k] + L - x)] = True
    A = np.hstack([B, -np.ones((K, 1))])
    tol = 1e-10 * max(1.0, L)
    for _ in range(2 * K):
        C = np.vstack([A[lo], A[up]])
        r = np.concatenate([-x0[lo], L - x0[up]])
        zp = np.linalg.lstsq(C, r, rcond=None)[0]
        if np.abs(C @ zp - r).max() > 1e-9 * max(1.0, np.abs(r).max()):
            return None
        N = null_space(C)
        if N.shape[1]:
            base = x0 + B @ zp[:k]
            BN = B @ N[:k]
            y = _newton_free(base, BN, w, e, theta=N.T @ (z - zp))
            zs = zp + N @ np.linalg.lstsq(BN, y - base, rcond=None)[0]
        else:
            zs = zp
        xs = x0 + B @ zs[:k]
        slack_a, slack_b = xs - zs[k], zs[k] + L - xs
        if min(slack_a.min(), slack_b.min()) < -tol:
            # add the most violated bound
            if slack_a.min() <= slack_b.min():
                lo[np.argmin(slack_a)] = True
            else:
                up[np.argmin(slack_b)] = True
            continue
        grad = np.concatenate([B.T @ (w * (1.0 - e * np.exp(-xs))), [0.0]])
        # multipliers: nonnegative on lower bounds, nonpositive on upper bounds
        n_lo = int(lo.sum())
        signed = np.hstack([C[:n_lo].T, -C[n_lo:].T])
        _, resid = nnls(signed, grad)
        if resid <= 1e-7 * max(1.0, np.abs(grad).max(), w.max()):
            return np.clip(xs, zs[k], zs[k] + L)
        # release the bound whose multiplier has the most wrong sign
        nu = np.linalg.lstsq(C.T, grad, rcond=None)[0] * np.r_[np.ones(n_lo), -np.ones(C.shape[0] - n_lo)]
        worst = int(np.argmin(nu))
        if nu[worst] >= 0:
            return None
        if worst < n_lo:
            lo[np.flatnonzero(lo)[worst]] = False
        else:
            up[np.flatnonzero(up)[worst - n_lo]] = False
        if not (lo.any() and up.any()):
            return None
    return None


def _solve_log_eigen(x0, B, w, e, log_c, free_shift):
    """Minimise sum w (x + e exp(-x)) over x = x0 + B theta within a log-range bound."""
    sw = w.sum()
    scale = float(np.sum(w * e) / sw)
    if not scale > 0:
        raise DegenerateCovariance("all scatter eigenvalues are zero")
    e = e / scale
    x0 = x0 - np.log(scale)
    if log_c is not None and log_c <= 1e-12:
        x = np.zeros_like(x0) if free_shift else x0.copy()
        return x + np.log(scale)
    x = None
    if np.all(e > 0):
        x = _newton_free(x0, B, w, e)
        if log_c is not None and np.ptp(x) > log_c:
            x = None
    if x is None:
        if log_c is None:
            raise DegenerateCovariance("unbounded eigenvalue problem")
        z, s = _barrier(x0, B, w, e, log_c, 1e-3)
        x = _polish(x0, B, w, e, log_c, z, s)
        if x is None:
            z, s = _barrier(x0, B, w, e, log_c, 1e-10, z, s)
            x = _polish(x0, B, w, e, log_c, z, s)
            if x is None:
                x = x0 + B @ z[:-1]
    return x + np.log(scale)


def _sum_zero_basis(p: int) -> np.ndarray:
    return null_space(np.ones((1, p))) if p > 1 else np.zeros((1, 0))


def _floor(e: np.ndarray) -> np.ndarray:
    top = e.max()
    if not top > 0:
        raise DegenerateCovariance("all scatter eigenvalues are zero")
    return np.maximum(e, _EIG_FLOOR * top)


def _solve_eigenvalues(omega: np.ndarray, n: np.ndarray, volume: str, shape: str, c):
    """Optimal eigenvalues (E, p) for axis scatters ``omega`` (E, p)."""
    E, p = omega.shape
    omega = np.maximum(omega, 0.0)
    if shape == "I":
        if volume == "E":
            lam = omega.sum() / (p * n.sum())
            if not lam > 0:
                raise DegenerateCovariance("all scatter eigenvalues are zero")
            return np.full((E, p), lam)
        e = omega.sum(axis=1) / (p * n)
        if c is None:
            e = _floor(e)
        else:
            e = np.concatenate(constrain_eigenvalues([[v] for v in e], p * n, c))
        return np.repeat(e[:, None], p, axis=1)
    if volume == "E" and shape == "E":
        e = omega.sum(axis=0) / n.sum()
        e = _floor(e) if c is None else constrain_eigenvalues([e], [n.sum()], c)[0]
        return np.tile(e, (E, 1))
    e = omega / n[:, None]
    if volume == "V" and shape == "V":
        if c is None:
            return _floor(e)
        return np.array(constrain_eigenvalues(list(e), n, c))
    if c is None:
        e = _floor(e)
    P = _sum_zero_basis(p)
    if volume == "V":  # d_gl = lam_g a_l
        B = np.hstack([np.kron(np.eye(E), np.ones((p, 1))), np.tile(P, (E, 1))])
    else:  # d_gl = lam a_gl, prod_l a_gl = 1
        B = np.hstack([np.ones((E * p, 1)), np.kron(np.eye(E), P)])
    w = np.repeat(n, p)
    log_c = None if c is None else np.log(c)
    x = _solve_log_eigen(np.zeros(E * p), B, w, e.ravel(), log_c, free_shift=True)
    return np.exp(x).reshape(E, p)


def _assemble(d: np.ndarray, orientations, volume: str, shape: str) -> list[EigenDecomposition]:
    E, p = d.shape
    logd = np.log(d)
    lam = np.exp(logd.mean(axis=1))
    if volume == "E":
        lam[:] = np.exp(logd.mean())
    if shape == "I":
        shared = np.ones(p)
        shapes = [shared] * E
    elif shape == "E":
        shared = np.exp(logd[0] - logd[0].mean())
        shapes = [shared] * E
    else:
        shapes = list(d / lam[:, None])
    shared_arrays: dict[int, np.ndarray] = {}

    def frozen(a):
        # identical input objects map to one read-only array so sharing is exact
        key = id(a)
        if key not in shared_arrays:
            b = np.array(a, dtype=float)
            b.flags.writeable = False
            shared_arrays[key] = b
        return shared_arrays[key]

    return [EigenDecomposition(lam[g], frozen(shapes[g]), frozen(orientations[g])) for g in range(E)]


def _axis_objective(omega: np.ndarray, d: np.ndarray, n: np.ndarray) -> float:
    return float(np.sum(n[:, None] * np.log(d) + omega / d))


def _rotate(M: np.ndarray, D: np.ndarray, j: int, k: int, cs: float, sn: float):
    idx = [j, k]
    G = np.array([[cs, -sn], [sn, cs]])
    D[:, idx] = D[:, idx] @ G
    M[:, :, idx] = M[:, :, idx] @ G
    M[:, idx, :] = G.T @ M[:, idx, :]


def _jacobi_sweep(M: np.ndarray, d: np.ndarray, D: np.ndarray) -> None:
    """One sweep of exact plane rotations of the common axes, in place.

    For fixed eigenvalues the objective sum_g tr(M_g diag(1/d_g)) restricted
    to a rotation by t in the (j, k) plane is K + A cos 2t + B sin 2t, so
    every rotation is an exact coordinate minimisation.
    """
    inv = 1.0 / d
    p = D.shape[0]
    for j in range(p - 1):
        for k in range(j + 1, p):
            diff = inv[:, j] - inv[:, k]
            A = 0.5 * np.sum((M[:, j, j] - M[:, k, k]) * diff)
            Bc = np.sum(M[:, j, k] * diff)
            r = np.hypot(A, Bc)
            if r <= 1e-15 * (abs(A) + abs(Bc) + np.abs(M[:, j, j]).sum() * np.abs(diff).sum()):
                continue
            t = 0.5 * np.arctan2(-Bc, -A)
            _rotate(M, D, j, k, np.cos(t), np.sin(t))


def _project(W: np.ndarray, D: np.ndarray) -> np.ndarray:
    M = np.einsum("pi,gpq,qj->gij", D, W, D)
    return 0.5 * (M + M.transpose(0, 2, 1))


def _common_axes_run(W, n, volume, shape, c, D0, tol, max_iter):
    D = np.array(D0, dtype=float)
    M = _project(W, D)
    omega = np.diagonal(M, axis1=1, axis2=2)
    d = _solve_eigenvalues(omega, n, volume, shape, c)
    obj = _axis_objective(omega, d, n)
    for _ in range(max_iter):
        if shape == "E":
            # shared shape, free volumes: exact eigen-update of the axes
            lam = np.exp(np.log(d).mean(axis=1))
            a = d[0] / lam[0]
            vals, vecs = _sorted_eigh((W / lam[:, None, None]).sum(axis=0))
            rank = np.argsort(-a, kind="stable")
            D = np.empty_like(vecs)
            D[:, rank] = vecs
        else:
            _jacobi_sweep(M, d, D)
        M = _project(W, D)
        omega = np.diagonal(M, axis1=1, axis2=2)
        d_new = _solve_eigenvalues(omega, n, volume, shape, c)
        new = _axis_objective(omega, d_new, n)
        d = d_new
        if obj - new <= tol * max(1.0, abs(new)):
            return D, d, min(obj, new), True
        obj = new
    return D, d, obj, False


def _common_axes(W, n, volume, shape, c, warm_start, tol, max_iter, diagnostics):
    if volume == "E" and shape == "E":
        _, D = _sorted_eigh(W.sum(axis=0))
        omega = np.diagonal(_project(W, D), axis1=1, axis2=2)
        return D, _solve_eigenvalues(omega, n, volume, shape, c)
    if warm_start is not None:
        starts = [warm_start[0].orientation]
    else:
        starts = [_sorted_eigh((W / n[:, None, None]).sum(axis=0))[1]]
        starts += list(_sorted_eigh(W)[1])
    best = None
    for D0 in starts:
        D, d, obj, ok = _common_axes_run(W, n, volume, shape, c, D0, tol, max_iter)
        if best is None or obj < best[2]:
            best = (D, d, obj, ok)
    if not best[3] and diagnostics is not None:
        diagnostics.append(f"{volume}{shape}E common-axes update did not converge in {max_iter} iterations")
    return best[0], best[1]


def _check_scatter(scatter: ScatterAccumulator):
    if not isinstance(scatter, ScatterAccumulator):
        scatter = ScatterAccumulator(*scatter)
    if np.any(scatter.n <= 0):
        raise EmptyComponent("a group has zero effective size")
    return scatter.W, scatter.n


def mstep_covariances(
    model,
    scatter: ScatterAccumulator,
    c: float | None = None,
    warm_start: Sequence[EigenDecomposition] | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    diagnostics: list | None = None,
) -> list[EigenDecomposition]:
    """Constrained maximum-likelihood covariances for every group of ``model``.

    ``c=None`` leaves the eigenvalues unconstrained apart from a relative
    floor of 1e-12 that keeps degenerate scatters positive definite.
    ``warm_start`` seeds the iterative common-axes models (VEE, EVE, VVE).
    """
    model = ModelName(model)
    W, n = _check_scatter(scatter)
    c = _check_c(c)
    E, p = n.shape[0], W.shape[1]
    vol, shp, ori = model.volume, model.shape, model.orientation
    if ori == "I":
        omega = np.diagonal(W, axis1=1, axis2=2)
        d = _solve_eigenvalues(omega, n, vol, shp, c)
        eye = np.eye(p)
        orientations = [eye] * E
    elif ori == "V":
        vals, vecs = _sorted_eigh(W)
        d = _solve_eigenvalues(vals, n, vol, shp, c)
        orientations = list(vecs)
    else:
        D, d = _common_axes(W, n, vol, shp, c, warm_start, tol, max_iter, diagnostics)
        if shp == "E":
            # keep the shared shape sorted; the axes are shared so one permutation serves all
            order = np.argsort(-d[0], kind="stable")
            D, d = D[:, order], d[:, order]
        orientations = [D] * E
    return _assemble(d, orientations, vol, shp)


def complete_data_objective(sigmas: Sequence[EigenDecomposition], scatter: ScatterAccumulator) -> float:
    """Covariance part of the complete-data log-likelihood.

    Equals ``-0.5 * sum_g (n_g log|Sigma_g| + tr(W_g Sigma_g^-1))``.
    """
    total = 0.0
    for dec, W, n in zip(sigmas, scatter.W, scatter.n):
        D = dec.orientation
        omega = np.einsum("pi,pq,qi->i", D, W, D)
        total += n * dec.log_det + float(np.sum(omega / dec.eigenvalues))
    return -0.5 * total


# ---------------------------------------------------------------------------
# discovery-phase updates with inherited components

_RELAX = {"E": "EV", "V": "V", "I": "IEV"}


def allowed_discovery_models(learning_model) -> frozenset:
    """Models obtainable from ``learning_model`` by relaxing any of its letters.

    Volume E may become V; shape or orientation I may become E or V; E may
    become V.  Pairs that only relabel an inherited identity (for example
    VEE after VEI) are included; they are fitted as their simpler equivalent.
    """
    learning = ModelName(learning_model)
    return frozenset(
        m for m in MODEL_ORDER if all(m.value[i] in _RELAX[learning.value[i]] for i in range(3))
    )


def canonical_discovery_model(learning_model, discovery_model) -> ModelName:
    """Simplest model equivalent to ``discovery_model`` given what it inherits."""
    learning = ModelName(learning_model)
    disc = ModelName(discovery_model)
    if disc not in allowed_discovery_models(learning):
        raise ModelLatticeViolation(f"{disc} cannot follow learning model {learning}")
    vol, shp, ori = disc.value
    if shp == "E" and learning.shape == "I":
        shp = "I"
    if (ori == "E" and learning.orientation == "I") or shp == "I":
        ori = "I"
    return ModelName(vol + shp + ori)


def fixed_components(learning_model, known: Sequence[EigenDecomposition]) -> FixedComponents:
    """Shared learned factors of ``learning_model`` (taken from the first known group)."""
    learning = ModelName(learning_model)
    if not known:
        raise EmptyInput("no learned covariances")
    ref = known[0]
    lam = ref.lam if learning.volume == "E" else None
    if learning.shape == "I":
        shape = np.ones(ref.p)
    elif learning.shape == "E":
        shape = ref.shape
    else:
        shape = None
    if learning.orientation == "I":
        orientation = np.eye(ref.p)
    elif learning.orientation == "E":
        orientation = ref.orientation
    else:
        orientation = None
    return FixedComponents(lam, shape, orientation)


def mstep_discovery(
    learning_model,
    discovery_model,
    scatter_hidden: ScatterAccumulator,
    fixed,
    c: float | None = None,
) -> list[EigenDecomposition]:
    """Covariances of the hidden groups given the frozen learned factors.

    ``fixed`` is either a :class:`FixedComponents` or the learned
    decompositions of the known groups.  The ratio bound applies to the
    hidden groups only.
    """
    learning = ModelName(learning_model)
    canon = canonical_discovery_model(learning, discovery_model)
    W, n = _check_scatter(scatter_hidden)
    c = _check_c(c)
    fx = fixed if isinstance(fixed, FixedComponents) else fixed_components(learning, fixed)
    H, p = n.shape[0], W.shape[1]
    vol, shp, ori = canon.value
    if not canon.ratio_constrained:
        c = None

    if ori == "I":
        D = np.eye(p)
        omega = np.diagonal(W, axis1=1, axis2=2)
        orientations = [D] * H
    elif ori == "E":
        D = fx.orientation
        omega = np.diagonal(_project(W, D), axis1=1, axis2=2)
        orientations = [D] * H
    else:
        omega, vecs = _sorted_eigh(W)
        orientations = list(vecs)
    omega = np.maximum(omega, 0.0)

    if shp == "I":
        abar = np.ones(p)
    elif shp == "E":
        abar = fx.shape
        if ori == "V":
            abar = np.sort(abar)[::-1]
    else:
        abar = None

    if vol == "E" and abar is not None:
        return [EigenDecomposition(fx.lam, abar, orientations[h]) for h in range(H)]

    if vol == "V" and abar is not None:
        e = np.sum(omega / abar, axis=1) / (p * n)
        if c is None:
            e = _floor(e)
        else:
            c_vol = max(1.0, c / (abar.max() / abar.min()))
            e = np.concatenate(constrain_eigenvalues([[v] for v in e], p * n, c_vol))
        return [EigenDecomposition(e[h], abar, orientations[h]) for h in range(H)]

    e = omega / n[:, None]
    if vol == "E":
        if c is None:
            e = _floor(e)
            logs = np.log(e)
            shapes = np.exp(logs - logs.mean(axis=1, keepdims=True))
        else:
            P = _sum_zero_basis(p)
            B = np.kron(np.eye(H), P)
            x0 = np.full(H * p, np.log(fx.lam))
            x = _solve_log_eigen(x0, B, np.repeat(n, p), e.ravel(), np.log(c), free_shift=False)
            logs = x.reshape(H, p) - np.log(fx.lam)
            shapes = np.exp(logs - logs.mean(axis=1, keepdims=True))
        return [EigenDecomposition(fx.lam, shapes[h], orientations[h]) for h in range(H)]

    d = _floor(e) if c is None else np.array(constrain_eigenvalues(list(e), n, c))
    return _assemble(d, orientations, "V", "V")


# ---------------------------------------------------------------------------


def log_gaussian_densities(X: np.ndarray, means: np.ndarray, sigmas: Sequence[EigenDecomposition]) -> np.ndarray:
    """Gaussian log-densities of every row of ``X`` under every component, shape (n, E)."""
    X = np.asarray(X, dtype=float)
    means = np.asarray(means, dtype=float)
    if X.ndim != 2 or means.ndim != 2 or X.shape[1] != means.shape[1]:
        raise ShapeError(f"data shape {X.shape} does not match means {means.shape}")
    p = X.shape[1]
    D = np.stack([s.orientation for s in sigmas])
    d = np.stack([s.eigenvalues for s in sigmas])
    proj = np.matmul(X[None, :, :] - means[:, None, :], D)
    maha = np.sum(proj**2 / d[:, None, :], axis=-1)
    logdet = np.sum(np.log(d), axis=-1)
    return (-0.5 * (p * _LOG_2PI + logdet[:, None] + maha)).T
