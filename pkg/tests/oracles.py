"""Independent reference computations used by the tests.

Nothing here imports the package's numerical code: the M-step oracle
maximises the complete-data likelihood with a generic constrained optimiser
over an explicit parameterisation (log-volumes, log-shapes, matrix
exponentials of skew-symmetric matrices for the axes).
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize


def random_rotation(rng, p):
    Q, R = np.linalg.qr(rng.normal(size=(p, p)))
    return Q * np.sign(np.diag(R))


def random_scatters(rng, E, p, n_range=(4, 30)):
    W, n = [], []
    for _ in range(E):
        k = int(rng.integers(*n_range))
        Q = random_rotation(rng, p)
        scales = np.exp(rng.uniform(-1.5, 1.5, size=p))
        X = rng.normal(size=(k, p)) * scales @ Q.T
        X = X - X.mean(axis=0)
        W.append(X.T @ X)
        n.append(float(k))
    return np.array(W), np.array(n)


def _skew(v, p):
    S = np.zeros((p, p))
    iu = np.triu_indices(p, 1)
    S[iu] = v
    return S - S.T


def _sum_zero(p):
    # orthonormal basis of {x : sum(x) = 0}, built by Gram-Schmidt on e_i - e_p
    B = np.zeros((p, p - 1))
    for i in range(p - 1):
        v = np.zeros(p)
        v[i], v[-1] = 1.0, -1.0
        for j in range(i):
            v -= (v @ B[:, j]) * B[:, j]
        B[:, i] = v / np.linalg.norm(v)
    return B


def neg_loglik(Sigmas, W, n):
    total = 0.0
    for S, Wg, ng in zip(Sigmas, W, n):
        sign, logdet = np.linalg.slogdet(S)
        if sign <= 0:
            return np.inf
        total += ng * logdet + np.trace(np.linalg.solve(S, Wg))
    return 0.5 * total


class _Layout:
    """Free parameters of a model: which letters are free per group or shared."""

    def __init__(self, model, E, p, fixed=None):
        self.model, self.E, self.p = model, E, p
        vol, shp, ori = model
        fixed = fixed or {}
        self.fixed = fixed
        self.P = _sum_zero(p)
        self.n_vol = 0 if "lam" in fixed else (1 if vol == "E" else E)
        if shp == "I" or "shape" in fixed:
            self.n_shape = 0
        else:
            self.n_shape = (1 if shp == "E" else E) * (p - 1)
        q = p * (p - 1) // 2
        if ori == "I" or "orientation" in fixed:
            self.n_ori = 0
        else:
            self.n_ori = (1 if ori == "E" else E) * q
        self.q = q

    @property
    def size(self):
        return self.n_vol + self.n_shape + self.n_ori

    def split(self, theta):
        a = theta[: self.n_vol]
        b = theta[self.n_vol : self.n_vol + self.n_shape]
        r = theta[self.n_vol + self.n_shape :]
        return a, b, r

    def log_eigs(self, theta):
        vol, shp, ori = self.model
        a, b, _ = self.split(theta)
        E, p = self.E, self.p
        if "lam" in self.fixed:
            loglam = np.full(E, np.log(self.fixed["lam"]))
        else:
            loglam = np.full(E, a[0]) if vol == "E" else a
        if shp == "I":
            logs = np.zeros((E, p))
        elif "shape" in self.fixed:
            logs = np.tile(np.log(self.fixed["shape"]), (E, 1))
        elif shp == "E":
            logs = np.tile(self.P @ b, (E, 1))
        else:
            logs = (self.P @ b.reshape(E, p - 1).T).T
        return loglam[:, None] + logs

    def axes(self, theta, bases):
        vol, shp, ori = self.model
        _, _, r = self.split(theta)
        E, p, q = self.E, self.p, self.q
        if ori == "I":
            return [np.eye(p)] * E
        if "orientation" in self.fixed:
            return [self.fixed["orientation"]] * E
        if ori == "E":
            D = bases[0] @ expm(_skew(r, p))
            return [D] * E
        return [bases[g] @ expm(_skew(r[g * q : (g + 1) * q], p)) for g in range(E)]

    def sigmas(self, theta, bases):
        ev = np.exp(self.log_eigs(theta))
        return [(D * e) @ D.T for D, e in zip(self.axes(theta, bases), ev)]


def _eig_desc(S):
    w, V = np.linalg.eigh(S)
    return w[::-1], V[:, ::-1]


# the optimiser probes non-finite points on its way; they simply score +inf
@np.errstate(all="ignore")
def oracle_mstep(model, W, n, c=None, fixed=None, n_starts=6, seed=0):
    """Best complete-data log-likelihood found by SLSQP from several starts.

    ``fixed`` may hold ``lam``, ``shape`` and ``orientation`` entries that are
    inherited instead of estimated.  ``c`` bounds the ratio of all eigenvalues
    produced by the free parameters (``None`` means unconstrained).
    """
    W, n = np.asarray(W, float), np.asarray(n, float)
    E, p = n.shape[0], W.shape[1]
    lay = _Layout(model, E, p, fixed)
    rng = np.random.default_rng(seed)
    base_sets = [[_eig_desc(W.sum(0))[1]] * E, [_eig_desc(Wg)[1] for Wg in W]]
    for _ in range(max(0, n_starts - 2)):
        base_sets.append([random_rotation(rng, p) for _ in range(E)])

    cons = []
    if c is not None and lay.size:
        logc = np.log(c)

        def spread(z):
            le = lay.log_eigs(z[:-1]).ravel()
            return np.concatenate([le - z[-1], z[-1] + logc - le])

        cons = [{"type": "ineq", "fun": spread}]

    best = np.inf
    for bases in base_sets:
        if lay.size == 0:
            best = min(best, neg_loglik(lay.sigmas(np.zeros(0), bases), W, n))
            continue
        theta0 = np.zeros(lay.size)
        if lay.n_vol:
            ref = np.log(np.trace(W.sum(0)) / (p * n.sum()))
            theta0[: lay.n_vol] = ref
        if c is None:
            f = lambda th: neg_loglik(lay.sigmas(th, bases), W, n)
            res = minimize(f, theta0, method="BFGS", options={"gtol": 1e-10, "maxiter": 5000})
            res = minimize(f, res.x, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
            val = res.fun
        else:
            z0 = np.concatenate([theta0, [lay.log_eigs(theta0).min() - 1e-3]])
            f = lambda z: neg_loglik(lay.sigmas(z[:-1], bases), W, n)
            res = minimize(f, z0, method="SLSQP", constraints=cons, options={"ftol": 1e-14, "maxiter": 2000})
            val = res.fun if np.all(cons[0]["fun"](res.x) >= -1e-9) else np.inf
        best = min(best, val)
    return -best


def chi2_ppf_oracle(q, k, tol=1e-12):
    """Chi-square quantile by bisection on the regularised lower incomplete gamma."""
    import mpmath

    lo, hi = 0.0, 10.0 * k + 100.0
    target = mpmath.mpf(q)
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if mpmath.gammainc(k / 2.0, 0, mid / 2.0, regularized=True) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ari_bruteforce(a, b):
    """Adjusted Rand index from explicit enumeration of all pairs."""
    n = len(a)
    pairs = list(itertools.combinations(range(n), 2))
    both = sum(1 for i, j in pairs if a[i] == a[j] and b[i] == b[j])
    in_a = sum(1 for i, j in pairs if a[i] == a[j])
    in_b = sum(1 for i, j in pairs if b[i] == b[j])
    total = len(pairs)
    expected = in_a * in_b / total
    best = 0.5 * (in_a + in_b)
    if best == expected:
        return 1.0
    return (both - expected) / (best - expected)


def truncation_oracle(eigs, weights, c):
    """Best common threshold ``m`` for ``clamp(e, m, c m)`` by bounded 1-D search.

    The objective ``sum_g w_g sum_l (log d + e / d)`` is smooth between the
    breakpoints ``{e, e / c}``; each piece is minimised numerically and the
    best piece wins.  Returns the truncated arrays.
    """
    from scipy.optimize import minimize_scalar

    eigs = [np.asarray(e, float) for e in eigs]
    w = np.asarray(weights, float)

    def obj(m):
        total = 0.0
        for wg, e in zip(w, eigs):
            d = np.clip(e, m, c * m)
            total += wg * np.sum(np.log(d) + e / d)
        return total

    flat = np.concatenate(eigs)
    pts = np.unique(np.concatenate([flat, flat / c]))
    best_m, best_f = pts[0], obj(pts[0])
    for lo, hi in zip(pts[:-1], pts[1:]):
        res = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13 * hi})
        for m in (lo, hi, res.x):
            f = obj(m)
            if f < best_f:
                best_m, best_f = m, f
    return [np.clip(e, best_m, c * best_m) for e in eigs], best_f


def loglik_mp(X, Y, tau, mu, sigmas, labels, zeta, phi, dps=40):
    """Trimmed observed log-likelihood by direct summation in high precision."""
    import mpmath

    mpmath.mp.dps = dps

    def dens(x, g):
        S = mpmath.matrix(sigmas[g].tolist())
        d = mpmath.matrix([x[j] - mu[g][j] for j in range(len(x))])
        q = (d.T * mpmath.inverse(S) * d)[0]
        p = len(x)
        return mpmath.exp(-q / 2) / mpmath.sqrt((2 * mpmath.pi) ** p * mpmath.det(S))

    total = mpmath.mpf(0)
    for x, g, keep in zip(X, labels, zeta):
        if keep:
            total += mpmath.log(tau[g] * dens(x, g))
    for y, keep in zip(Y, phi):
        if keep:
            total += mpmath.log(sum(tau[g] * dens(y, g) for g in range(len(tau))))
    return total


def posteriors_mp(Y, tau, mu, sigmas, dps=40):
    import mpmath

    mpmath.mp.dps = dps
    out = []
    for y in Y:
        terms = []
        for g in range(len(tau)):
            S = mpmath.matrix(sigmas[g].tolist())
            d = mpmath.matrix([y[j] - mu[g][j] for j in range(len(y))])
            q = (d.T * mpmath.inverse(S) * d)[0]
            terms.append(tau[g] * mpmath.exp(-q / 2) / mpmath.sqrt(mpmath.det(S)))
        s = sum(terms)
        out.append([float(t / s) for t in terms])
    return np.array(out)


def edda_fit(X, labels, G, model):
    """Closed-form supervised fit for the models that have one.

    Covers EII, VII, EEI, EEE, VVI, EEV, VVV; others raise ``KeyError``.
    Returns ``(tau, mu, covariances)``.
    """
    N, p = X.shape
    n = np.array([np.sum(labels == g) for g in range(G)], float)
    mu = np.array([X[labels == g].mean(axis=0) for g in range(G)])
    W = np.array([(X[labels == g] - mu[g]).T @ (X[labels == g] - mu[g]) for g in range(G)])
    if model == "EII":
        S = [np.trace(W.sum(0)) / (p * N) * np.eye(p)] * G
    elif model == "VII":
        S = [np.trace(W[g]) / (p * n[g]) * np.eye(p) for g in range(G)]
    elif model == "EEI":
        S = [np.diag(np.diag(W.sum(0))) / N] * G
    elif model == "VVI":
        S = [np.diag(np.diag(W[g])) / n[g] for g in range(G)]
    elif model == "EEE":
        S = [W.sum(0) / N] * G
    elif model == "VVV":
        S = [W[g] / n[g] for g in range(G)]
    elif model == "EEV":
        # common eigenvalues, group-specific axes
        ev = [np.linalg.eigh(W[g]) for g in range(G)]
        d = sum(w[::-1] for w, _ in ev) / N
        S = [(V[:, ::-1] * d) @ V[:, ::-1].T for _, V in ev]
    else:
        raise KeyError(model)
    return n / N, mu, np.array(S)
