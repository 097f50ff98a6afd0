"""Pure-numpy IRLS fitting and grouping-scan kernels.

This is the reference formulation of the compiled kernel in
``_ckernel.pyx`` and is used whenever the extension is unavailable.

Status codes returned by both kernels:

* 0 -- converged (relative deviance change below ``tol`` and a linear
  predictor that has stopped moving)
* 1 -- rank deficient design (a column lies in the span of earlier columns)
* 2 -- separation (|linear predictor| beyond ``eta_max`` while the deviance
  is still decreasing)
* 3 -- iteration cap reached or non-finite deviance
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

GAUSSIAN, BINOMIAL, POISSON = 0, 1, 2
_ETA_STABLE = 1e-4
OK, RANK_DEFICIENT, SEPARATION, NO_CONVERGENCE = 0, 1, 2, 3

_TINY_VAR = 1e-300


def _softplus(x):
    return np.logaddexp(0.0, x)


def _xlogx(x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def loglik(family: int, y, eta, dev: float) -> float:
    n = y.shape[0]
    if family == GAUSSIAN:
        s2 = max(dev / n, _TINY_VAR)
        return -0.5 * n * (np.log(2.0 * np.pi * s2) + 1.0)
    if family == BINOMIAL:
        return float(-np.sum(y * _softplus(-eta) + (1.0 - y) * _softplus(eta)))
    return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))


def deviance(family: int, y, eta, mu) -> float:
    if family == GAUSSIAN:
        r = y - mu
        return float(r @ r)
    if family == BINOMIAL:
        return 2.0 * float(np.sum(_xlogx(y) + _xlogx(1.0 - y)
                                  + y * _softplus(-eta) + (1.0 - y) * _softplus(eta)))
    return 2.0 * float(np.sum(_xlogx(y) - y * eta - y + mu))


def _wls(A, b, rank_tol):
    n, p = A.shape
    if n < p:
        return None
    colnorm = np.sqrt(np.einsum("ij,ij->j", A, A))
    q, r = np.linalg.qr(A)
    diag = np.abs(np.diag(r))
    if np.any(colnorm == 0.0) or np.any(diag <= rank_tol * colnorm):
        return None
    return solve_triangular(r, q.T @ b)


def irls_fit(X, y, family: int, tol: float = 1e-8, maxit: int = 100,
             eta_max: float = 30.0, rank_tol: float = 1e-10):
    """Fit one GLM.  Returns ``(coef, deviance, loglik, iterations, status)``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if y.shape[0] != n:
        raise ValueError("response length does not match design rows")
    if n == 0 or p == 0:
        raise ValueError("empty design")
    coef = np.zeros(p)
    if family == GAUSSIAN:
        beta = _wls(X, y, rank_tol)
        if beta is None:
            return coef, np.nan, np.nan, 1, RANK_DEFICIENT
        eta = X @ beta
        dev = deviance(family, y, eta, eta)
        return beta, dev, loglik(family, y, eta, dev), 1, OK

    if family == BINOMIAL:
        mu = (y + 0.5) / 2.0
        eta = np.log(mu / (1.0 - mu))
    else:
        mu = y + 0.1
        eta = np.log(mu)
    dev_old = deviance(family, y, eta, mu)
    dev = ll = np.nan
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for it in range(1, maxit + 1):
            var = mu * (1.0 - mu) if family == BINOMIAL else mu.copy()
            var = np.maximum(var, _TINY_VAR)
            sw = np.sqrt(var)
            z = eta + (y - mu) / var
            beta = _wls(X * sw[:, None], z * sw, rank_tol)
            if beta is None:
                return coef, dev, ll, it, RANK_DEFICIENT
            coef = beta
            eta_old, eta = eta, X @ beta
            shift = np.max(np.abs(eta - eta_old))
            mu = 1.0 / (1.0 + np.exp(-eta)) if family == BINOMIAL else np.exp(eta)
            dev = deviance(family, y, eta, mu)
            ll = loglik(family, y, eta, dev)
            if not np.isfinite(dev):
                return coef, dev, ll, it, NO_CONVERGENCE
            if np.max(np.abs(eta)) > eta_max and dev < dev_old:
                return coef, dev, ll, it, SEPARATION
            # a still-moving linear predictor means a diverging fit, not convergence
            if (abs(dev - dev_old) / (abs(dev) + 0.1) < tol
                    and shift <= _ETA_STABLE * (1.0 + np.max(np.abs(eta)))):
                return coef, dev, ll, it, OK
            dev_old = dev
    return coef, dev, ll, maxit, NO_CONVERGENCE


def scan_labels(carried, base, y, labels, family: int, tol: float = 1e-8,
                maxit: int = 100, eta_max: float = 30.0, rank_tol: float = 1e-10):
    """Fit the grouping model for every row of ``labels``.

    ``labels[g, a]`` is the MAG number (1-based) of allele ``a`` in grouping
    ``g``, or 0 when the allele is unused.  Returns ``(loglik, status)``.
    """
    carried = np.asarray(carried, dtype=bool)
    base = np.asarray(base, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int8)
    y = np.asarray(y, dtype=np.float64)
    n, q = base.shape
    h = carried.shape[1]
    if labels.ndim != 2 or labels.shape[1] != h:
        raise ValueError("label width does not match panel size")
    if carried.shape[0] != n or y.shape[0] != n:
        raise ValueError("row counts disagree")
    G = labels.shape[0]
    out_ll = np.full(G, np.nan)
    out_st = np.zeros(G, dtype=np.int8)
    X = np.empty((n, q + h))
    X[:, :q] = base
    for g in range(G):
        row = labels[g]
        j = int(row.max()) if h else 0
        for m in range(1, j + 1):
            X[:, q + m - 1] = carried[:, row == m].any(axis=1)
        _, _, ll, _, st = irls_fit(X[:, :q + j], y, family, tol, maxit, eta_max, rank_tol)
        out_st[g] = st
        if st == OK:
            out_ll[g] = ll
    return out_ll, out_st
