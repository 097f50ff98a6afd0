# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled IRLS fitting and grouping-scan kernels.

Mirrors :mod:`magscan._pykernel` step for step; see that module for the
reference formulation.  Designs are handled column-major.
"""
import numpy as np

from libc.math cimport sqrt, log, log1p, exp, fabs, lgamma, M_PI, isfinite
from libc.stdlib cimport malloc, free

cdef enum:
    FAM_GAUSSIAN = 0
    FAM_BINOMIAL = 1
    FAM_POISSON = 2

cdef enum:
    ST_OK = 0
    ST_RANK = 1
    ST_SEPARATION = 2
    ST_NOCONV = 3

cdef double TINY_VAR = 1e-300
cdef double ETA_STABLE = 1e-4


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _xlogx(double x) noexcept nogil:
    if x <= 0:
        return 0.0
    return x * log(x)


cdef double _loglik(int fam, const double* y, const double* eta, Py_ssize_t n,
                    double dev) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0, s2
    if fam == FAM_GAUSSIAN:
        s2 = dev / n
        if s2 < TINY_VAR:
            s2 = TINY_VAR
        return -0.5 * n * (log(2.0 * M_PI * s2) + 1.0)
    if fam == FAM_BINOMIAL:
        for i in range(n):
            s -= y[i] * _softplus(-eta[i]) + (1.0 - y[i]) * _softplus(eta[i])
        return s
    for i in range(n):
        s += y[i] * eta[i] - exp(eta[i]) - lgamma(y[i] + 1.0)
    return s


cdef double _deviance(int fam, const double* y, const double* eta,
                      const double* mu, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0, r
    if fam == FAM_GAUSSIAN:
        for i in range(n):
            r = y[i] - mu[i]
            s += r * r
        return s
    if fam == FAM_BINOMIAL:
        for i in range(n):
            s += (_xlogx(y[i]) + _xlogx(1.0 - y[i])
                  + y[i] * _softplus(-eta[i]) + (1.0 - y[i]) * _softplus(eta[i]))
        return 2.0 * s
    for i in range(n):
        s += _xlogx(y[i]) - y[i] * eta[i] - y[i] + mu[i]
    return 2.0 * s


cdef int _wls(double* A, double* b, Py_ssize_t n, Py_ssize_t p, double rank_tol,
              double* beta, double* colnorm, double* diag) noexcept nogil:
    """Householder least squares; A (col-major n*p) and b are overwritten."""
    cdef Py_ssize_t i, j, k
    cdef double s, nrm, alpha, v0, vnorm2, d, f
    cdef double* col
    cdef double* cj
    for k in range(p):
        col = A + k * n
        s = 0.0
        for i in range(n):
            s += col[i] * col[i]
        colnorm[k] = sqrt(s)
    for k in range(p):
        col = A + k * n
        s = 0.0
        for i in range(k, n):
            s += col[i] * col[i]
        nrm = sqrt(s)
        if colnorm[k] == 0.0 or nrm <= rank_tol * colnorm[k]:
            return ST_RANK
        alpha = -nrm if col[k] > 0 else nrm
        v0 = col[k] - alpha
        vnorm2 = s - col[k] * col[k] + v0 * v0
        col[k] = v0
        for j in range(k + 1, p):
            cj = A + j * n
            d = 0.0
            for i in range(k, n):
                d += col[i] * cj[i]
            f = 2.0 * d / vnorm2
            for i in range(k, n):
                cj[i] -= f * col[i]
        d = 0.0
        for i in range(k, n):
            d += col[i] * b[i]
        f = 2.0 * d / vnorm2
        for i in range(k, n):
            b[i] -= f * col[i]
        diag[k] = alpha
    for k in range(p - 1, -1, -1):
        s = b[k]
        for j in range(k + 1, p):
            s -= A[j * n + k] * beta[j]
        beta[k] = s / diag[k]
    return ST_OK


cdef void _linpred(const double* X, const double* beta, Py_ssize_t n, Py_ssize_t p,
                   double* eta) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double bk
    for i in range(n):
        eta[i] = 0.0
    for k in range(p):
        bk = beta[k]
        for i in range(n):
            eta[i] += X[k * n + i] * bk


cdef int _irls(const double* X, const double* y, Py_ssize_t n, Py_ssize_t p, int fam,
               double tol, int maxit, double eta_max, double rank_tol,
               double* beta, double* eta, double* mu, double* A, double* b,
               double* colnorm, double* diag,
               double* dev_out, double* ll_out, int* it_out) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef int it, st
    cdef double dev, dev_old, var, sw, emax, shift
    if fam == FAM_GAUSSIAN:
        for k in range(n * p):
            A[k] = X[k]
        for i in range(n):
            b[i] = y[i]
        st = _wls(A, b, n, p, rank_tol, beta, colnorm, diag)
        it_out[0] = 1
        if st != ST_OK:
            return st
        _linpred(X, beta, n, p, eta)
        dev = _deviance(fam, y, eta, eta, n)
        dev_out[0] = dev
        ll_out[0] = _loglik(fam, y, eta, n, dev)
        return ST_OK

    for i in range(n):
        if fam == FAM_BINOMIAL:
            mu[i] = (y[i] + 0.5) / 2.0
            eta[i] = log(mu[i] / (1.0 - mu[i]))
        else:
            mu[i] = y[i] + 0.1
            eta[i] = log(mu[i])
    dev_old = _deviance(fam, y, eta, mu, n)
    for it in range(1, maxit + 1):
        for i in range(n):
            if fam == FAM_BINOMIAL:
                var = mu[i] * (1.0 - mu[i])
            else:
                var = mu[i]
            if var < TINY_VAR:
                var = TINY_VAR
            sw = sqrt(var)
            b[i] = sw * (eta[i] + (y[i] - mu[i]) / var)
            for k in range(p):
                A[k * n + i] = sw * X[k * n + i]
        st = _wls(A, b, n, p, rank_tol, beta, colnorm, diag)
        if st != ST_OK:
            it_out[0] = it
            return st
        _linpred(X, beta, n, p, b)
        emax = 0.0
        shift = 0.0
        for i in range(n):
            if fabs(b[i] - eta[i]) > shift:
                shift = fabs(b[i] - eta[i])
            eta[i] = b[i]
        for i in range(n):
            if fam == FAM_BINOMIAL:
                mu[i] = 1.0 / (1.0 + exp(-eta[i]))
            else:
                mu[i] = exp(eta[i])
            if fabs(eta[i]) > emax:
                emax = fabs(eta[i])
        dev = _deviance(fam, y, eta, mu, n)
        it_out[0] = it
        dev_out[0] = dev
        ll_out[0] = _loglik(fam, y, eta, n, dev)
        if not isfinite(dev):
            return ST_NOCONV
        if emax > eta_max and dev < dev_old:
            return ST_SEPARATION
        # a still-moving linear predictor means a diverging fit, not convergence
        if fabs(dev - dev_old) / (fabs(dev) + 0.1) < tol and shift <= ETA_STABLE * (1.0 + emax):
            return ST_OK
        dev_old = dev
    return ST_NOCONV


def irls_fit(X, y, int family, double tol=1e-8, int maxit=100,
             double eta_max=30.0, double rank_tol=1e-10):
    """Fit one GLM.  Returns ``(coef, deviance, loglik, iterations, status)``."""
    cdef const double[::1, :] Xf = np.asfortranarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = Xf.shape[0], p = Xf.shape[1]
    if yv.shape[0] != n:
        raise ValueError("response length does not match design rows")
    coef = np.zeros(p)
    cdef double[::1] beta = coef
    cdef double[::1] eta = np.empty(n), mu = np.empty(n), b = np.empty(n)
    cdef double[::1] A = np.empty(max(n * p, 1))
    cdef double[::1] colnorm = np.empty(max(p, 1)), diag = np.empty(max(p, 1))
    cdef double dev = np.nan, ll = np.nan
    cdef int it = 0, st
    if n == 0 or p == 0:
        raise ValueError("empty design")
    with nogil:
        st = _irls(&Xf[0, 0], &yv[0], n, p, family, tol, maxit, eta_max, rank_tol,
                   &beta[0], &eta[0], &mu[0], &A[0], &b[0], &colnorm[0], &diag[0],
                   &dev, &ll, &it)
    return coef, dev, ll, it, st


def scan_labels(carried, base, y, labels, int family, double tol=1e-8, int maxit=100,
                double eta_max=30.0, double rank_tol=1e-10):
    """Fit the grouping model for every row of ``labels``.

    ``labels[g, a]`` is the MAG number (1-based) of allele ``a`` in grouping
    ``g``, or 0 when the allele is unused.  Returns ``(loglik, status)``.
    """
    cdef const unsigned char[:, ::1] ct = np.ascontiguousarray(
        np.asarray(carried, dtype=np.uint8).T)
    cdef const double[::1, :] bf = np.asfortranarray(base, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const signed char[:, ::1] lab = np.ascontiguousarray(labels, dtype=np.int8)
    cdef Py_ssize_t n = bf.shape[0], q = bf.shape[1], h = ct.shape[0]
    cdef Py_ssize_t G = lab.shape[0]
    if lab.shape[1] != h:
        raise ValueError("label width does not match panel size")
    if ct.shape[1] != n or yv.shape[0] != n:
        raise ValueError("row counts disagree")
    out_ll = np.full(G, np.nan)
    out_st = np.zeros(G, dtype=np.int8)
    cdef double[::1] oll = out_ll
    cdef signed char[::1] ost = out_st
    if G == 0:
        return out_ll, out_st
    cdef Py_ssize_t pmax = q + h
    cdef double[::1] X = np.zeros(n * pmax)
    cdef double[::1] A = np.empty(n * pmax)
    cdef double[::1] beta = np.empty(pmax), colnorm = np.empty(pmax), diag = np.empty(pmax)
    cdef double[::1] eta = np.empty(n), mu = np.empty(n), b = np.empty(n)
    cdef Py_ssize_t g, a, i, k, j, col
    cdef int it, st
    cdef signed char l
    cdef double dev, ll
    with nogil:
        for k in range(q):
            for i in range(n):
                X[k * n + i] = bf[i, k]
        for g in range(G):
            j = 0
            for a in range(h):
                if lab[g, a] > j:
                    j = lab[g, a]
            for k in range(q * n, (q + j) * n):
                X[k] = 0.0
            for a in range(h):
                l = lab[g, a]
                if l > 0:
                    col = (q + l - 1) * n
                    for i in range(n):
                        if ct[a, i]:
                            X[col + i] = 1.0
            dev = 0.0
            ll = 0.0
            st = _irls(&X[0], &yv[0], n, q + j, family, tol, maxit, eta_max, rank_tol,
                       &beta[0], &eta[0], &mu[0], &A[0], &b[0], &colnorm[0], &diag[0],
                       &dev, &ll, &it)
            ost[g] = st
            if st == ST_OK:
                oll[g] = ll
    return out_ll, out_st
