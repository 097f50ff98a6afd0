"""Generalized linear models fitted by IRLS, likelihood-ratio tests and
baseline-category logits.

Log-likelihoods are exact (normalizing constants included), so values are
comparable across models and families.  The Gaussian dispersion is the
maximum-likelihood estimate ``deviance / n`` and counts as a parameter.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import gammaincc

from magscan import kernels
from magscan.errors import (EmptyCategory, NegativeStatistic, NoConvergence, NotNested,
                            RankDeficient, Separation)

IRLS_TOL = 1e-8
IRLS_MAXIT = 100
ETA_MAX = 30.0
RANK_TOL = 1e-10


class Family(enum.Enum):
    """Exponential-dispersion family with its canonical link."""

    GAUSSIAN = "gaussian"
    BINOMIAL = "binomial"
    POISSON = "poisson"

    @property
    def code(self) -> int:
        return {"gaussian": kernels._pykernel.GAUSSIAN,
                "binomial": kernels._pykernel.BINOMIAL,
                "poisson": kernels._pykernel.POISSON}[self.value]

    @property
    def link(self) -> str:
        return {"gaussian": "identity", "binomial": "logit", "poisson": "log"}[self.value]

    @property
    def label(self) -> str:
        return f"{self.value}-{self.link}"

    @property
    def estimates_dispersion(self) -> bool:
        return self is Family.GAUSSIAN

    def linkinv(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self is Family.GAUSSIAN:
            return eta
        if self is Family.BINOMIAL:
            return 1.0 / (1.0 + np.exp(-eta))
        return np.exp(eta)

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self is Family.GAUSSIAN:
            return np.ones_like(mu)
        if self is Family.BINOMIAL:
            return mu * (1.0 - mu)
        return mu

    @classmethod
    def parse(cls, text: "str | Family") -> "Family":
        if isinstance(text, Family):
            return text
        key = str(text).strip().lower().split("-")[0]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown family {text!r}; expected gaussian, binomial "
                             "or poisson") from None


def column_rank(X: np.ndarray, tol: float = RANK_TOL) -> int:
    """Numerical rank from a column-pivoted QR, relative tolerance ``tol``."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return 0
    r = scipy.linalg.qr(X, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(r))
    if d.size == 0 or d[0] == 0.0:
        return 0
    return int(np.sum(d > tol * d[0]))


@dataclass(frozen=True)
class DesignMatrix:
    """``n x p`` model matrix; the first ``n_base`` columns are intercept and
    covariates, the rest are 0/1 MAG indicators."""

    values: np.ndarray
    labels: tuple[str, ...]
    n_base: int = 1
    rank: int = field(init=False)

    def __post_init__(self):
        X = np.array(self.values, dtype=float)
        if X.ndim != 2:
            raise ValueError("design must be two-dimensional")
        X.setflags(write=False)
        object.__setattr__(self, "values", X)
        labels = tuple(self.labels)
        if len(labels) != X.shape[1]:
            raise ValueError("one label per column required")
        object.__setattr__(self, "labels", labels)
        if not 0 <= self.n_base <= X.shape[1]:
            raise ValueError("n_base outside column range")
        ind = X[:, self.n_base:]
        if ind.size and not np.all((ind == 0.0) | (ind == 1.0)):
            raise ValueError("MAG indicator columns must be 0/1")
        object.__setattr__(self, "rank", column_rank(X))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def full_rank(self) -> bool:
        return self.rank == self.p

    def take_rows(self, rows) -> "DesignMatrix":
        return DesignMatrix(self.values[rows], self.labels, self.n_base)


@dataclass(frozen=True)
class FitResult:
    family: Family
    labels: tuple[str, ...]
    coefficients: np.ndarray
    log_likelihood: float
    k: int
    deviance: float
    iterations: int
    converged: bool
    n: int

    @property
    def n_params(self) -> int:
        return self.k

    @property
    def aic(self) -> float:
        return -2.0 * (self.log_likelihood - self.k)

    def coef(self, label: str) -> float:
        return float(self.coefficients[self.labels.index(label)])


@dataclass(frozen=True)
class MultiFit:
    """Baseline-category logits as one logistic fit per non-reference level."""

    reference: str
    sub_fits: dict
    log_likelihood: float
    k: int

    @property
    def n_params(self) -> int:
        return self.k

    @property
    def aic(self) -> float:
        return -2.0 * (self.log_likelihood - self.k)


@dataclass(frozen=True)
class LrtOutcome:
    statistic: float
    df: int
    p_value: float


def _check_response(y: np.ndarray, family: Family) -> None:
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite values")
    if family is Family.BINOMIAL and np.any((y < 0) | (y > 1)):
        raise ValueError("binomial responses must lie in [0, 1]")
    if family is Family.POISSON and np.any(y < 0):
        raise ValueError("poisson responses must be non-negative")


def fit_glm(design: DesignMatrix, response, family: Family | str = Family.GAUSSIAN,
            tol: float = IRLS_TOL, maxit: int = IRLS_MAXIT) -> FitResult:
    """Maximum-likelihood GLM fit by iteratively reweighted least squares.

    Stops when the relative deviance change ``|D - D_old| / (|D| + 0.1)``
    falls below ``tol``.  Raises :class:`RankDeficient`, :class:`Separation`
    or :class:`NoConvergence`.
    """
    family = Family.parse(family)
    y = np.asarray(response, dtype=float)
    if y.shape != (design.n,):
        raise ValueError(f"response must have length {design.n}")
    _check_response(y, family)
    if not design.full_rank:
        raise RankDeficient(f"design rank {design.rank} < {design.p} columns")
    coef, dev, ll, it, status = kernels.irls_fit(design.values, y, family.code, tol, maxit,
                                                 ETA_MAX, RANK_TOL)
    if status == kernels.RANK_DEFICIENT:
        raise RankDeficient("design is numerically rank deficient under the IRLS weights")
    if status == kernels.SEPARATION:
        raise Separation(f"linear predictor exceeded {ETA_MAX:g} with deviance still "
                         "decreasing; data are separable", float(ll))
    if status == kernels.NO_CONVERGENCE:
        raise NoConvergence(f"IRLS did not converge in {it} iterations")
    k = design.p + (1 if family.estimates_dispersion else 0)
    return FitResult(family, design.labels, np.asarray(coef, dtype=float), float(ll), k,
                     float(dev), int(it), True, design.n)


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail chi-square probability (regularized upper incomplete gamma)."""
    if df < 1:
        raise ValueError("df must be at least 1")
    if x <= 0:
        return 1.0
    if np.isinf(x):
        return 0.0
    return float(gammaincc(df / 2.0, x / 2.0))


def lrt(full, reduced, tol: float = 1e-6) -> LrtOutcome:
    """Likelihood-ratio test of ``reduced`` inside ``full``.

    Accepts :class:`FitResult` or :class:`MultiFit`.  Small negative
    statistics (within ``tol``) are clipped to zero.
    """
    df = int(full.k - reduced.k)
    if df <= 0:
        raise NotNested(f"full model has {full.k} parameters, reduced has {reduced.k}")
    stat = 2.0 * (full.log_likelihood - reduced.log_likelihood)
    if stat < -tol:
        raise NegativeStatistic(f"likelihood-ratio statistic {stat:.3g} < 0; "
                                "check convergence of the fits")
    stat = max(stat, 0.0)
    return LrtOutcome(stat, df, chi_square_sf(stat, df))


def fit_baseline_logits(design: DesignMatrix, response: Sequence, reference,
                        levels: Sequence | None = None, tol: float = IRLS_TOL,
                        maxit: int = IRLS_MAXIT) -> MultiFit:
    """Baseline-category logits via one logistic regression per level.

    Sub-fit ``c`` uses the rows whose category is ``reference`` or ``c``,
    coded 1 for ``c``.  The total log-likelihood and parameter count are sums
    over the sub-fits.
    """
    resp = np.asarray([str(v) for v in response], dtype=object)
    if resp.shape[0] != design.n:
        raise ValueError(f"response must have length {design.n}")
    reference = str(reference)
    if levels is None:
        levels = sorted(set(resp.tolist()))
    levels = [str(v) for v in levels]
    if reference not in levels:
        raise EmptyCategory(f"reference level {reference!r} not among levels")
    unknown = set(resp.tolist()) - set(levels)
    if unknown:
        raise ValueError(f"undeclared levels {sorted(unknown)}")
    for lv in levels:
        if not np.any(resp == lv):
            raise EmptyCategory(f"level {lv!r} has no observations")
    subs = {}
    for lv in levels:
        if lv == reference:
            continue
        rows = np.flatnonzero((resp == reference) | (resp == lv))
        y = (resp[rows] == lv).astype(float)
        subs[lv] = fit_glm(design.take_rows(rows), y, Family.BINOMIAL, tol, maxit)
    ll = float(sum(f.log_likelihood for f in subs.values()))
    k = int(sum(f.k for f in subs.values()))
    return MultiFit(reference, subs, ll, k)
