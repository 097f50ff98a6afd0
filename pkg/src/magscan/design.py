"""Analysis dataset and grouping design matrices (complete-dominance coding)."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from magscan.errors import DegenerateDesign, UnknownAllele
from magscan.glm import DesignMatrix, column_rank
from magscan.grouping import AllelePanel, Grouping

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Individual:
    id: str
    trait: float | str
    covariates: tuple[float, ...] = ()
    carried: frozenset[int] = frozenset()


@dataclass(frozen=True)
class Dataset:
    """Immutable table of individuals over one allele panel.

    Categorical traits carry their ``levels`` explicitly together with a
    ``reference`` level; continuous traits leave both empty.
    ``n_excluded`` records individuals dropped at load time (missing
    genotypes under the default policy).
    """

    panel: AllelePanel
    individuals: tuple[Individual, ...]
    trait_kind: str = CONTINUOUS
    levels: tuple[str, ...] = ()
    reference: str | None = None
    covariate_names: tuple[str, ...] = ()
    n_excluded: int = 0
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "individuals", tuple(self.individuals))
        if not self.individuals:
            raise ValueError("a dataset needs at least one individual")
        if self.trait_kind not in (CONTINUOUS, CATEGORICAL):
            raise ValueError(f"unknown trait kind {self.trait_kind!r}")
        kx = len(self.covariate_names)
        h = len(self.panel)
        for ind in self.individuals:
            if len(ind.covariates) != kx:
                raise ValueError(f"individual {ind.id}: expected {kx} covariates")
            if any(a < 0 or a >= h for a in ind.carried):
                raise UnknownAllele(f"individual {ind.id} carries an allele outside the panel")
        if self.trait_kind == CATEGORICAL:
            levels = tuple(str(v) for v in self.levels)
            if len(levels) < 2 or len(set(levels)) != len(levels):
                raise ValueError("categorical traits need at least two distinct levels")
            ref = levels[0] if self.reference is None else str(self.reference)
            if ref not in levels:
                raise ValueError(f"reference level {ref!r} is not among the levels")
            object.__setattr__(self, "levels", levels)
            object.__setattr__(self, "reference", ref)
            for ind in self.individuals:
                if str(ind.trait) not in levels:
                    raise ValueError(f"individual {ind.id}: undeclared level {ind.trait!r}")

    @classmethod
    def from_arrays(cls, panel: AllelePanel | Sequence[str], carried, trait,
                    covariates=None, ids=None, covariate_names=None,
                    trait_kind: str = CONTINUOUS, levels=(), reference=None) -> "Dataset":
        """Build a dataset from an ``(n, h)`` 0/1 carrier matrix and a trait vector."""
        if not isinstance(panel, AllelePanel):
            panel = AllelePanel(tuple(panel))
        carried = np.asarray(carried, dtype=bool)
        n = carried.shape[0]
        if carried.ndim != 2 or carried.shape[1] != len(panel):
            raise ValueError("carrier matrix must be (n, h)")
        cov = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if covariate_names is None:
            covariate_names = tuple(f"x{i + 1}" for i in range(cov.shape[1]))
        ids = [str(i + 1) for i in range(n)] if ids is None else [str(i) for i in ids]
        trait = list(trait)
        if len(trait) != n or len(ids) != n or cov.shape[0] != n:
            raise ValueError("row counts disagree")
        inds = tuple(
            Individual(
                ids[i],
                str(trait[i]) if trait_kind == CATEGORICAL else float(trait[i]),
                tuple(float(v) for v in cov[i]),
                frozenset(np.flatnonzero(carried[i]).tolist()),
            )
            for i in range(n)
        )
        ds = cls(panel, inds, trait_kind, tuple(levels), reference, tuple(covariate_names))
        object.__setattr__(ds, "_carried_cache", carried.astype(np.uint8))
        return ds

    @property
    def n(self) -> int:
        return len(self.individuals)

    @property
    def h(self) -> int:
        return len(self.panel)

    @property
    def k_x(self) -> int:
        return len(self.covariate_names)

    @property
    def carried_matrix(self) -> np.ndarray:
        """``(n, h)`` uint8 carrier indicators."""
        m = self.__dict__.get("_carried_cache")
        if m is None:
            m = np.zeros((self.n, self.h), dtype=np.uint8)
            for i, ind in enumerate(self.individuals):
                m[i, list(ind.carried)] = 1
            object.__setattr__(self, "_carried_cache", m)
        return m

    @cached_property
    def covariate_matrix(self) -> np.ndarray:
        return np.array([ind.covariates for ind in self.individuals],
                        dtype=float).reshape(self.n, self.k_x)

    @cached_property
    def base_matrix(self) -> np.ndarray:
        """Intercept followed by the covariates: the null design."""
        return np.hstack([np.ones((self.n, 1)), self.covariate_matrix])

    @property
    def base_labels(self) -> tuple[str, ...]:
        return ("(intercept)",) + self.covariate_names

    @cached_property
    def response(self) -> np.ndarray:
        """Numeric trait for continuous data; level codes for categorical data."""
        if self.trait_kind == CONTINUOUS:
            return np.array([float(ind.trait) for ind in self.individuals])
        code = {lv: i for i, lv in enumerate(self.levels)}
        return np.array([code[str(ind.trait)] for ind in self.individuals], dtype=int)

    @property
    def trait_values(self) -> list:
        return [ind.trait for ind in self.individuals]

    def carrier_frequencies(self) -> dict[str, float]:
        freq = self.carried_matrix.mean(axis=0)
        return {a: float(f) for a, f in zip(self.panel, freq)}


def mag_indicator(ds: Dataset, mag: Iterable[int | str]) -> np.ndarray:
    """0/1 vector: individual carries at least one allele of ``mag``.

    Homozygous and heterozygous carriers are coded alike (complete dominance).
    """
    idx = ds.panel.resolve(mag)
    if not idx:
        return np.zeros(ds.n, dtype=np.uint8)
    return ds.carried_matrix[:, list(idx)].any(axis=1).astype(np.uint8)


def null_design(ds: Dataset) -> DesignMatrix:
    """Intercept and covariates only (no marker terms)."""
    return DesignMatrix(ds.base_matrix, ds.base_labels, n_base=1 + ds.k_x)


def _raw_design(ds: Dataset, g: Grouping) -> tuple[np.ndarray, tuple[str, ...]]:
    h = ds.h
    for a in g.alleles:
        if a >= h:
            raise UnknownAllele(f"allele index {a} outside panel of size {h}")
    cols = [mag_indicator(ds, mag).astype(float) for mag in g.mags]
    labels = tuple("{" + ",".join(ds.panel[a] for a in mag) + "}" for mag in g.mags)
    X = np.hstack([ds.base_matrix] + [c[:, None] for c in cols]) if cols else ds.base_matrix.copy()
    return X, ds.base_labels + labels


def diagnose_degeneracy(X: np.ndarray, labels: Sequence[str], n_base: int) -> DegenerateDesign | None:
    """Explain why ``X`` lacks full column rank, or return None if it does not."""
    p = X.shape[1]
    if column_rank(X) == p:
        return None
    if column_rank(X[:, :n_base]) < n_base:
        return DegenerateDesign("covariate-collinearity", tuple(labels[:n_base]))
    ind = X[:, n_base:]
    for k in range(ind.shape[1]):
        if np.all(ind[:, k] == ind[0, k]):
            return DegenerateDesign("constant-indicator", (labels[n_base + k],))
    for k in range(ind.shape[1]):
        for m in range(k + 1, ind.shape[1]):
            if np.array_equal(ind[:, k], ind[:, m]):
                return DegenerateDesign("duplicate-indicators",
                                        (labels[n_base + k], labels[n_base + m]))
    return DegenerateDesign("linear-dependence", tuple(labels[n_base:]))


def build_design(ds: Dataset, g: Grouping) -> DesignMatrix:
    """Design ``[intercept, covariates, one indicator per MAG]``.

    Raises :class:`DegenerateDesign` with a machine-readable ``cause`` when the
    columns are not linearly independent.  The empty grouping yields the
    null design.
    """
    X, labels = _raw_design(ds, g)
    n_base = 1 + ds.k_x
    problem = diagnose_degeneracy(X, labels, n_base)
    if problem is not None:
        raise problem
    return DesignMatrix(X, labels, n_base=n_base)


def singleton_grouping(ds: Dataset) -> Grouping:
    """All alleles as singleton MAGs: the single-allele model."""
    return Grouping(tuple((a,) for a in range(ds.h)))


def pruned_singleton_design(ds: Dataset) -> tuple[DesignMatrix, tuple[int, ...]]:
    """Single-allele design keeping only indicators that add rank.

    Indicators are taken in panel order and dropped when constant, duplicated
    or otherwise linearly dependent on the columns already kept.  Returns the
    design and the retained panel indices.
    """
    X = ds.base_matrix
    if column_rank(X) < X.shape[1]:
        raise DegenerateDesign("covariate-collinearity", ds.base_labels)
    cols, kept = [X], []
    rank = X.shape[1]
    for a in range(ds.h):
        col = mag_indicator(ds, (a,)).astype(float)[:, None]
        trial = np.hstack(cols + [col])
        r = column_rank(trial)
        if r > rank:
            cols.append(col)
            kept.append(a)
            rank = r
    labels = ds.base_labels + tuple("{" + ds.panel[a] + "}" for a in kept)
    return DesignMatrix(np.hstack(cols), labels, n_base=1 + ds.k_x), tuple(kept)
