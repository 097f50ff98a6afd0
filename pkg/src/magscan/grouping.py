"""The grouping search space.

A *grouping* is a collection of pairwise-disjoint, non-empty marker-allele
groups (MAGs).  The alleles it leaves out are simply unused, so an
order-``j`` grouping of an ``h``-allele panel is a set partition of the
``h + 1`` element set formed by the alleles plus one auxiliary element whose
block collects the unused alleles.  Groupings are enumerated as restricted
growth strings (RGS) over that lifted set: the auxiliary element always has
label 0, allele ``a`` gets the label of its MAG (1-based) or 0 when unused.
Labels are assigned in order of first appearance, so an RGS is exactly the
canonical form and lexicographic RGS order is the canonical grouping order.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

from magscan.errors import EmptyMAG, OrderOutOfRange, OverlappingMAGs, UnknownAllele


@dataclass(frozen=True)
class AllelePanel:
    """Ordered marker-allele identifiers; the order fixes allele indices."""

    alleles: tuple[str, ...]

    def __post_init__(self):
        alleles = tuple(str(a) for a in self.alleles)
        if not alleles:
            raise ValueError("an allele panel needs at least one allele")
        if len(set(alleles)) != len(alleles):
            raise ValueError("allele identifiers must be unique")
        for a in alleles:
            if not a or any(c in a for c in "{}|,;") or a != a.strip():
                raise ValueError(f"invalid allele identifier {a!r}")
        object.__setattr__(self, "alleles", alleles)

    def __len__(self) -> int:
        return len(self.alleles)

    def __iter__(self):
        return iter(self.alleles)

    def __getitem__(self, i: int) -> str:
        return self.alleles[i]

    @property
    def h(self) -> int:
        return len(self.alleles)

    def index(self, allele: str | int) -> int:
        """Panel index of an allele given by name or index."""
        if isinstance(allele, (int, np.integer)) and not isinstance(allele, bool):
            if 0 <= allele < len(self.alleles):
                return int(allele)
            raise UnknownAllele(f"allele index {allele} outside panel of size {self.h}")
        try:
            return self._lookup[allele]
        except KeyError:
            raise UnknownAllele(f"allele {allele!r} not in panel") from None

    @property
    def _lookup(self) -> dict:
        lookup = self.__dict__.get("_lookup_cache")
        if lookup is None:
            lookup = {a: i for i, a in enumerate(self.alleles)}
            object.__setattr__(self, "_lookup_cache", lookup)
        return lookup

    def resolve(self, mag: Iterable[str | int]) -> tuple[int, ...]:
        """Sorted panel indices for a MAG given by names and/or indices."""
        return tuple(sorted({self.index(a) for a in mag}))


@dataclass(frozen=True)
class Grouping:
    """Pairwise-disjoint non-empty MAGs, held in canonical form.

    Construction canonicalizes: indices ascend within each MAG and MAGs are
    sorted by their smallest index.  Equality and hashing therefore compare
    canonical forms.
    """

    mags: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "mags", _canonical_mags(self.mags))

    @classmethod
    def _trusted(cls, mags: tuple[tuple[int, ...], ...]) -> "Grouping":
        obj = object.__new__(cls)
        object.__setattr__(obj, "mags", mags)
        return obj

    @property
    def order(self) -> int:
        return len(self.mags)

    @property
    def alleles(self) -> frozenset[int]:
        return frozenset(a for mag in self.mags for a in mag)

    def labels(self, h: int) -> tuple[int, ...]:
        """Restricted growth string of length ``h`` (0 = unused allele)."""
        out = [0] * h
        for m, mag in enumerate(self.mags, start=1):
            for a in mag:
                if a >= h:
                    raise UnknownAllele(f"allele index {a} outside panel of size {h}")
                out[a] = m
        return tuple(out)

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Grouping":
        labels = [int(v) for v in labels]
        j = max(labels, default=0)
        mags = [[] for _ in range(j)]
        for a, v in enumerate(labels):
            if v < 0:
                raise ValueError("labels must be non-negative")
            if v:
                mags[v - 1].append(a)
        return cls(tuple(tuple(m) for m in mags))

    def format(self, panel: AllelePanel) -> str:
        return format_grouping(self, panel)

    def __len__(self) -> int:
        return len(self.mags)


def _canonical_mags(mags) -> tuple[tuple[int, ...], ...]:
    seen: set[int] = set()
    out = []
    for mag in mags:
        members = [int(a) for a in mag]
        if not members:
            raise EmptyMAG("MAGs must be non-empty")
        if any(a < 0 for a in members):
            raise UnknownAllele("negative allele index")
        s = set(members)
        if len(s) != len(members) or s & seen:
            raise OverlappingMAGs(f"allele(s) {sorted(s & seen) or sorted(members)} repeated")
        seen |= s
        out.append(tuple(sorted(s)))
    out.sort(key=lambda m: m[0])
    return tuple(out)


def canonical_form(g: Grouping | Iterable[Iterable[int]]) -> Grouping:
    """Canonical form of a grouping given as a Grouping or nested iterables."""
    if isinstance(g, Grouping):
        return Grouping(g.mags)
    return Grouping(tuple(tuple(m) for m in g))


def format_grouping(g: Grouping, panel: AllelePanel) -> str:
    """Render ``{276bp}|{297bp,324bp}``; the empty grouping renders as ``{}``."""
    if not g.mags:
        return "{}"
    return "|".join("{" + ",".join(panel[a] for a in mag) + "}" for mag in g.mags)


_MAG_RE = re.compile(r"\{([^{}]*)\}")


def parse_grouping(text: str, panel: AllelePanel) -> Grouping:
    """Inverse of :func:`format_grouping`; allele names are resolved on ``panel``."""
    text = text.strip()
    if text in ("", "{}"):
        return Grouping(())
    parts = text.split("|")
    mags = []
    for part in parts:
        m = _MAG_RE.fullmatch(part.strip())
        if m is None:
            raise ValueError(f"cannot parse MAG {part!r}")
        names = [s.strip() for s in m.group(1).split(",") if s.strip()]
        if not names:
            raise EmptyMAG(f"empty MAG in {text!r}")
        if len(set(names)) != len(names):
            raise OverlappingMAGs(f"repeated allele in {part!r}")
        mags.append(tuple(panel.index(n) for n in names))
    return Grouping(tuple(mags))


# -- counting ----------------------------------------------------------------

@lru_cache(maxsize=None)
def stirling2(n: int, k: int) -> int:
    """Stirling number of the second kind by the exact integer recurrence."""
    if n < 0 or k < 0:
        raise ValueError("negative argument")
    row = [1] + [0] * k  # S(0, .)
    for m in range(1, n + 1):
        new = [0] * (k + 1)
        for i in range(1, min(m, k) + 1):
            new[i] = i * row[i] + row[i - 1]
        row = new
    return row[k]


def _check_order(h: int, j: int) -> None:
    if h < 1:
        raise OrderOutOfRange(f"panel size must be at least 1, got {h}")
    if not 1 <= j <= h:
        raise OrderOutOfRange(f"order {j} outside 1..{h}")


def count_groupings(h: int, j: int) -> int:
    """Number of order-``j`` groupings of an ``h``-allele panel, S(h+1, j+1)."""
    _check_order(h, j)
    return stirling2(h + 1, j + 1)


def total_groupings(h: int, max_order: int | None = None) -> int:
    """Groupings of orders 1..max_order; equals Bell(h+1) - 1 for the full range."""
    max_order = h if max_order is None else max_order
    return sum(count_groupings(h, j) for j in range(1, max_order + 1))


# -- enumeration -------------------------------------------------------------

def iter_labels(h: int, j: int) -> Iterator[tuple[int, ...]]:
    """Stream order-``j`` restricted growth strings in lexicographic order.

    Successor generation over a label array with a running prefix-maximum;
    nothing is materialized.
    """
    _check_order(h, j)
    # Smallest string: zeros, then 1..j on the last j positions.
    a = [0] * (h - j) + list(range(1, j + 1))
    # pm[i] = max label among positions < i (the auxiliary element gives 0)
    pm = [0] * (h + 1)
    for i in range(h):
        pm[i + 1] = pm[i] if pm[i] >= a[i] else a[i]
    last = h - 1
    while True:
        yield tuple(a)
        # Rightmost position that can grow while the suffix can still
        # complete to a maximum label of exactly j.
        i = last
        while i >= 0:
            v = a[i] + 1
            p = pm[i]
            if v <= p + 1 and v <= j and (p if p >= v else v) + last - i >= j:
                break
            i -= 1
        if i < 0:
            return
        v = a[i] = a[i] + 1
        m = pm[i] if pm[i] >= v else v
        pm[i + 1] = m
        # Smallest completion: zeros, then m+1..j at the end.
        rest = last - i
        zeros = rest - (j - m)
        for t in range(rest):
            k = i + 1 + t
            if t < zeros:
                a[k] = 0
                pm[k + 1] = m
            else:
                a[k] = m + 1 + t - zeros
                pm[k + 1] = a[k]


def label_matrix(h: int, j: int) -> np.ndarray:
    """All order-``j`` restricted growth strings as an ``(S(h+1,j+1), h)`` int8
    array, rows in lexicographic (canonical) order."""
    _check_order(h, j)
    if h > 127:
        raise OrderOutOfRange("panels larger than 127 alleles are not supported")
    rows = np.zeros((1, 0), dtype=np.int8)
    maxes = np.zeros(1, dtype=np.int16)
    for i in range(h):
        remaining = h - 1 - i
        blocks, block_max = [], []
        for v in range(j + 1):
            new_max = np.maximum(maxes, v)
            keep = (v <= maxes + 1) & (new_max + remaining >= j)
            if not keep.any():
                continue
            sel = rows[keep]
            blocks.append(np.hstack([sel, np.full((sel.shape[0], 1), v, dtype=np.int8)]))
            block_max.append(new_max[keep])
        rows = np.vstack(blocks)
        maxes = np.concatenate(block_max)
    order = np.lexsort(rows.T[::-1])
    return np.ascontiguousarray(rows[order])


def enumerate_groupings(panel: AllelePanel | int, order: int) -> Iterator[Grouping]:
    """Stream every order-``order`` grouping exactly once, canonical order."""
    h = panel if isinstance(panel, int) else len(panel)
    for labels in iter_labels(h, order):
        mags = [[] for _ in range(order)]
        for a, v in enumerate(labels):
            if v:
                mags[v - 1].append(a)
        yield Grouping._trusted(tuple(tuple(m) for m in mags))


def labels_to_grouping(labels: Sequence[int]) -> Grouping:
    """Fast conversion of a canonical label row (no validation)."""
    labels = [int(v) for v in labels]
    j = max(labels, default=0)
    mags = [[] for _ in range(j)]
    for a, v in enumerate(labels):
        if v:
            mags[v - 1].append(a)
    return Grouping._trusted(tuple(tuple(m) for m in mags))


def canonical_labels(labels: Sequence[int]) -> tuple[int, ...]:
    """Relabel an arbitrary MAG assignment (0 = unused) by first appearance."""
    remap: dict[int, int] = {}
    out = []
    for v in labels:
        v = int(v)
        if v == 0:
            out.append(0)
            continue
        if v not in remap:
            remap[v] = len(remap) + 1
        out.append(remap[v])
    return tuple(out)
