"""Dichotomous branching trees, their haplotypes, detection rules, and
diploid population sampling.

A tree is an ordered list of single events.  Each event splits one current
leaf, addressed by its branch path over ``{V, w}`` (``V`` = the variant side
of an earlier event, ``w`` = the wild-type side), into ``path + "V"`` and
``path + "w"``.  The empty path is the root.  Loci are named by upper-case
identifiers; the event variant is written in upper case and the wild type in
lower case.  One locus is the region locus (``R`` by default); the others
are marker loci whose variants form the observable allele panel.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from magscan.design import Dataset
from magscan.errors import InvalidBranchPath, TreeFormatError, UnknownAllele
from magscan.glm import Family
from magscan.grouping import AllelePanel

_LOCUS_RE = re.compile(r"[A-Z][A-Z0-9_]*")
_PATH_RE = re.compile(r"[Vw]*")


@dataclass(frozen=True)
class DichotomousTree:
    """Ordered branching events ``(locus, path)`` with a designated region locus."""

    events: tuple[tuple[str, str], ...]
    region: str = "R"

    def __post_init__(self):
        events = tuple((str(l), str(p)) for l, p in self.events)
        object.__setattr__(self, "events", events)
        if not _LOCUS_RE.fullmatch(self.region):
            raise TreeFormatError(f"invalid region locus {self.region!r}")
        seen = set()
        leaves = {""}
        for locus, path in events:
            if not _LOCUS_RE.fullmatch(locus):
                raise TreeFormatError(f"locus ids are upper-case identifiers, got {locus!r}")
            if locus in seen:
                raise TreeFormatError(f"locus {locus} has more than one event")
            seen.add(locus)
            if not _PATH_RE.fullmatch(path) or path not in leaves:
                raise InvalidBranchPath(f"event {locus}: path {path!r} is not a current leaf "
                                        f"(leaves: {sorted(leaves)})")
            leaves.remove(path)
            leaves |= {path + "V", path + "w"}
        if self.region not in seen:
            raise TreeFormatError(f"region locus {self.region} has no event")

    @property
    def loci(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.events)

    @property
    def markers(self) -> tuple[str, ...]:
        return tuple(l for l in self.loci if l != self.region)

    def leaves(self) -> tuple[str, ...]:
        """Leaf paths in lexicographic order (``V`` before ``w``)."""
        leaves = {""}
        for _, path in self.events:
            leaves.remove(path)
            leaves |= {path + "V", path + "w"}
        return tuple(sorted(leaves))

    def format(self) -> str:
        lines = [] if self.region == "R" else [f"region={self.region}"]
        lines += [f"locus={l} path={p}" for l, p in self.events]
        return "\n".join(lines) + "\n"


def parse_tree(text: str) -> DichotomousTree:
    """Parse the line format ``locus=A path=Vw`` (``#`` comments, optional
    ``region=X`` line; an empty path may be written ``path=`` or omitted)."""
    events, region = [], "R"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = {}
        for tok in line.split():
            key, sep, val = tok.partition("=")
            if not sep:
                raise TreeFormatError(f"line {lineno}: expected key=value, got {tok!r}")
            fields[key.strip().lower()] = val.strip()
        if set(fields) == {"region"}:
            region = fields["region"]
            continue
        if "locus" not in fields or not set(fields) <= {"locus", "path"}:
            raise TreeFormatError(f"line {lineno}: expected 'locus=X path=P'")
        events.append((fields["locus"], fields.get("path", "")))
    if not events:
        raise TreeFormatError("tree has no events")
    return DichotomousTree(tuple(events), region)


def read_tree(path) -> DichotomousTree:
    with open(path, encoding="utf-8") as fh:
        return parse_tree(fh.read())


BUILTIN_TREES = ("single_marker", "sibling_markers", "ancestral_marker", "six_haplotype")


def builtin_tree(name: str) -> DichotomousTree:
    if name not in BUILTIN_TREES:
        raise KeyError(f"unknown built-in tree {name!r}; choose from {', '.join(BUILTIN_TREES)}")
    text = resources.files("magscan").joinpath("trees", f"{name}.tree").read_text("utf-8")
    return parse_tree(text)


@dataclass(frozen=True)
class HaplotypeTable:
    """Haplotypes as variant flags over ``loci`` with sampling frequencies."""

    loci: tuple[str, ...]
    region: str
    haplotypes: tuple[tuple[bool, ...], ...]
    frequencies: tuple[float, ...]

    def __post_init__(self):
        haps = tuple(tuple(bool(v) for v in h) for h in self.haplotypes)
        object.__setattr__(self, "haplotypes", haps)
        freqs = tuple(float(f) for f in self.frequencies)
        object.__setattr__(self, "frequencies", freqs)
        if self.region not in self.loci:
            raise ValueError("region locus missing from loci")
        if len(set(haps)) != len(haps):
            raise ValueError("haplotypes must be distinct")
        if any(len(h) != len(self.loci) for h in haps):
            raise ValueError("each haplotype needs one allele per locus")
        if len(freqs) != len(haps):
            raise ValueError(f"expected {len(haps)} frequencies, got {len(freqs)}")
        if any(f < 0 or not np.isfinite(f) for f in freqs) or abs(sum(freqs) - 1.0) > 1e-12:
            raise ValueError("frequencies must be non-negative and sum to 1")

    @property
    def markers(self) -> tuple[str, ...]:
        return tuple(l for l in self.loci if l != self.region)

    @property
    def region_index(self) -> int:
        return self.loci.index(self.region)

    def name(self, i: int) -> str:
        """``AbR``-style spelling: markers in event order, then the region."""
        order = [self.loci.index(m) for m in self.markers] + [self.region_index]
        hap = self.haplotypes[i]
        return "".join(self.loci[k] if hap[k] else self.loci[k].lower() for k in order)

    def names(self) -> tuple[str, ...]:
        return tuple(self.name(i) for i in range(len(self.haplotypes)))

    def carries_region(self, i: int) -> bool:
        return self.haplotypes[i][self.region_index]

    def with_frequencies(self, frequencies: Sequence[float]) -> "HaplotypeTable":
        return HaplotypeTable(self.loci, self.region, self.haplotypes, tuple(frequencies))

    def __len__(self) -> int:
        return len(self.haplotypes)


def haplotypes_from_tree(tree: DichotomousTree,
                         frequencies: Sequence[float] | None = None) -> HaplotypeTable:
    """One haplotype per leaf; uniform frequencies unless given (leaf order)."""
    leaves = tree.leaves()
    haps = []
    for leaf in leaves:
        haps.append(tuple(leaf.startswith(path + "V") for _, path in tree.events))
    if frequencies is None:
        frequencies = [1.0 / len(leaves)] * len(leaves)
    return HaplotypeTable(tree.loci, tree.region, tuple(haps), tuple(frequencies))


@dataclass(frozen=True)
class RuleEfficiency:
    detected: int
    total_r: int
    fraction: Fraction


def _rule_indices(ht: HaplotypeTable, rule: Iterable[str]) -> list[int]:
    out = []
    for a in rule:
        if a not in ht.markers:
            raise UnknownAllele(f"{a!r} is not a marker variant of this tree "
                                f"(markers: {', '.join(ht.markers)})")
        out.append(ht.loci.index(a))
    return out


def rule_efficiency(ht: HaplotypeTable, rule: Iterable[str]) -> RuleEfficiency:
    """Share of region-variant haplotypes flagged by "R when any rule allele occurs".

    Counts haplotypes, not frequencies, and returns an exact fraction.
    """
    idx = _rule_indices(ht, rule)
    r_haps = [h for i, h in enumerate(ht.haplotypes) if ht.carries_region(i)]
    detected = sum(1 for h in r_haps if any(h[k] for k in idx))
    total = len(r_haps)
    return RuleEfficiency(detected, total, Fraction(detected, total) if total else Fraction(0))


def best_rule(ht: HaplotypeTable) -> tuple[str, ...]:
    """Every marker variant that never occurs on a wild-type region haplotype.

    Using any such allele cannot raise a false alarm, so their union gives the
    highest detection efficiency attainable without false positives.
    """
    ri = ht.region_index
    out = []
    for m in ht.markers:
        k = ht.loci.index(m)
        on_r = any(h[k] and h[ri] for h in ht.haplotypes)
        on_wild = any(h[k] and not h[ri] for h in ht.haplotypes)
        if on_r and not on_wild:
            out.append(m)
    return tuple(out)


def minimal_rule(ht: HaplotypeTable, rule: Sequence[str] | None = None) -> tuple[str, ...]:
    """Drop redundant alleles from ``rule`` (default: the best rule) while the
    number of detected haplotypes stays the same.  Alleles are tried from the
    most recent event backwards."""
    rule = list(best_rule(ht) if rule is None else rule)
    target = rule_efficiency(ht, rule).detected
    for a in sorted(rule, key=ht.loci.index, reverse=True):
        trial = [b for b in rule if b != a]
        if trial and rule_efficiency(ht, trial).detected == target:
            rule = trial
    return tuple(rule)


# -- population sampling -----------------------------------------------------------

@dataclass(frozen=True)
class EffectModel:
    """Trait model given region-variant carrier status (dominant coding).

    The linear predictor is ``baseline + effect * carrier + covariates @
    covariate_effects`` with standard-normal covariates.  Gaussian traits add
    ``N(0, noise^2)`` errors; binomial and poisson traits use the canonical
    inverse links.
    """

    family: Family = Family.GAUSSIAN
    effect: float = 0.0
    baseline: float = 0.0
    noise: float = 1.0
    covariate_effects: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "covariate_effects",
                           tuple(float(b) for b in self.covariate_effects))
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; ``seed`` may be an int or SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def replicate_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Independent child streams for parallel replicates."""
    return np.random.SeedSequence(seed).spawn(count)


def simulate_population(ht: HaplotypeTable, n: int, em: EffectModel = EffectModel(),
                        seed=0) -> Dataset:
    """Sample ``n`` diploid individuals under random mating.

    Each individual receives two haplotypes drawn independently from the
    table; its carried alleles are the marker variants on either copy.  The
    panel holds the marker variants in event order.  The returned dataset's
    ``meta`` records the region carrier vector.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed)
    p = np.asarray(ht.frequencies, dtype=float)
    pairs = rng.choice(len(ht), size=(n, 2), p=p / p.sum())
    flags = np.asarray(ht.haplotypes, dtype=bool)
    marker_cols = [ht.loci.index(m) for m in ht.markers]
    carried = flags[pairs[:, 0]][:, marker_cols] | flags[pairs[:, 1]][:, marker_cols]
    ri = ht.region_index
    carrier = flags[pairs[:, 0], ri] | flags[pairs[:, 1], ri]
    kx = len(em.covariate_effects)
    X = rng.standard_normal((n, kx))
    eta = em.baseline + em.effect * carrier + X @ np.asarray(em.covariate_effects)
    if em.family is Family.GAUSSIAN:
        y = eta + em.noise * rng.standard_normal(n)
    elif em.family is Family.BINOMIAL:
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    else:
        y = rng.poisson(np.exp(eta)).astype(float)
    ds = Dataset.from_arrays(AllelePanel(ht.markers), carried, y,
                             covariates=X if kx else None,
                             ids=[f"s{i + 1}" for i in range(n)])
    ds.meta["region_carrier"] = carrier.astype(np.uint8)
    ds.meta["haplotype_pairs"] = pairs
    return ds
