from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from magscan.errors import AllDegenerate, InvalidBranchPath, TreeFormatError, UnknownAllele
from magscan.phylo import (BUILTIN_TREES, DichotomousTree, EffectModel, best_rule, builtin_tree,
                           haplotypes_from_tree, minimal_rule, parse_tree, replicate_seeds,
                           rule_efficiency, simulate_population)
from magscan.search import profile_search


def _haps(name):
    return haplotypes_from_tree(builtin_tree(name))


def test_sibling_markers_haplotypes_and_rules():
    ht = _haps("sibling_markers")
    assert ht.names() == ("AbR", "aBR", "abR", "abr")
    assert rule_efficiency(ht, ["A", "B"]).fraction == Fraction(2, 3)
    assert rule_efficiency(ht, ["A"]).fraction == Fraction(1, 3)
    assert rule_efficiency(ht, ["A"]).total_r == 3


def test_ancestral_marker_haplotypes():
    assert _haps("ancestral_marker").names() == ("ABR", "AbR", "Abr", "abr")


def test_six_haplotype_tree_and_redundancy():
    ht = _haps("six_haplotype")
    assert ht.names() == ("AbcdR", "aBCdR", "aBcdR", "abcDR", "abcdR", "abcdr")
    assert best_rule(ht) == ("A", "B", "C", "D")
    assert rule_efficiency(ht, ["A", "B", "C", "D"]).fraction == Fraction(4, 5)
    assert rule_efficiency(ht, ["A", "B", "D"]).fraction == Fraction(4, 5)
    assert minimal_rule(ht) == ("A", "B", "D")
    assert rule_efficiency(ht, ["A", "B", "C"]).fraction == Fraction(3, 5)


def test_single_marker_tree():
    ht = _haps("single_marker")
    assert ht.names() == ("AR", "aR", "ar")
    assert rule_efficiency(ht, ["A"]).fraction == Fraction(1, 2)


def test_unknown_rule_allele():
    with pytest.raises(UnknownAllele):
        rule_efficiency(_haps("sibling_markers"), ["Z"])
    with pytest.raises(UnknownAllele):
        rule_efficiency(_haps("sibling_markers"), ["R"])


def test_invalid_trees():
    with pytest.raises(InvalidBranchPath):
        DichotomousTree((("R", ""), ("A", "VV")))
    with pytest.raises(InvalidBranchPath):
        DichotomousTree((("R", ""), ("A", "")))
    with pytest.raises(TreeFormatError):
        DichotomousTree((("R", ""), ("R", "V")))
    with pytest.raises(TreeFormatError):
        DichotomousTree((("A", ""),))
    with pytest.raises(TreeFormatError):
        parse_tree("locus=R path=\nnonsense\n")


def test_tree_text_round_trip():
    for name in BUILTIN_TREES:
        t = builtin_tree(name)
        assert parse_tree(t.format()) == t
    t = parse_tree("region=Q\nlocus=Q\nlocus=M path=w  # comment\n")
    assert t.region == "Q" and t.events == (("Q", ""), ("M", "w"))
    assert haplotypes_from_tree(t).names() == ("mQ", "Mq", "mq")


@st.composite
def trees(draw):
    k = draw(st.integers(1, 7))
    loci = ["R"] + [chr(ord("A") + i) for i in range(k - 1)]
    order = draw(st.permutations(loci))
    leaves, events = [""], []
    for locus in order:
        path = draw(st.sampled_from(sorted(leaves)))
        leaves.remove(path)
        leaves += [path + "V", path + "w"]
        events.append((locus, path))
    return DichotomousTree(tuple(events))


@given(trees())
def test_tree_invariants(t):
    ht = haplotypes_from_tree(t)
    assert len(ht) == len(t.events) + 1
    assert len(set(ht.names())) == len(ht)
    assert ht.names()[-1] == ht.names()[-1].lower()  # the all-wild root path
    assert abs(sum(ht.frequencies) - 1.0) <= 1e-12
    rule = best_rule(ht)
    if rule:
        full = rule_efficiency(ht, rule)
        assert rule_efficiency(ht, minimal_rule(ht)).detected == full.detected
        assert rule_efficiency(ht, ht.markers).detected >= full.detected


def test_frequency_validation():
    ht = _haps("sibling_markers")
    with pytest.raises(ValueError):
        ht.with_frequencies([0.5, 0.5, 0.1, 0.0])
    with pytest.raises(ValueError):
        ht.with_frequencies([0.5, 0.5])


def test_simulation_is_reproducible():
    ht = _haps("six_haplotype")
    em = EffectModel("gaussian", 1.0)
    a = simulate_population(ht, 300, em, seed=5)
    b = simulate_population(ht, 300, em, seed=5)
    c = simulate_population(ht, 300, em, seed=6)
    assert np.array_equal(a.carried_matrix, b.carried_matrix)
    assert np.array_equal(a.response, b.response)
    assert not np.array_equal(a.response, c.response)
    assert tuple(a.panel) == ("A", "B", "C", "D")


def test_carriers_are_union_of_both_haplotypes():
    ht = _haps("sibling_markers")
    ds = simulate_population(ht, 200, EffectModel(), seed=1)
    pairs = ds.meta["haplotype_pairs"]
    flags = np.asarray(ht.haplotypes)
    mk = [ht.loci.index(m) for m in ("A", "B")]
    r = ht.loci.index("R")
    for i in range(20):
        expect = flags[pairs[i, 0], mk] | flags[pairs[i, 1], mk]
        assert ds.carried_matrix[i].tolist() == expect.astype(int).tolist()
        assert ds.meta["region_carrier"][i] == (flags[pairs[i, 0], r] | flags[pairs[i, 1], r])


def test_effect_applies_to_region_carriers():
    ht = _haps("sibling_markers")
    ds = simulate_population(ht, 4000, EffectModel("gaussian", 3.0, noise=0.5), seed=2)
    r = ds.meta["region_carrier"].astype(bool)
    assert ds.response[r].mean() - ds.response[~r].mean() == pytest.approx(3.0, abs=0.1)


def test_binomial_and_poisson_traits():
    ht = _haps("ancestral_marker")
    yb = simulate_population(ht, 100, EffectModel("binomial", 1.0), seed=3).response
    yp = simulate_population(ht, 100, EffectModel("poisson", 0.5), seed=3).response
    assert set(np.unique(yb)) <= {0.0, 1.0}
    assert np.all(yp >= 0) and np.all(yp == np.floor(yp))


def test_monomorphic_simulation_is_all_degenerate():
    ht = _haps("sibling_markers").with_frequencies([1.0, 0.0, 0.0, 0.0])
    ds = simulate_population(ht, 50, EffectModel("gaussian", 1.0), seed=0)
    with pytest.raises(AllDegenerate):
        profile_search(ds)


def test_strong_effect_recovers_union_of_siblings():
    ht = _haps("sibling_markers").with_frequencies([0.3, 0.3, 0.0, 0.4])
    ds = simulate_population(ht, 1500, EffectModel("gaussian", 1.5), seed=11)
    assert profile_search(ds).grouping_text(1) == "{A,B}"


def test_replicate_streams_are_independent():
    s = replicate_seeds(1, 3)
    assert len({tuple(x.generate_state(2)) for x in s}) == 3
