"""MAG association scans."""

__version__ = "0.1.0"

from magscan.design import Dataset, Individual, build_design, mag_indicator
from magscan.glm import Family, fit_baseline_logits, fit_glm, lrt
from magscan.grouping import (AllelePanel, Grouping, count_groupings, enumerate_groupings,
                              format_grouping, parse_grouping, total_groupings)
from magscan.phylo import (DichotomousTree, EffectModel, HaplotypeTable, haplotypes_from_tree,
                           rule_efficiency, simulate_population)
from magscan.search import (anneal_search, joint_association_test, profile_search,
                            select_model, singleton_screen)

__all__ = [
    "AllelePanel", "Dataset", "DichotomousTree", "EffectModel", "Family", "Grouping",
    "HaplotypeTable", "Individual", "anneal_search", "build_design", "count_groupings",
    "enumerate_groupings", "fit_baseline_logits", "fit_glm", "format_grouping",
    "haplotypes_from_tree", "joint_association_test", "lrt", "mag_indicator",
    "parse_grouping", "profile_search", "rule_efficiency", "select_model",
    "simulate_population", "singleton_screen", "total_groupings",
]
