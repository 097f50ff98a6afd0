"""Profile search over groupings, penalized model selection and tests.

For every order ``j`` the exhaustive scan fits one model per grouping and
keeps the largest log-likelihood (the profile log-likelihood of order
``j``).  The scan is a parallel map over contiguous blocks of the canonical
enumeration; the reduction runs in enumeration order in the parent process,
so the result does not depend on the number of workers.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import multiprocessing as mp

import numpy as np

from magscan import kernels
from magscan.design import (CATEGORICAL, Dataset, build_design, null_design,
                            pruned_singleton_design)
from magscan.errors import AllDegenerate, FitError, SearchSpaceTooLarge
from magscan.glm import (ETA_MAX, IRLS_MAXIT, IRLS_TOL, RANK_TOL, DesignMatrix, Family,
                         FitResult, LrtOutcome, MultiFit, fit_baseline_logits, fit_glm, lrt)
from magscan.grouping import (AllelePanel, Grouping, canonical_labels, format_grouping,
                              label_matrix, labels_to_grouping, total_groupings)

DEFAULT_PENALTY_C = 3.85
DEFAULT_SEARCH_CAP = 10**7
TIE_TOL = 1e-9
BASELINE_LOGITS = "baseline-logits"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("MAGSCAN_WORKERS", "1")))
    except ValueError:
        return 1


# -- trait models ------------------------------------------------------------

def resolve_model(ds: Dataset, family=None) -> Family | str:
    """GLM family for continuous traits, ``"baseline-logits"`` for categorical."""
    if ds.trait_kind == CATEGORICAL:
        if family not in (None, BASELINE_LOGITS, Family.BINOMIAL, "binomial"):
            raise ValueError("categorical traits are modelled by baseline-category logits")
        return BASELINE_LOGITS
    if family in (None, ""):
        return Family.GAUSSIAN
    if family == BASELINE_LOGITS:
        raise ValueError("baseline-category logits need a categorical trait")
    return Family.parse(family)


def model_label(model: Family | str) -> str:
    return model if isinstance(model, str) else model.label


def fit_design(ds: Dataset, design: DesignMatrix, model: Family | str):
    if model == BASELINE_LOGITS:
        return fit_baseline_logits(design, ds.trait_values, ds.reference, ds.levels)
    return fit_glm(design, ds.response, model)


def fit_grouping(ds: Dataset, g: Grouping, family=None) -> FitResult | MultiFit:
    """Fit the model for one grouping (the empty grouping gives the null model)."""
    model = resolve_model(ds, family)
    design = build_design(ds, g) if g.order else null_design(ds)
    return fit_design(ds, design, model)


@dataclass
class _SubProblem:
    carried: np.ndarray
    base: np.ndarray
    y: np.ndarray
    family: Family


class ScanProblem:
    """Arrays handed to the scan kernel; one sub-problem per logistic sub-fit."""

    def __init__(self, ds: Dataset, model: Family | str):
        self.model = model
        carried = np.ascontiguousarray(ds.carried_matrix, dtype=np.uint8)
        base = np.ascontiguousarray(ds.base_matrix)
        if model == BASELINE_LOGITS:
            resp = np.array([str(v) for v in ds.trait_values], dtype=object)
            subs = []
            for lv in ds.levels:
                if lv == ds.reference:
                    continue
                rows = np.flatnonzero((resp == ds.reference) | (resp == lv))
                subs.append(_SubProblem(np.ascontiguousarray(carried[rows]),
                                        np.ascontiguousarray(base[rows]),
                                        (resp[rows] == lv).astype(float), Family.BINOMIAL))
            self.subs = subs
        else:
            self.subs = [_SubProblem(carried, base, np.asarray(ds.response, dtype=float), model)]
        per_sub = base.shape[1] + (1 if model == Family.GAUSSIAN else 0)
        self.k_base = per_sub * len(self.subs)

    def k(self, order: int) -> int:
        return self.k_base + order * len(self.subs)

    def scan(self, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Log-likelihood and status per label row (status 0 = fitted)."""
        labels = np.ascontiguousarray(labels, dtype=np.int8)
        total = np.zeros(labels.shape[0])
        status = np.zeros(labels.shape[0], dtype=np.int8)
        for sub in self.subs:
            ll, st = kernels.scan_labels(sub.carried, sub.base, sub.y, labels,
                                         sub.family.code, IRLS_TOL, IRLS_MAXIT, ETA_MAX,
                                         RANK_TOL)
            total += np.where(st == 0, ll, 0.0)
            # rank deficiency dominates other failures
            status = np.where((status == 0) | (st == kernels.RANK_DEFICIENT),
                              np.where(st != 0, st, status), status).astype(np.int8)
        total[status != 0] = np.nan
        return total, status


_WORKER_PROBLEM: ScanProblem | None = None
_WORKER_LABELS: np.ndarray | None = None


def _init_worker(problem: ScanProblem, labels: np.ndarray) -> None:
    global _WORKER_PROBLEM, _WORKER_LABELS
    _WORKER_PROBLEM, _WORKER_LABELS = problem, labels


def _scan_block(bounds: tuple[int, int]):
    lo, hi = bounds
    return _WORKER_PROBLEM.scan(_WORKER_LABELS[lo:hi])


def parallel_scan(problem: ScanProblem, labels: np.ndarray, workers: int = 1):
    """Scan ``labels`` with ``workers`` processes; output order = row order."""
    G = labels.shape[0]
    if workers <= 1 or G < 2:
        return problem.scan(labels)
    n_blocks = min(G, workers * 4)
    edges = np.linspace(0, G, n_blocks + 1).astype(int)
    blocks = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                             initializer=_init_worker, initargs=(problem, labels)) as ex:
        parts = list(ex.map(_scan_block, blocks))
    return (np.concatenate([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]).astype(np.int8))


# -- profile tables ------------------------------------------------------------

@dataclass(frozen=True)
class ProfileEntry:
    order: int
    best_grouping: Grouping
    loglik: float
    k: int
    aic: float
    alt_score: float
    n_fitted: int
    n_skipped_degenerate: int
    n_failed: int = 0


@dataclass(frozen=True)
class ProfileTable:
    """Per-order best groupings plus the null (order-0) fit."""

    panel: AllelePanel
    model: str
    entries: tuple[ProfileEntry, ...]
    null_loglik: float
    null_k: int
    penalty_c: float = DEFAULT_PENALTY_C
    approximate: bool = False
    n: int = 0
    dataset: Dataset | None = field(default=None, compare=False, repr=False)
    family: Family | str | None = field(default=None, compare=False, repr=False)

    @property
    def max_order(self) -> int:
        return len(self.entries)

    def entry(self, order: int) -> ProfileEntry:
        return self.entries[order - 1]

    def logliks(self) -> np.ndarray:
        return np.array([e.loglik for e in self.entries])

    def monotone_violations(self, tol: float = 1e-6) -> list[int]:
        """Orders ``j`` with ``l_(j+1) < l_j - tol``."""
        ll = self.logliks()
        return [j + 1 for j in range(len(ll) - 1) if ll[j + 1] < ll[j] - tol]

    def grouping_text(self, order: int) -> str:
        return format_grouping(self.entry(order).best_grouping, self.panel)


def _entry(order: int, grouping: Grouping, ll: float, k: int, c: float,
           n_fitted: int, n_degenerate: int, n_failed: int) -> ProfileEntry:
    return ProfileEntry(order, grouping, float(ll), int(k), -2.0 * (ll - k), ll - c * k,
                        int(n_fitted), int(n_degenerate), int(n_failed))


def _null_fit(ds: Dataset, model):
    return fit_design(ds, null_design(ds), model)


def profile_search(ds: Dataset, family=None, max_order: int | None = None,
                   workers: int | None = None, cap: int = DEFAULT_SEARCH_CAP,
                   penalty_c: float = DEFAULT_PENALTY_C, tie_tol: float = TIE_TOL) -> ProfileTable:
    """Exhaustive profile log-likelihood for orders ``1..max_order``.

    Degenerate designs are skipped and counted; fits that separate or fail to
    converge are skipped and counted as failures.  An order with no fittable
    grouping raises :class:`AllDegenerate` when it lies within an explicit
    ``max_order`` (or is order 1); by default the profile stops before it.  Ties within ``tie_tol``
    go to the grouping that comes first in canonical order.
    """
    model = resolve_model(ds, family)
    h = ds.h
    explicit = max_order is not None
    max_order = int(max_order) if explicit else h
    if not 1 <= max_order <= h:
        raise ValueError(f"max_order must be in 1..{h}")
    total = total_groupings(h, max_order)
    if total > cap:
        raise SearchSpaceTooLarge(total, cap)
    workers = default_workers() if workers is None else max(1, int(workers))

    null = _null_fit(ds, model)
    problem = ScanProblem(ds, model)
    mats = [label_matrix(h, j) for j in range(1, max_order + 1)]
    ll, status = parallel_scan(problem, np.vstack(mats), workers)

    entries = []
    start = 0
    for j, mat in enumerate(mats, start=1):
        stop = start + mat.shape[0]
        l_j, s_j = ll[start:stop], status[start:stop]
        start = stop
        ok = s_j == 0
        if not ok.any():
            # Dropping a MAG from a full-rank design keeps full rank, so
            # unfittable orders form a suffix; without an explicit
            # max_order the profile simply ends before it.
            if explicit or j == 1:
                raise AllDegenerate(j)
            break
        best = np.max(l_j[ok])
        idx = int(np.flatnonzero(ok & (l_j >= best - tie_tol))[0])
        entries.append(_entry(j, labels_to_grouping(mat[idx]), l_j[idx], problem.k(j),
                              penalty_c, ok.sum(), (s_j == kernels.RANK_DEFICIENT).sum(),
                              ((s_j != 0) & (s_j != kernels.RANK_DEFICIENT)).sum()))
    return ProfileTable(ds.panel, model_label(model), tuple(entries), null.log_likelihood,
                        null.k, penalty_c, False, ds.n, ds, model)


# -- model selection ---------------------------------------------------------------

@dataclass(frozen=True)
class MagEffect:
    mag: str
    coefficients: dict
    direction: str


@dataclass(frozen=True)
class SelectionReport:
    criterion: str
    penalty_c: float
    chosen_order: int
    chosen_grouping: Grouping
    chosen_text: str
    scores: tuple[float, ...]
    effects: tuple[MagEffect, ...]
    joint_test: LrtOutcome
    fit: FitResult | MultiFit | None = field(default=None, compare=False, repr=False)


def _direction(values) -> str:
    signs = {np.sign(v) for v in values}
    if signs <= {1.0}:
        return "increase"
    if signs <= {-1.0}:
        return "decrease"
    return "mixed"


def mag_effects(fit: FitResult | MultiFit, mag_labels) -> tuple[MagEffect, ...]:
    """Per-MAG coefficients with direction labels.

    For baseline-category logits the coefficients are log-odds against the
    reference level, one per non-reference level.
    """
    out = []
    for lab in mag_labels:
        if isinstance(fit, MultiFit):
            coefs = {lv: f.coef(lab) for lv, f in fit.sub_fits.items()}
        else:
            coefs = {"trait": fit.coef(lab)}
        out.append(MagEffect(lab, coefs, _direction(coefs.values())))
    return tuple(out)


def selection_scores(pt: ProfileTable, criterion: str = "aic",
                     penalty_c: float | None = None) -> tuple[float, ...]:
    c = pt.penalty_c if penalty_c is None else penalty_c
    if criterion == "aic":
        return tuple(-2.0 * (e.loglik - e.k) for e in pt.entries)
    if criterion == "alt":
        return tuple(e.loglik - c * e.k for e in pt.entries)
    raise ValueError(f"unknown criterion {criterion!r}; expected 'aic' or 'alt'")


def choose_order(pt: ProfileTable, criterion: str = "aic",
                 penalty_c: float | None = None, tie_tol: float = TIE_TOL) -> int:
    """Order minimizing AIC (or maximizing the alternative score); ties go to
    the smaller order."""
    scores = selection_scores(pt, criterion, penalty_c)
    sign = 1.0 if criterion == "aic" else -1.0
    best_j, best = 1, sign * scores[0]
    for j, s in enumerate(scores[1:], start=2):
        if sign * s < best - tie_tol:
            best_j, best = j, sign * s
    return best_j


def select_model(pt: ProfileTable, criterion: str = "aic",
                 penalty_c: float | None = None, refit: bool = True) -> SelectionReport:
    """Pick the number of MAGs and report the refitted profile model.

    ``aic`` minimizes ``-2 (l_j - k)``; ``alt`` maximizes ``l_j - c k``.
    The report's joint test compares the chosen model with the null model.
    """
    c = pt.penalty_c if penalty_c is None else float(penalty_c)
    scores = selection_scores(pt, criterion, c)
    j = choose_order(pt, criterion, c)
    g = pt.entry(j).best_grouping
    fit = None
    effects: tuple[MagEffect, ...] = ()
    entry = pt.entry(j)
    joint = LrtOutcome(max(0.0, 2.0 * (entry.loglik - pt.null_loglik)), entry.k - pt.null_k,
                       float("nan"))
    if refit and pt.dataset is not None:
        fit = fit_grouping(pt.dataset, g, pt.family)
        design_labels = fit.labels if isinstance(fit, FitResult) else \
            next(iter(fit.sub_fits.values())).labels
        n_base = 1 + pt.dataset.k_x
        effects = mag_effects(fit, design_labels[n_base:])
        null = _null_fit(pt.dataset, pt.family)
        joint = lrt(fit, null)
    else:
        from magscan.glm import chi_square_sf
        joint = LrtOutcome(joint.statistic, joint.df, chi_square_sf(joint.statistic, joint.df))
    return SelectionReport(criterion, c, j, g, format_grouping(g, pt.panel), scores,
                           effects, joint, fit)


# -- tests of association -----------------------------------------------------------

def joint_association_test(ds: Dataset, family=None) -> LrtOutcome:
    """LRT of the single-allele model against the null model.

    Constant, duplicated or dependent allele indicators are pruned first;
    ``df`` is the number of retained indicators.
    """
    model = resolve_model(ds, family)
    design, kept = pruned_singleton_design(ds)
    if not kept:
        raise AllDegenerate(1)
    return lrt(fit_design(ds, design, model), _null_fit(ds, model))


@dataclass(frozen=True)
class ScreenResult:
    allele: str
    test: LrtOutcome
    significant: bool


def singleton_screen(ds: Dataset, family=None, alpha: float = 0.05) -> tuple[ScreenResult, ...]:
    """Per-allele LRT in the presence of the other alleles.

    Each retained allele indicator is dropped in turn from the pruned
    single-allele model; this is the conventional one-marker-at-a-time
    screening that grouped models are compared against.
    """
    model = resolve_model(ds, family)
    design, kept = pruned_singleton_design(ds)
    full = fit_design(ds, design, model)
    n_base = 1 + ds.k_x
    out = []
    for pos, a in enumerate(kept):
        drop = n_base + pos
        cols = [c for c in range(design.p) if c != drop]
        reduced_design = DesignMatrix(design.values[:, cols],
                                      tuple(design.labels[c] for c in cols), n_base)
        test = lrt(full, fit_design(ds, reduced_design, model))
        out.append(ScreenResult(ds.panel[a], test, test.p_value < alpha))
    return tuple(out)


# -- simulated annealing ----------------------------------------------------------------

@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric cooling ``T_k = t0 * cooling**k`` over ``steps`` proposals per order."""

    t0: float = 2.0
    cooling: float = 0.9975
    steps: int = 3000


def _random_labels(h: int, j: int, rng: np.random.Generator) -> tuple[int, ...]:
    labels = rng.integers(0, j + 1, size=h)
    forced = rng.permutation(h)[:j]
    labels[forced] = np.arange(1, j + 1)
    return canonical_labels(labels)


def _propose(labels: tuple[int, ...], j: int, rng: np.random.Generator):
    """Order-preserving neighbour: move, in/out, swap, or split+merge."""
    lab = list(labels)
    h = len(lab)
    sizes = [0] * (j + 1)
    for v in lab:
        sizes[v] += 1
    unused = [a for a in range(h) if lab[a] == 0]
    movable = [a for a in range(h) if lab[a] and sizes[lab[a]] >= 2]
    moves = []
    if j >= 2 and movable:
        moves.append("move")
    if unused:
        moves.append("in")
        moves.append("swap")
    if movable:
        moves.append("out")
    if j >= 2 and (h - len(unused)) > j:
        moves.append("splitmerge")
    if not moves:
        return None
    kind = moves[int(rng.integers(len(moves)))]
    if kind == "move":
        a = movable[int(rng.integers(len(movable)))]
        targets = [m for m in range(1, j + 1) if m != lab[a]]
        lab[a] = targets[int(rng.integers(len(targets)))]
    elif kind == "in":
        a = unused[int(rng.integers(len(unused)))]
        lab[a] = int(rng.integers(1, j + 1))
    elif kind == "out":
        a = movable[int(rng.integers(len(movable)))]
        lab[a] = 0
    elif kind == "swap":
        a = unused[int(rng.integers(len(unused)))]
        used = [b for b in range(h) if lab[b]]
        b = used[int(rng.integers(len(used)))]
        lab[a], lab[b] = lab[b], 0
    else:
        m1, m2 = sorted(rng.choice(np.arange(1, j + 1), size=2, replace=False).tolist())
        lab = [m1 if v == m2 else v for v in lab]
        sizes = [0] * (j + 1)
        for v in lab:
            sizes[v] += 1
        splittable = [m for m in range(1, j + 1) if m != m2 and sizes[m] >= 2]
        s = splittable[int(rng.integers(len(splittable)))]
        members = [a for a in range(h) if lab[a] == s]
        while True:
            side = rng.integers(0, 2, size=len(members))
            if 0 < side.sum() < len(members):
                break
        for a, bit in zip(members, side):
            if bit:
                lab[a] = m2
    return canonical_labels(lab)


def anneal_search(ds: Dataset, family=None, order_range=None,
                  schedule: AnnealSchedule = AnnealSchedule(), seed: int = 0,
                  start: dict | None = None, penalty_c: float = DEFAULT_PENALTY_C,
                  tie_tol: float = TIE_TOL) -> ProfileTable:
    """Approximate profile table by one annealing chain per order.

    Each chain stays within its order.  Proposals with a non-fittable design
    are rejected.  Acceptance is ``exp(delta_loglik / T)``; at ``T = 0``
    only strict improvements are accepted.  The result is flagged
    ``approximate`` and is a deterministic function of ``seed``.
    """
    model = resolve_model(ds, family)
    h = ds.h
    orders = list(range(1, h + 1)) if order_range is None else sorted(set(order_range))
    if not orders or orders[0] < 1 or orders[-1] > h:
        raise ValueError(f"orders must lie in 1..{h}")
    problem = ScanProblem(ds, model)
    null = _null_fit(ds, model)
    entries = []
    for j in orders:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), j]))
        cache: dict[tuple[int, ...], float] = {}

        def evaluate(lab):
            if lab not in cache:
                ll, st = problem.scan(np.array([lab], dtype=np.int8))
                cache[lab] = (float(ll[0]), int(st[0]))
            return cache[lab]

        if start and j in start:
            cur = tuple(start[j].labels(h))
        else:
            cur = _random_labels(h, j, rng)
        cur_ll, _ = evaluate(cur)
        best, best_ll = (cur, cur_ll) if not math.isnan(cur_ll) else (None, -math.inf)
        T = float(schedule.t0)
        for _ in range(int(schedule.steps)):
            prop = _propose(cur, j, rng)
            if prop is None:
                break
            ll, _ = evaluate(prop)
            u = rng.random()
            T_now, T = T, T * schedule.cooling
            if math.isnan(ll):
                continue
            delta = ll - cur_ll if not math.isnan(cur_ll) else math.inf
            if delta > 0 or (T_now > 0 and u < math.exp(min(0.0, delta) / T_now)):
                cur, cur_ll = prop, ll
            if ll > best_ll + tie_tol or (abs(ll - best_ll) <= tie_tol and prop < best):
                best, best_ll = prop, ll
        if best is None:
            raise AllDegenerate(j)
        fitted = sum(1 for v in cache.values() if v[1] == 0)
        degenerate = sum(1 for v in cache.values() if v[1] == kernels.RANK_DEFICIENT)
        failed = len(cache) - fitted - degenerate
        entries.append(_entry(j, labels_to_grouping(best), best_ll, problem.k(j), penalty_c,
                              fitted, degenerate, failed))
    return ProfileTable(ds.panel, model_label(model), tuple(entries), null.log_likelihood,
                        null.k, penalty_c, True, ds.n, ds, model)
