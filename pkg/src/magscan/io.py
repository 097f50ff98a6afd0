"""Run configuration, CSV ingestion, report documents, profile CSV and SVG."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from magscan.design import CATEGORICAL, CONTINUOUS, Dataset, Individual
from magscan.errors import (ConfigError, DataError, DuplicateId, MalformedRow,
                            UnknownTraitLevel)
from magscan.grouping import AllelePanel

MISSING = {"", "na", "nan", "null", "."}
NO_ALLELES = "-"


def natural_key(s: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


@dataclass(frozen=True)
class RunConfig:
    """Effective settings for a scan; every field has an explicit default."""

    trait: str = "trait"
    trait_kind: str = CONTINUOUS
    levels: tuple[str, ...] = ()
    reference: str | None = None
    covariates: tuple[str, ...] = ()
    id_column: str = "id"
    marker_format: str = "list"
    alleles_column: str = "alleles"
    panel: tuple[str, ...] = ()
    family: str | None = None
    criterion: str = "aic"
    penalty_c: float = 3.85
    max_order: int | None = None
    workers: int = 1
    seed: int = 0
    missing: str = "exclude"
    cap: int = 10**7
    search: str = "exhaustive"
    anneal_steps: int = 3000
    anneal_t0: float = 2.0
    anneal_cooling: float = 0.9975

    def __post_init__(self):
        for name in ("levels", "covariates", "panel"):
            val = getattr(self, name)
            if isinstance(val, str):
                val = [v for v in val.split(",") if v]
            object.__setattr__(self, name, tuple(str(v) for v in val))
        checks = [
            (self.trait_kind in (CONTINUOUS, CATEGORICAL), "trait_kind must be continuous or categorical"),
            (self.marker_format in ("list", "wide"), "marker_format must be list or wide"),
            (self.criterion in ("aic", "alt"), "criterion must be aic or alt"),
            (self.missing in ("exclude", "absent"), "missing must be exclude or absent"),
            (self.search in ("exhaustive", "anneal"), "search must be exhaustive or anneal"),
            (self.penalty_c > 0, "penalty_c must be positive"),
            (self.workers >= 1, "workers must be at least 1"),
            (self.cap >= 1, "cap must be at least 1"),
            (self.max_order is None or self.max_order >= 1, "max_order must be at least 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @classmethod
    def merged(cls, *layers: dict) -> "RunConfig":
        """Later layers override earlier ones; ``None`` values are ignored."""
        names = {f.name for f in dataclasses.fields(cls)}
        values: dict[str, Any] = {}
        for layer in layers:
            for key, val in layer.items():
                key = key.replace("-", "_")
                if key not in names:
                    raise ConfigError(f"unknown configuration key {key!r}")
                if val is not None:
                    values[key] = val
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def echo(self) -> dict:
        """Settings that determine results (worker count is excluded)."""
        d = dataclasses.asdict(self)
        d.pop("workers")
        for k in ("levels", "covariates", "panel"):
            d[k] = list(d[k])
        return d


def load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _is_missing(cell: str | None) -> bool:
    return cell is None or cell.strip().lower() in MISSING


def load_dataset(path, cfg: RunConfig) -> Dataset:
    """Read one individual per CSV row.

    In ``list`` format the alleles column holds semicolon-separated allele ids
    (``-`` for an individual carrying none of the panel).  In ``wide`` format
    every column other than id, trait and covariates is a 0/1 allele column.
    Rows with a missing genotype are excluded (and counted) unless the policy
    is ``absent``; rows with a missing trait or covariate are always excluded.
    """
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        col = {h: i for i, h in enumerate(header)}
        needed = [cfg.trait, *cfg.covariates]
        if cfg.marker_format == "list":
            needed.append(cfg.alleles_column)
        missing_cols = [c for c in needed if c not in col]
        if missing_cols:
            raise ConfigError(f"columns not in header: {', '.join(missing_cols)}")
        if cfg.marker_format == "wide":
            reserved = {cfg.id_column, cfg.trait, *cfg.covariates}
            wide_cols = [h for h in header if h not in reserved]
            if not wide_cols:
                raise ConfigError("wide format needs at least one allele column")
        rows, excluded, seen_ids = [], 0, {}
        for fields in reader:
            line = reader.line_num
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != len(header):
                raise MalformedRow(line, f"expected {len(header)} fields, found {len(fields)}")
            rid = fields[col[cfg.id_column]].strip() if cfg.id_column in col else str(line - 1)
            if not rid:
                raise MalformedRow(line, "empty id")
            if rid in seen_ids:
                raise DuplicateId(line, rid)
            seen_ids[rid] = line
            tcell = fields[col[cfg.trait]]
            ccells = [fields[col[c]] for c in cfg.covariates]
            if _is_missing(tcell) or any(_is_missing(c) for c in ccells):
                excluded += 1
                continue
            trait = tcell.strip()
            if cfg.trait_kind == CONTINUOUS:
                trait = _float(trait, line, cfg.trait)
            elif cfg.levels and trait not in cfg.levels:
                raise UnknownTraitLevel(line, trait)
            covs = tuple(_float(c, line, name) for c, name in zip(ccells, cfg.covariates))
            if cfg.marker_format == "list":
                cell = fields[col[cfg.alleles_column]]
                if _is_missing(cell):
                    if cfg.missing == "exclude":
                        excluded += 1
                        continue
                    alleles = frozenset()
                elif cell.strip() == NO_ALLELES:
                    alleles = frozenset()
                else:
                    parts = [a.strip() for a in cell.split(";")]
                    if any(not a for a in parts):
                        raise MalformedRow(line, f"empty allele id in {cell!r}")
                    alleles = frozenset(parts)
            else:
                cells = [fields[col[c]] for c in wide_cols]
                if any(_is_missing(c) for c in cells):
                    if cfg.missing == "exclude":
                        excluded += 1
                        continue
                alleles = set()
                for name, c in zip(wide_cols, cells):
                    if _is_missing(c):
                        continue
                    v = c.strip()
                    if v not in ("0", "1"):
                        raise MalformedRow(line, f"column {name}: expected 0 or 1, got {v!r}")
                    if v == "1":
                        alleles.add(name)
                alleles = frozenset(alleles)
            rows.append((rid, trait, covs, alleles))
    if not rows:
        raise DataError(f"{path}: no usable rows ({excluded} excluded)")

    if cfg.panel:
        names = list(cfg.panel)
    elif cfg.marker_format == "wide":
        names = list(wide_cols)
    else:
        names = sorted({a for r in rows for a in r[3]}, key=natural_key)
    if not names:
        raise DataError(f"{path}: no marker alleles observed")
    try:
        panel = AllelePanel(tuple(names))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    unknown = sorted({a for r in rows for a in r[3]} - set(names), key=natural_key)
    if unknown:
        raise DataError(f"alleles not in the configured panel: {', '.join(unknown)}")

    levels, reference = (), None
    if cfg.trait_kind == CATEGORICAL:
        levels = cfg.levels or tuple(sorted({r[1] for r in rows}, key=natural_key))
        reference = cfg.reference if cfg.reference is not None else levels[0]
        if reference not in levels:
            raise ConfigError(f"reference level {reference!r} not among levels")
    inds = tuple(Individual(rid, trait, covs, frozenset(panel.index(a) for a in alleles))
                 for rid, trait, covs, alleles in rows)
    return Dataset(panel, inds, cfg.trait_kind, levels, reference, cfg.covariates, excluded)


def _float(text: str, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise MalformedRow(line, f"column {column}: {text!r} is not a number") from None
    if not math.isfinite(v):
        raise MalformedRow(line, f"column {column}: non-finite value")
    return v


def write_dataset_csv(ds: Dataset, path) -> None:
    """Write ``id,trait[,covariates],alleles`` in list format."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "trait", *ds.covariate_names, "alleles"])
        for ind in ds.individuals:
            alleles = ";".join(ds.panel[a] for a in sorted(ind.carried)) or NO_ALLELES
            trait = ind.trait if isinstance(ind.trait, str) else repr(float(ind.trait))
            w.writerow([ind.id, trait, *(repr(float(c)) for c in ind.covariates), alleles])


# -- profile CSV -----------------------------------------------------------------

PROFILE_COLUMNS = ("j", "loglik", "k", "aic", "alt_score", "best_grouping")


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def write_profile_csv(pt, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS)
        for e in pt.entries:
            w.writerow([e.order, _g17(e.loglik), e.k, _g17(e.aic), _g17(e.alt_score),
                        pt.grouping_text(e.order)])


def read_profile_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for row in csv.DictReader(fh):
            out.append({"j": int(row["j"]), "loglik": float(row["loglik"]), "k": int(row["k"]),
                        "aic": float(row["aic"]), "alt_score": float(row["alt_score"]),
                        "best_grouping": row["best_grouping"]})
        return out


# -- reports ---------------------------------------------------------------------

@dataclass
class ReportDocument:
    """Serializable scan report.  ``runtime`` holds the only run-dependent
    fields (timestamp, worker count, backend)."""

    tool: dict
    config: dict
    dataset: dict
    model: str
    search: dict
    null: dict
    profile: list
    selection: dict
    joint_test: dict
    effects: list
    skipped_degenerate: int
    runtime: dict = field(default_factory=dict)

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not include_runtime:
            d.pop("runtime")
        return d

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ReportDocument":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ReportDocument":
        return cls.from_dict(json.loads(text))


def _finite(x: float):
    x = float(x)
    return x if math.isfinite(x) else None


def build_report(ds: Dataset, cfg: RunConfig, pt, sel, version: str,
                 runtime: dict | None = None) -> ReportDocument:
    from magscan.grouping import total_groupings
    from magscan.search import choose_order

    max_order = pt.max_order
    profile = [
        {"j": e.order, "loglik": e.loglik, "k": e.k, "aic": e.aic, "alt_score": e.alt_score,
         "best_grouping": pt.grouping_text(e.order), "n_fitted": e.n_fitted,
         "n_skipped_degenerate": e.n_skipped_degenerate, "n_failed": e.n_failed}
        for e in pt.entries
    ]
    return ReportDocument(
        tool={"name": "magscan", "version": version},
        config=cfg.echo(),
        dataset={
            "n": ds.n, "n_excluded": ds.n_excluded, "h": ds.h, "alleles": list(ds.panel),
            "carrier_frequencies": ds.carrier_frequencies(), "trait_kind": ds.trait_kind,
            "levels": list(ds.levels), "reference": ds.reference,
            "covariates": list(ds.covariate_names),
        },
        model=pt.model,
        search={"method": "anneal" if pt.approximate else "exhaustive",
                "approximate": pt.approximate, "max_order": max_order,
                "groupings_in_range": total_groupings(ds.h, max_order)},
        null={"loglik": pt.null_loglik, "k": pt.null_k},
        profile=profile,
        selection={
            "criterion": sel.criterion, "penalty_c": sel.penalty_c, "order": sel.chosen_order,
            "grouping": sel.chosen_text, "scores": list(sel.scores),
            "order_by_criterion": {"aic": choose_order(pt, "aic"),
                                   "alt": choose_order(pt, "alt", sel.penalty_c)},
        },
        joint_test={"statistic": sel.joint_test.statistic, "df": sel.joint_test.df,
                    "p_value": _finite(sel.joint_test.p_value)},
        effects=[{"mag": m.mag, "coefficients": {k: float(v) for k, v in m.coefficients.items()},
                  "direction": m.direction} for m in sel.effects],
        skipped_degenerate=int(sum(e.n_skipped_degenerate for e in pt.entries)),
        runtime=dict(runtime or {}),
    )


# -- SVG profile plot ---------------------------------------------------------------

_COLORS = ("#1f4e79", "#b03a2e", "#1e8449")


def profile_svg(pt, width: int = 640, height: int = 420) -> str:
    """Line plot of ``l_j``, ``l_j - k_j`` (negative AIC / 2) and ``l_j - c k_j``
    against the number of MAGs."""
    js = [e.order for e in pt.entries]
    series = [
        ("profile log-likelihood", [e.loglik for e in pt.entries]),
        ("negative AIC / 2", [e.loglik - e.k for e in pt.entries]),
        (f"log-likelihood - {pt.penalty_c:g} k", [e.loglik - pt.penalty_c * e.k for e in pt.entries]),
    ]
    left, right, top, bottom = 70, 20, 20, 70
    pw, ph = width - left - right, height - top - bottom
    allv = [v for _, vals in series for v in vals]
    lo, hi = min(allv), max(allv)
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    jlo, jhi = min(js), max(js)
    span = max(jhi - jlo, 1)

    def sx(j):
        return left + (j - jlo) / span * pw if jhi > jlo else left + pw / 2

    def sy(v):
        return top + (hi - v) / (hi - lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in np.linspace(lo + pad, hi - pad, 5):
        y = sy(t)
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{t:.1f}</text>')
    for j in js:
        x = sx(j)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle">{j}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 36}" text-anchor="middle">'
               'assumed number of MAGs</text>')
    for (label, vals), color in zip(series, _COLORS):
        pts = " ".join(f"{sx(j):.2f},{sy(v):.2f}" for j, v in zip(js, vals))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for j, v in zip(js, vals):
            out.append(f'<circle cx="{sx(j):.2f}" cy="{sy(v):.2f}" r="3" fill="{color}"/>')
    for i, ((label, _), color) in enumerate(zip(series, _COLORS)):
        x = left + i * (pw / 3)
        out.append(f'<line x1="{x:.2f}" y1="{height - 12}" x2="{x + 18:.2f}" y2="{height - 12}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x + 22:.2f}" y="{height - 8}">{_xml(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _xml(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
