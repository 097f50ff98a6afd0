"""``magscan`` command line: scan, simulate, count, test."""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

from magscan import __version__, kernels
from magscan.errors import (ConfigError, DataError, MagscanError, SearchSpaceTooLarge,
                            TreeFormatError, InvalidBranchPath)
from magscan.grouping import count_groupings, total_groupings
from magscan.io import (RunConfig, build_report, load_config_file, load_dataset,
                        profile_svg, write_dataset_csv, write_profile_csv)
from magscan.phylo import (BUILTIN_TREES, EffectModel, best_rule, builtin_tree,
                           haplotypes_from_tree, minimal_rule, read_tree, rule_efficiency,
                           simulate_population)
from magscan.search import (AnnealSchedule, anneal_search, joint_association_test,
                            profile_search, select_model, singleton_screen)

EXIT_DATA = 2
EXIT_SEARCH_SPACE = 3
EXIT_OTHER = 4


def _add_data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="input CSV, one row per individual")
    p.add_argument("--config", help="JSON file with configuration keys")
    p.add_argument("--trait")
    p.add_argument("--trait-kind", choices=["continuous", "categorical"])
    p.add_argument("--levels", help="comma-separated categorical levels")
    p.add_argument("--reference", help="reference level for categorical traits")
    p.add_argument("--covariates", help="comma-separated covariate columns")
    p.add_argument("--id-column")
    p.add_argument("--marker-format", choices=["list", "wide"])
    p.add_argument("--alleles-column")
    p.add_argument("--panel", help="comma-separated allele order")
    p.add_argument("--family", help="gaussian, binomial or poisson")
    p.add_argument("--missing", choices=["exclude", "absent"],
                   help="missing genotype policy")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magscan", description=__doc__)
    ap.add_argument("--version", action="version", version=f"magscan {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scan", help="profile search and model selection")
    _add_data_options(s)
    s.add_argument("--criterion", choices=["aic", "alt"])
    s.add_argument("--penalty-c", type=float)
    s.add_argument("--max-order", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--cap", type=int)
    s.add_argument("--search", choices=["exhaustive", "anneal"])
    s.add_argument("--anneal-steps", type=int)
    s.add_argument("--anneal-t0", type=float)
    s.add_argument("--anneal-cooling", type=float)
    s.add_argument("--out", default=".", help="output directory")
    s.add_argument("--plot", action="store_true", help="also write profile.svg")

    t = sub.add_parser("test", help="joint association test and singleton screening")
    _add_data_options(t)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--out", help="write JSON here instead of stdout")

    m = sub.add_parser("simulate", help="sample a diploid population from a tree")
    m.add_argument("--tree", required=True,
                   help=f"tree file or built-in name ({', '.join(BUILTIN_TREES)})")
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--effect", type=float, default=0.0)
    m.add_argument("--family", default="gaussian")
    m.add_argument("--baseline", type=float, default=0.0)
    m.add_argument("--noise", type=float, default=1.0)
    m.add_argument("--frequencies", help="comma-separated leaf frequencies")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="dataset CSV path")
    m.add_argument("--truth", help="truth JSON path (default: <out>.truth.json)")

    c = sub.add_parser("count", help="number of groupings")
    c.add_argument("h", type=int)
    c.add_argument("j", type=int, nargs="?")
    return ap


_CFG_FLAGS = ("trait", "trait_kind", "levels", "reference", "covariates", "id_column",
              "marker_format", "alleles_column", "panel", "family", "missing", "criterion",
              "penalty_c", "max_order", "workers", "seed", "cap", "search", "anneal_steps",
              "anneal_t0", "anneal_cooling")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < MAGSCAN_WORKERS < config file < command-line flags."""
    env = {}
    if os.environ.get("MAGSCAN_WORKERS"):
        try:
            env["workers"] = int(os.environ["MAGSCAN_WORKERS"])
        except ValueError:
            raise ConfigError("MAGSCAN_WORKERS must be an integer") from None
    file_layer = load_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {k: getattr(args, k) for k in _CFG_FLAGS if hasattr(args, k)}
    return RunConfig.merged(env, file_layer, flags)


def cmd_scan(args) -> int:
    cfg = resolve_config(args)
    ds = load_dataset(args.data, cfg)
    if cfg.search == "anneal":
        orders = range(1, (cfg.max_order or ds.h) + 1)
        pt = anneal_search(ds, cfg.family, orders,
                           AnnealSchedule(cfg.anneal_t0, cfg.anneal_cooling, cfg.anneal_steps),
                           cfg.seed, penalty_c=cfg.penalty_c)
    else:
        pt = profile_search(ds, cfg.family, cfg.max_order, cfg.workers, cfg.cap, cfg.penalty_c)
    sel = select_model(pt, cfg.criterion, cfg.penalty_c)
    runtime = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
               "workers": cfg.workers, "backend": kernels.BACKEND}
    report = build_report(ds, cfg, pt, sel, __version__, runtime)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    write_profile_csv(pt, out / "profile.csv")
    if args.plot:
        (out / "profile.svg").write_text(profile_svg(pt), encoding="utf-8")
    print(f"order {sel.chosen_order} ({sel.criterion}): {sel.chosen_text}  "
          f"joint LRT p = {sel.joint_test.p_value:.4g}")
    return 0


def cmd_test(args) -> int:
    cfg = resolve_config(args)
    ds = load_dataset(args.data, cfg)
    joint = joint_association_test(ds, cfg.family)
    screen = singleton_screen(ds, cfg.family, args.alpha)
    doc = {
        "n": ds.n,
        "joint_test": {"statistic": joint.statistic, "df": joint.df, "p_value": joint.p_value},
        "singletons": [{"allele": s.allele, "statistic": s.test.statistic, "df": s.test.df,
                        "p_value": s.test.p_value, "significant": s.significant}
                       for s in screen],
        "alpha": args.alpha,
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _load_tree(spec: str):
    if spec in BUILTIN_TREES and not Path(spec).exists():
        return builtin_tree(spec)
    try:
        return read_tree(spec)
    except FileNotFoundError:
        raise ConfigError(f"tree file {spec!r} not found") from None


def cmd_simulate(args) -> int:
    tree = _load_tree(args.tree)
    freqs = None
    if args.frequencies:
        try:
            freqs = [float(v) for v in args.frequencies.split(",")]
        except ValueError:
            raise ConfigError("frequencies must be numbers") from None
    try:
        ht = haplotypes_from_tree(tree, freqs)
        em = EffectModel(args.family, args.effect, args.baseline, args.noise)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ds = simulate_population(ht, args.n, em, args.seed)
    write_dataset_csv(ds, args.out)
    rule = best_rule(ht)
    eff = rule_efficiency(ht, rule)
    minimal = minimal_rule(ht)
    truth = {
        "tree": tree.format(),
        "region": tree.region,
        "haplotypes": [{"haplotype": nm, "frequency": f, "region_variant": ht.carries_region(i)}
                       for i, (nm, f) in enumerate(zip(ht.names(), ht.frequencies))],
        "true_grouping": "{" + ",".join(rule) + "}" if rule else "{}",
        "best_rule": list(rule),
        "minimal_rule": list(minimal),
        "efficiency": {"detected": eff.detected, "total_r": eff.total_r,
                       "fraction": f"{eff.fraction.numerator}/{eff.fraction.denominator}"},
        "family": em.family.label,
        "effect": em.effect,
        "baseline": em.baseline,
        "noise": em.noise,
        "null": em.effect == 0.0,
        "n": args.n,
        "seed": args.seed,
        "region_carriers": int(ds.meta["region_carrier"].sum()),
    }
    truth_path = args.truth or f"{args.out}.truth.json"
    Path(truth_path).write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_count(args) -> int:
    if args.j is not None:
        print(count_groupings(args.h, args.j))
        return 0
    for j in range(1, args.h + 1):
        print(f"{j}\t{count_groupings(args.h, j)}")
    print(f"total\t{total_groupings(args.h)}")
    return 0


_COMMANDS = {"scan": cmd_scan, "test": cmd_test, "simulate": cmd_simulate, "count": cmd_count}


def _fail(exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"magscan-error: {exc.__class__.__name__}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SearchSpaceTooLarge as exc:
        return _fail(exc, EXIT_SEARCH_SPACE)
    except (DataError, TreeFormatError, InvalidBranchPath, OSError) as exc:
        return _fail(exc, EXIT_DATA)
    except MagscanError as exc:
        return _fail(exc, EXIT_OTHER)
    except ValueError as exc:
        return _fail(exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
