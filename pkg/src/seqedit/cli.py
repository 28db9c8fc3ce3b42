"""Command-line interface.

Verbs: run (execute a config), compare (vanilla vs anchored), verify
(exact-identity audit over existing traces), fit (regressions plus
closed-form trajectory prediction), report (plot-ready aggregates).

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 verification
failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, RunConfig, load_config
from .harness import (
    OutputDirExists,
    compare_regimes,
    fit_run,
    report_run,
    run_sequence,
    verify_run,
)
from .linalg import NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seeds", type=int, default=None,
                   help="use seeds 0..N-1 instead of the config's list")
    p.add_argument("--nas", choices=("on", "off"), default=None,
                   help="force the anchor rescale on or off")
    p.add_argument("--profile", choices=("debug", "fast"), default=None,
                   help="constraint-verification cadence")


def _load_with_overrides(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        cfg.seeds = list(range(args.seeds))
    if args.nas is not None:
        cfg.nas.enabled = args.nas == "on"
    if args.profile is not None:
        cfg.profile = args.profile
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg.validate()


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_with_overrides(args)
    if cfg.out_dir is None:
        raise ConfigError("an output directory is required (--out or out_dir)")
    manifest = run_sequence(cfg, cfg.out_dir)
    n_ok = len(manifest["seeds"]) - manifest["n_failed"]
    print(f"run: {n_ok}/{len(manifest['seeds'])} seeds ok -> {cfg.out_dir}")
    for entry in manifest["seeds"]:
        if not entry["ok"]:
            print(f"  seed {entry['seed']} FAILED: {entry['error']}")
    return EXIT_NUMERIC if manifest["n_failed"] else EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    cfg = _load_with_overrides(args)
    if cfg.out_dir is None:
        raise ConfigError("an output directory is required (--out or out_dir)")
    comparison = compare_regimes(cfg, cfg.out_dir)
    print(f"compare: {comparison['n_pairs']} paired seeds -> {cfg.out_dir}")
    print(f"  anchored CP not earlier: {comparison['n_nas_not_earlier']}"
          f"/{comparison['n_pairs']}")
    print(f"  median CP ratio:         {comparison['median_cp_ratio']:.3g}")
    print(f"  median Spearman (van.):  {comparison['median_spearman_vanilla']:.3f}")
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    result = verify_run(args.out, rtol=args.rtol)
    for seed in result["seeds"]:
        status = "ok" if seed["ok"] else "FAIL"
        print(f"  seed {seed['seed']}: plain={seed['plain_residual']:.3e} "
              f"whitened={seed['whitened_residual']:.3e} "
              f"constraint={seed['max_constraint_residual']:.3e} [{status}]")
    print(f"verify: {'ok' if result['ok'] else 'FAILED'} (rtol={result['rtol']:.1e})")
    return EXIT_OK if result["ok"] else EXIT_VERIFY


def _cmd_fit(args: argparse.Namespace) -> int:
    summary = fit_run(args.out)
    p = summary["params"]
    print(f"fit: regime={p['regime']} rho={p['rho']:.6g} gamma={p['gamma']:.6g}")
    print(f"  K={p['K']:.6g} s_new={p['s_new']:.6g} b_new={p['b_new']:.6g} "
          f"s_old={p['s_old']:.6g} b_old={p['b_old']:.6g}")
    slopes = [f["slope"] for f in summary["log_rn_fits"]]
    r2 = [f["r_squared"] for f in summary["log_rn_fits"]]
    print(f"  log R_n slope: mean={sum(slopes)/len(slopes):.6g} "
          f"min R^2={min(r2):.4f}")
    inside = [row for row in summary["trajectory"] if row["within_growth_cap"]]
    if inside:
        worst = max(row["rel_err"] for row in inside)
        print(f"  trajectory rel err (within growth cap): max={worst:.3%}")
    print(f"  -> {args.out}/fit.json")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    paths = report_run(args.out)
    for name, path in paths.items():
        print(f"report: {name} -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqedit",
        description="Sequential key-value memory editing simulator",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute a run configuration")
    _add_run_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="paired vanilla vs anchored runs")
    _add_run_flags(p_cmp)
    p_cmp.set_defaults(func=_cmd_compare)

    p_ver = sub.add_parser("verify", help="audit exact identities over traces")
    p_ver.add_argument("--out", required=True, help="existing run directory")
    p_ver.add_argument("--rtol", type=float, default=1e-8)
    p_ver.set_defaults(func=_cmd_verify)

    p_fit = sub.add_parser("fit", help="regressions and trajectory prediction")
    p_fit.add_argument("--out", required=True, help="existing run directory")
    p_fit.set_defaults(func=_cmd_fit)

    p_rep = sub.add_parser("report", help="plot-ready aggregate tables")
    p_rep.add_argument("--out", required=True, help="existing run directory")
    p_rep.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OutputDirExists, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ValueError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
