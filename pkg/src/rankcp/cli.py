"""Command-line entry point: ``rankcp {gen,run,sweep,verify}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 invariant
violation or failed verification check.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import datagen, experiment, verify
from .core import DataError, RankError, write_population_csv
from .scores import write_predictions_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

_OVERRIDES = ("alpha", "n", "m", "trials", "seed", "methods", "score", "envelope", "delta", "K",
              "workers", "model_sigma", "generator", "ranker", "population_csv", "predictions_csv")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="flat key = value config file")
    for key in _OVERRIDES:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="VALUE",
                       help=f"override config key '{key}'")
    p.add_argument("--out-dir", default="out", help="output directory (default: out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankcp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write one synthetic population and its predictions")
    _add_config_args(p)
    p = sub.add_parser("run", help="run all trials of one configuration")
    _add_config_args(p)
    p = sub.add_parser("sweep", help="run one configuration per value of the swept key")
    _add_config_args(p)
    p = sub.add_parser("verify", help="exhaustive small-instance checks")
    p.add_argument("--max-n", type=int, default=10, help="largest N for the pmf check")
    p.add_argument("--cases", type=int, default=24, help="number of coverage configurations")
    p.add_argument("--case-seed", type=int, default=20240601)
    return parser


def load_config(args: argparse.Namespace):
    raw: dict[str, str] = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise experiment.ConfigError(f"config: cannot read {args.config}: {exc.strerror}") from None
        raw.update(experiment.parse_config_text(text))
    for key in _OVERRIDES:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    return experiment.build_config(raw)


def cmd_gen(args) -> int:
    cfg, axis, _ = load_config(args)
    if axis is not None:
        raise experiment.ConfigError(f"{axis}: gen takes a single value")
    if cfg.generator == "external":
        raise experiment.ConfigError("generator: gen needs a synthetic generator")
    syn = datagen.SyntheticConfig(cfg.generator, cfg.dim, cfg.noise_sigma)
    syn = syn.with_weight(experiment._global_stream(cfg.seed, 0))
    seed = experiment.trial_seed(cfg.seed, 0)
    data = experiment._synthetic_trial_data(cfg, seed, syn)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_population_csv(data.pop, out / "population.csv")
    write_predictions_csv(data.preds, data.pop.item_ids, out / "predictions.csv")
    meta = {"seed": cfg.seed, "trial_seed": seed, "config": cfg.echo(),
            "weight": list(syn.weight), "ridge": 1e-8 if cfg.ranker == "linear_ls" else None}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out / 'population.csv'}, {out / 'predictions.csv'}, {out / 'meta.json'}")
    return EXIT_OK


def _print_summary(report: dict) -> None:
    for m in report["methods"]:
        cov = "null" if m["coverage_mean"] is None else f"{m['coverage_mean']:.4f}"
        print(f"{m['name']:<18} coverage={cov} rel_length={m['rel_length_mean']:.4f} "
              f"inf_thresholds={m['inf_threshold_count']} trials={m['trials']}")


def cmd_run(args) -> int:
    cfg, axis, _ = load_config(args)
    if axis is not None:
        raise experiment.ConfigError(f"{axis}: several values given; use the sweep command")
    result = experiment.run_experiment(cfg)
    out = Path(args.out_dir)
    experiment.write_run_outputs(result, out)
    _print_summary(experiment.report_dict(result))
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, axis, grid = load_config(args)
    if axis is None:
        raise experiment.ConfigError("sweep: give one of "
                                     f"{', '.join(experiment.SWEEPABLE)} as a comma-separated list")
    results = experiment.run_sweep(cfg, axis, grid)
    out = Path(args.out_dir)
    experiment.write_sweep_outputs(axis, results, out)
    for value, res in results:
        print(f"{axis}={value}")
        _print_summary(experiment.report_dict(res))
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = verify.check_pmf_exactness(args.max_n)
    checks += verify.check_exact_coverage(verify.coverage_cases(args.cases, args.case_seed))
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_INVARIANT


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except experiment.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, RankError, datagen.SingularSystemError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_DATA
    except experiment.InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
