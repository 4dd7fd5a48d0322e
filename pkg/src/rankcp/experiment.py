"""Experiment orchestration: configuration, seeded trials, sweeps, file output.

Seed scheme (all via ``numpy.random.SeedSequence``):

* trial ``t`` gets ``seed_t = SeedSequence(base_seed, spawn_key=(t,))`` folded
  to a 63-bit integer; ``seed_t`` is what the per-trial CSV reports;
* inside a trial each purpose draws from ``SeedSequence(seed_t, spawn_key=(p,))``
  with ``p`` one of the ``_PURPOSE_*`` constants, and each method from
  ``p = _PURPOSE_METHOD + crc32(method name)``;
* experiment-wide draws (the linear weight vector, TCPR envelopes) use
  ``SeedSequence(base_seed, spawn_key=(_GLOBAL, ...))`` keyed by their
  parameters, so every envelope is a pure function of ``(n, m, delta, K, kind, base_seed)``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import datagen, dcr, tcpr
from .core import (DataError, Population, calibration_ranks, has_ties, jitter_ties,
                   rank_view, read_population_csv, split_population)
from .metrics import (TRIAL_COLUMNS, AggregateReport, TrialResult, aggregate,
                      format_float, score_trial, trial_row)
from .scores import Predictions, ScoreKind, read_predictions_csv, scores_at

log = logging.getLogger(__name__)

_PURPOSE_DATA, _PURPOSE_SPLIT, _PURPOSE_RANKER, _PURPOSE_JITTER = 0, 1, 2, 3
_PURPOSE_METHOD = 1000
_GLOBAL = 2**31


class ConfigError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


BASE_METHODS = ("DCR", "MDCR", "TCPR", "Oracle")
SWEEPABLE = ("alpha", "n", "m", "model_sigma", "noise_sigma", "score", "envelope")


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment configuration; field names are the config-file keys."""

    generator: str = "linear"
    dim: int | None = None
    noise_sigma: float | None = None
    ranker: str = "noisy"
    model_sigma: float = 0.2
    train_size: int = 1000
    n: int = 100
    m: int = 500
    alpha: float = 0.1
    score: str = "RA"
    methods: tuple[str, ...] = BASE_METHODS
    envelope: str = "quantile"
    delta: float | None = None
    K: int = 100_000
    trials: int = 100
    seed: int = 0
    workers: int = 1
    jitter_epsilon: float = 1e-9
    jitter_mode: str = "symmetric"
    population_csv: str | None = None
    predictions_csv: str | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "score", ScoreKind(str(self.score).upper()).value)
        except ValueError:
            raise ConfigError("score: must be RA or VA") from None
        try:
            object.__setattr__(self, "envelope", tcpr.EnvelopeKind(str(self.envelope).lower()).value)
        except ValueError:
            raise ConfigError("envelope: must be theoretical, linear or quantile") from None
        object.__setattr__(self, "methods", tuple(canonical_method(x) for x in self.methods))
        if self.generator not in ("linear", "logistic", "external"):
            raise ConfigError("generator: must be linear, logistic or external")
        if self.ranker not in ("noisy", "linear_ls"):
            raise ConfigError("ranker: must be noisy or linear_ls")
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha: must lie in (0, 1)")
        if self.generator != "external" and (self.n < 1 or self.m < 1):
            raise ConfigError("n, m: must be >= 1")
        if self.model_sigma < 0:
            raise ConfigError("model_sigma: must be >= 0")
        if self.K < 1:
            raise ConfigError("K: must be >= 1")
        if self.jitter_mode not in ("symmetric", "one_sided"):
            raise ConfigError("jitter_mode: must be symmetric or one_sided")
        if self.generator == "external" and not (self.population_csv and self.predictions_csv):
            raise ConfigError("population_csv, predictions_csv: required for the external generator")
        if self.uses_tcpr and not 0 < self.effective_delta < self.alpha:
            raise ConfigError("delta: TCPR needs 0 < delta < alpha")

    @property
    def effective_delta(self) -> float:
        return self.alpha / 10 if self.delta is None else self.delta

    @property
    def uses_tcpr(self) -> bool:
        return any(m.startswith("TCPR") for m in self.methods)

    def envelope_kinds(self) -> list[tcpr.EnvelopeKind]:
        kinds = []
        for m in self.methods:
            if m.startswith("TCPR"):
                k = tcpr.EnvelopeKind(m.split("-", 1)[1] if "-" in m else self.envelope)
                if k not in kinds:
                    kinds.append(k)
        return kinds

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        d["delta"] = self.effective_delta
        return d


def canonical_method(name: str) -> str:
    raw = str(name).strip()
    base, _, variant = raw.partition("-")
    for known in BASE_METHODS:
        if base.lower() == known.lower():
            if variant:
                if known != "TCPR":
                    break
                try:
                    return f"TCPR-{tcpr.EnvelopeKind(variant.lower()).value}"
                except ValueError:
                    break
            return known
    raise ConfigError(f"methods: unknown method {raw!r}")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, raw: str) -> Any:
    raw = raw.strip()
    kind = _FIELD_TYPES[key]
    if key == "methods":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if raw.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(raw: dict[str, str]) -> tuple[ExperimentConfig, str | None, list[Any]]:
    """Typed config plus the swept axis (if any) and its grid.

    A sweepable key whose value contains commas defines the sweep; at most one
    such key is allowed.
    """
    swept = [k for k, v in raw.items() if k in SWEEPABLE and "," in v]
    if len(swept) > 1:
        raise ConfigError(f"only one swept axis allowed, got {swept}")
    axis = swept[0] if swept else None
    grid: list[Any] = []
    values: dict[str, Any] = {}
    for key, value in raw.items():
        if key == axis:
            grid = [_coerce(key, v) for v in value.split(",") if v.strip()]
            values[key] = grid[0]
        else:
            values[key] = _coerce(key, value)
    try:
        cfg = ExperimentConfig(**values)
        for point in grid:
            dataclasses.replace(cfg, **{axis: point})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, axis, grid


# ---------------------------------------------------------------- seeding


def trial_seed(base_seed: int, trial: int) -> int:
    state = np.random.SeedSequence(base_seed, spawn_key=(trial,)).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


def _stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose,)))


def _method_stream(seed: int, method: str) -> np.random.Generator:
    return _stream(seed, _PURPOSE_METHOD + zlib.crc32(method.encode()))


def _global_stream(base_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(_GLOBAL, *key)))


def fit_envelopes(cfg: ExperimentConfig, n: int, m: int) -> dict[str, tcpr.Envelope]:
    out = {}
    delta = cfg.effective_delta
    for kind in cfg.envelope_kinds():
        key = (1, n, m, round(delta * 1e12), cfg.K, list(tcpr.EnvelopeKind).index(kind))
        tc = tcpr.TcprConfig(delta, cfg.K, kind)
        out[kind.value] = tcpr.fit_envelope(n, m, tc, _global_stream(cfg.seed, *key))
    return out


# ---------------------------------------------------------------- trials


@dataclass
class TrialOutput:
    index: int
    seed: int
    results: list[TrialResult]
    seconds: dict[str, float]
    sets: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


@dataclass
class TrialData:
    pop: Population
    preds: Predictions


def _synthetic_trial_data(cfg: ExperimentConfig, seed: int, syn: datagen.SyntheticConfig) -> TrialData:
    N = cfg.n + cfg.m
    extra = cfg.train_size if cfg.ranker == "linear_ls" else 0
    X, Y = datagen.generate(syn, N + extra, _stream(seed, _PURPOSE_DATA))
    X_pop, Y_pop = X[extra:], Y[extra:]
    if has_ties(Y_pop):
        Y_pop = jitter_ties(Y_pop, cfg.jitter_epsilon, _stream(seed, _PURPOSE_JITTER),
                            symmetric=cfg.jitter_mode == "symmetric")
    pop = split_population(Y_pop, cfg.n, _stream(seed, _PURPOSE_SPLIT))
    ranker_rng = _stream(seed, _PURPOSE_RANKER)
    if cfg.ranker == "noisy":
        preds = datagen.noisy_value_ranker(Y_pop, cfg.model_sigma, ranker_rng, cfg.score)
    else:
        w = datagen.train_linear_ranker(X[:extra], Y[:extra])
        preds = datagen.predict_linear(X_pop, w, ranker_rng, cfg.score)
    return TrialData(pop, preds)


def calibrate(method: str, cfg: ExperimentConfig, data: TrialData, rel_ranks: np.ndarray,
              envelopes: dict[str, tcpr.Envelope], seed: int, true_abs: np.ndarray | None) -> dcr.Threshold:
    """Threshold for one method.  Only ``Oracle`` receives hidden absolute ranks."""
    pop, preds = data.pop, data.preds
    cal, n, m = pop.cal_idx, pop.n, pop.m
    if method == "DCR":
        return dcr.dcr(preds, cal, rel_ranks, n, m, cfg.alpha)
    if method == "MDCR":
        return dcr.mdcr_threshold(preds, cal, rel_ranks, n, m, cfg.alpha, _method_stream(seed, method))
    if method.startswith("TCPR"):
        kind = method.split("-", 1)[1] if "-" in method else cfg.envelope
        proxy = tcpr.proxy_scores(envelopes[kind], preds, cal, rel_ranks, pop.N)
        thr = tcpr.tcpr_threshold(proxy, cfg.alpha, cfg.effective_delta)
        return dataclasses.replace(thr, method=method)
    if method == "Oracle":
        if true_abs is None:
            raise DataError("Oracle needs test y_true values")
        return tcpr.oracle_threshold(scores_at(preds, cal, true_abs[cal]), cfg.alpha)
    raise ConfigError(f"methods: unknown method {method!r}")


def run_trial_on(cfg: ExperimentConfig, data: TrialData, index: int, seed: int,
                 envelopes: dict[str, tcpr.Envelope], keep_sets: bool = False) -> TrialOutput:
    pop, preds = data.pop, data.preds
    rel = calibration_ranks(pop)
    view = rank_view(pop) if pop.has_test_values else None
    true_abs = None if view is None else view.true_abs_ranks
    if view is not None:
        excess = true_abs[pop.cal_idx] - view.rel_calib_ranks
        if excess.min() < 0 or excess.max() > pop.m:
            raise InvariantError("calibration absolute rank outside [R^c, R^c + m]")
    results, seconds, sets = [], {}, {}
    test = pop.test_idx
    for method in cfg.methods:
        if method == "Oracle" and true_abs is None:
            continue
        start = time.perf_counter()
        thr = calibrate(method, cfg, data, rel, envelopes, seed, true_abs)
        seconds[method] = time.perf_counter() - start
        lo, hi = dcr.prediction_sets(preds, test, thr)
        if keep_sets:
            sets[method] = (lo, hi)
        if true_abs is not None:
            res = score_trial(lo, hi, true_abs[test], pop.N, method, thr.value, seed)
            if abs(res.coverage + res.fcp - 1) > 1e-12:
                raise InvariantError("coverage + fcp != 1")
            results.append(res)
        else:
            results.append(TrialResult(method, math.nan, math.nan, float(np.mean(hi - lo + 1)),
                                       float(np.mean(hi - lo + 1)) / pop.N, thr.value, seed))
    return TrialOutput(index, seed, results, seconds, sets)


def _synthetic_trial(args) -> TrialOutput:
    cfg, syn, index, envelopes = args
    seed = trial_seed(cfg.seed, index)
    return run_trial_on(cfg, _synthetic_trial_data(cfg, seed, syn), index, seed, envelopes)


def load_external(population_csv, predictions_csv, kind: ScoreKind | str,
                  rng: np.random.Generator | None = None,
                  n: int | None = None, m: int | None = None) -> tuple[Population, Predictions]:
    """Read a population and aligned predictions; check split sizes if given."""
    pop = read_population_csv(population_csv)
    if n is not None and pop.n != n:
        raise DataError(f"{population_csv}: {pop.n} calibration rows, config says n={n}")
    if m is not None and pop.m != m:
        raise DataError(f"{population_csv}: {pop.m} test rows, config says m={m}")
    cal_values = pop.values[pop.is_cal]
    if has_ties(cal_values) or (pop.has_test_values and has_ties(pop.values)):
        if rng is None:
            raise DataError(f"{population_csv}: tied y_true values")
        values = pop.values.copy()
        known = ~np.isnan(values)
        values[known] = jitter_ties(values[known], 1e-9, rng)
        pop = Population(values, pop.is_cal, pop.item_ids)
    preds = read_predictions_csv(predictions_csv, kind, pop.item_ids, rng)
    if preds.clamped:
        log.warning("%d RA predictions clamped into [1, %d]", preds.clamped, preds.N)
    return pop, preds


# ---------------------------------------------------------------- runs


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list[TrialOutput]
    report: AggregateReport | None
    envelopes: dict[str, tcpr.Envelope]
    population: Population | None = None

    @property
    def results(self) -> list[TrialResult]:
        return [r for t in self.trials for r in t.results]

    def by_method(self, method: str) -> list[TrialResult]:
        return [r for t in self.trials for r in t.results if r.method == method]


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.generator == "external":
        return _run_external(cfg)
    syn = datagen.SyntheticConfig(cfg.generator, cfg.dim, cfg.noise_sigma)
    syn = syn.with_weight(_global_stream(cfg.seed, 0))
    envelopes = fit_envelopes(cfg, cfg.n, cfg.m)
    tasks = [(cfg, syn, t, envelopes) for t in range(cfg.trials)]
    if cfg.workers == 1:
        outputs = [_synthetic_trial(a) for a in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outputs = list(pool.map(_synthetic_trial, tasks, chunksize=max(1, cfg.trials // (4 * cfg.workers))))
    outputs.sort(key=lambda o: o.index)
    report = aggregate([r for o in outputs for r in o.results], cfg.echo())
    return ExperimentResult(cfg, outputs, report, envelopes)


def _run_external(cfg: ExperimentConfig) -> ExperimentResult:
    rng = _global_stream(cfg.seed, 2)
    pop, preds = load_external(cfg.population_csv, cfg.predictions_csv, cfg.score, rng)
    if not pop.has_test_values and "Oracle" in cfg.methods:
        log.warning("test y_true missing; Oracle skipped")
    envelopes = fit_envelopes(cfg, pop.n, pop.m)
    data = TrialData(pop, preds)
    outputs = [run_trial_on(cfg, data, t, trial_seed(cfg.seed, t), envelopes, keep_sets=True)
               for t in range(cfg.trials)]
    report = aggregate([r for o in outputs for r in o.results], cfg.echo()) if pop.has_test_values else None
    return ExperimentResult(cfg, outputs, report, envelopes, pop)


def run_sweep(cfg: ExperimentConfig, axis: str, grid: Sequence[Any]) -> list[tuple[Any, ExperimentResult]]:
    if axis not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {axis!r}")
    if not grid:
        raise ConfigError("empty sweep grid")
    return [(value, run_experiment(dataclasses.replace(cfg, **{axis: value}))) for value in grid]


# ---------------------------------------------------------------- output


def write_trials_csv(result: ExperimentResult, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRIAL_COLUMNS)
        for out in result.trials:
            for r in out.results:
                writer.writerow(trial_row(r))


def write_timings_csv(result: ExperimentResult, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("seed", "method", "seconds"))
        for out in result.trials:
            for method, sec in out.seconds.items():
                writer.writerow((out.seed, method, f"{sec:.6g}"))


def write_sets_csv(result: ExperimentResult, path: Path) -> None:
    pop = result.population
    test_ids = pop.item_ids[pop.test_idx]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("seed", "method", "item_id", "lo", "hi"))
        for out in result.trials:
            for method, (lo, hi) in out.sets.items():
                for item, a, b in zip(test_ids, lo, hi):
                    writer.writerow((out.seed, method, int(item), int(a), int(b)))


def report_dict(result: ExperimentResult) -> dict:
    if result.report is not None:
        d = result.report.to_dict()
    else:
        methods = []
        names = list(dict.fromkeys(r.method for r in result.results))
        for name in names:
            rows = result.by_method(name)
            thr = np.array([r.threshold for r in rows])
            finite = thr[np.isfinite(thr)]
            methods.append({
                "name": name, "coverage_mean": None, "coverage_std": None, "fcp_mean": None,
                "fcp_std": None, "rel_length_mean": float(np.mean([r.relative_length for r in rows])),
                "rel_length_std": None, "threshold_mean": float(finite.mean()) if finite.size else None,
                "inf_threshold_count": int(np.isinf(thr).sum()), "trials": len(rows),
            })
        d = {"config": result.config.echo(), "methods": methods}
    d["envelopes"] = {k: {"param": e.param, "delta": e.delta} for k, e in result.envelopes.items()}
    return d


def write_run_outputs(result: ExperimentResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trials_csv(result, out_dir / "trials.csv")
    write_timings_csv(result, out_dir / "timings.csv")
    (out_dir / "report.json").write_text(json.dumps(report_dict(result), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    if result.population is not None:
        write_sets_csv(result, out_dir / "sets.csv")


SWEEP_METRICS = (("coverage", "coverage"), ("fcp", "fcp"), ("rel_length", "rel_length"), ("set_size", "set_size"))


def sweep_rows(axis_results: list[tuple[Any, ExperimentResult]]) -> list[tuple[str, str, str, str, str]]:
    rows = []
    for value, res in axis_results:
        if res.report is None:
            continue
        for s in res.report.methods:
            for metric, attr in SWEEP_METRICS:
                rows.append((str(value), s.name, metric,
                             format_float(getattr(s, f"{attr}_mean")), format_float(getattr(s, f"{attr}_std"))))
    return rows


def write_sweep_outputs(axis: str, axis_results: list[tuple[Any, ExperimentResult]], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("axis_value", "method", "metric", "mean", "std"))
        writer.writerows(sweep_rows(axis_results))
    reports = [{"axis": axis, "axis_value": v, **report_dict(r)} for v, r in axis_results]
    (out_dir / "reports.json").write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for i, (_, res) in enumerate(axis_results):
        point = out_dir / f"point_{i:02d}"
        point.mkdir(exist_ok=True)
        write_trials_csv(res, point / "trials.csv")
        write_timings_csv(res, point / "timings.csv")
