"""Monte Carlo harness: seeded trials, paired stop/no-stop metrics, sweeps.

Reproducibility contract: every trial is keyed by
``SeedSequence(seed, spawn_key=(point_index, trial_index))`` and each
(trial, block) pair draws from its own spawned substream, so results are
byte-identical for a given seed regardless of thread count or grid
chunking.  Aggregation always runs in trial order.

Paired measurements (with/without the stop rule on identical data) come
from a single full-length run per trial: the monitor never influences
scoring, so the early-stopped run is recovered exactly by replaying the
rule over the recorded epsilon trace.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .calibration import CSV_SCHEMA_LINE, stored_threshold_a
from .codec import (ChannelModel, GeneratorSpec, Trellis, build_trellis,
                    encode_rsc_batch, random_interleaver, transmit)
from .recovery import run_recovery
from .stopping import StoppingMonitor, ThresholdPair, first_stop_iteration

THREADS_ENV_VAR = "TURBOPI_THREADS"


class ConfigError(ValueError):
    """Bad configuration file or option set (a usage error, exit code 2)."""


def default_thread_count() -> int:
    """Thread count from the environment, 1 if unset or unparseable."""
    raw = os.environ.get(THREADS_ENV_VAR, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parse_config_file(path: str) -> dict[str, str]:
    """Read a flat key=value config file (UTF-8, '#' comments)."""
    mapping: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        mapping[key] = value.strip()
    return mapping


def _parse_bool(value: str, key: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r}: expected a boolean, got {value!r}")


def _parse_float_list(value: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in value.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def _parse_int_list(value: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in value.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """One simulation campaign: code, channel grid, trial budget, stop rule."""

    block_length: int = 512
    num_blocks: tuple[int, ...] = (25,)
    snr_db: tuple[float, ...] = (0.0,)
    trials: int = 100
    seed: int = 0
    feedforward: int = 0b10111
    feedback: int = 0b11001
    memory: int = 4
    early_stop: bool = True
    threshold_a: float | None = None    # None -> stored calibration table
    threshold_b: int = 5
    candidate_policy: str = "all"
    failure_run_length: int | None = None   # None -> memory
    threads: int | None = None              # None -> env var / 1
    out: str | None = None

    # config-file keys <-> fields; keys mirror the CLI flags
    _KEYS = {
        "K": "block_length", "M": "num_blocks", "snr_db": "snr_db",
        "trials": "trials", "seed": "seed", "ff": "feedforward",
        "fb": "feedback", "memory": "memory", "early_stop": "early_stop",
        "A": "threshold_a", "B": "threshold_b", "policy": "candidate_policy",
        "failure_run_length": "failure_run_length", "threads": "threads",
        "out": "out",
    }

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "ExperimentConfig":
        kwargs = {}
        for key, value in mapping.items():
            if key not in cls._KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            name = cls._KEYS[key]
            try:
                if key == "M":
                    kwargs[name] = _parse_int_list(value, key)
                elif key == "snr_db":
                    kwargs[name] = _parse_float_list(value, key)
                elif key == "early_stop":
                    kwargs[name] = _parse_bool(value, key)
                elif key == "A":
                    kwargs[name] = None if value.strip().lower() == "auto" \
                        else float(value)
                elif key in ("policy", "out"):
                    kwargs[name] = value.strip()
                elif key in ("threads", "failure_run_length"):
                    kwargs[name] = int(value)
                else:
                    kwargs[name] = int(value)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        config = cls(**kwargs)
        config.validate()
        return config

    def validate(self) -> None:
        if self.block_length < 4:
            raise ConfigError("K must be >= 4")
        if not self.num_blocks or min(self.num_blocks) < 1:
            raise ConfigError("M must contain positive block counts")
        if not self.snr_db:
            raise ConfigError("snr_db must contain at least one value")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.threshold_b < 1:
            raise ConfigError("B must be >= 1")
        if self.threshold_a is not None and not self.threshold_a > 0:
            raise ConfigError("A must be > 0")
        if self.candidate_policy not in ("all", "unused"):
            raise ConfigError("policy must be 'all' or 'unused'")
        try:
            GeneratorSpec(self.feedforward, self.feedback, self.memory)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(self.feedforward, self.feedback, self.memory)

    def resolve_thresholds(self) -> ThresholdPair | None:
        """Concrete (a, b) before any trial runs; None when stopping is off."""
        if not self.early_stop:
            return None
        a = self.threshold_a
        if a is None:
            a = stored_threshold_a(self.block_length)
        return ThresholdPair(a=a, b=self.threshold_b)

    def resolve_threads(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        return default_thread_count()

    @property
    def run_length_for_failure(self) -> int:
        return self.failure_run_length or self.memory


@dataclass
class TrialRecord:
    """Everything measured in one recovery trial."""

    snr_db: float
    num_blocks: int
    true_permutation: np.ndarray
    recovered: np.ndarray
    stop_iteration: int
    stopped_early: bool
    correct_flags: np.ndarray
    epsilons: np.ndarray
    failure_onset: int | None

    @property
    def n_correct(self) -> int:
        return int(self.correct_flags.sum())

    @property
    def wasted(self) -> int:
        """Attempted-but-incorrect iterations."""
        return self.stop_iteration - self.n_correct

    @property
    def wasted_after_failure(self) -> int | None:
        """W = i2 - i1 when the run stopped after the failure onset."""
        if self.failure_onset is None or self.stop_iteration <= self.failure_onset:
            return None
        return self.stop_iteration - self.failure_onset

    @property
    def premature_loss(self) -> int | None:
        """L = i1 - i2 when the run stopped at or before the failure onset."""
        if self.failure_onset is None or self.stop_iteration > self.failure_onset:
            return None
        return self.failure_onset - self.stop_iteration


def failure_onset(flags, run_length: int) -> int | None:
    """Iterations survived before the first run of ``run_length`` errors.

    Returns the 0-based count of iterations preceding the first window of
    ``run_length`` consecutive wrong results, or None if no such window
    exists.
    """
    if run_length < 1:
        raise ValueError("run_length must be >= 1")
    flags = np.asarray(flags, dtype=bool)
    if flags.size < run_length:
        return None
    wrong = (~flags).astype(np.int64)
    window = np.convolve(wrong, np.ones(run_length, dtype=np.int64), "valid")
    hits = np.flatnonzero(window == run_length)
    return int(hits[0]) if hits.size else None


def _has_run(flags: np.ndarray, run_length: int) -> bool:
    if flags.size < run_length:
        return False
    window = np.convolve(flags.astype(np.int64),
                         np.ones(run_length, dtype=np.int64), "valid")
    return bool((window == run_length).any())


def make_observations(trellis: Trellis, channel: ChannelModel,
                      pi: np.ndarray, num_blocks: int,
                      block_streams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw M random blocks through the transmitter; returns (x, y, z)."""
    k = pi.size
    x = np.empty((num_blocks, k))
    y = np.empty((num_blocks, k))
    z = np.empty((num_blocks, k))
    # Per-stream draw order is fixed (bits, then x/y/z noise) so the bits
    # can be drawn up front and both encoders run over the whole batch.
    rngs = [np.random.default_rng(s) for s in block_streams]
    u = np.empty((num_blocks, k), dtype=np.int64)
    for s in range(num_blocks):
        u[s] = rngs[s].integers(0, 2, size=k)
    v, _ = encode_rsc_batch(trellis, u)
    w, _ = encode_rsc_batch(trellis, u[:, pi])
    for s in range(num_blocks):
        x[s] = transmit(u[s], channel, rngs[s])
        y[s] = transmit(v[s], channel, rngs[s])
        z[s] = transmit(w[s], channel, rngs[s])
    return x, y, z


def _child_sequences(parent: np.random.SeedSequence, n: int):
    """First ``n`` spawned children, without mutating the parent.

    Matches ``SeedSequence.spawn`` on a freshly constructed sequence, so
    the same trial seed object can key repeated runs of identical data.
    """
    return [np.random.SeedSequence(entropy=parent.entropy,
                                   spawn_key=parent.spawn_key + (i,),
                                   pool_size=parent.pool_size)
            for i in range(n)]


def run_trial(config: ExperimentConfig, snr_db: float, num_blocks: int,
              trial_seed: np.random.SeedSequence,
              early_stop: bool | None = None,
              keep_trace: bool = True) -> TrialRecord:
    """One seeded end-to-end trial: draw data, recover, grade.

    ``early_stop`` overrides the config flag (used for paired runs); the
    live monitor is attached when it resolves to True.
    """
    trellis = build_trellis(config.generator_spec())
    channel = ChannelModel.from_snr_db(snr_db)
    streams = _child_sequences(trial_seed, num_blocks + 1)
    rng_pi = np.random.default_rng(streams[0])
    pi = random_interleaver(config.block_length, rng_pi)
    x, _, z = make_observations(trellis, channel, pi, num_blocks, streams[1:])

    use_monitor = config.early_stop if early_stop is None else early_stop
    monitor = None
    if use_monitor:
        thresholds = config.resolve_thresholds() or ThresholdPair(
            stored_threshold_a(config.block_length), config.threshold_b)
        monitor = StoppingMonitor(thresholds)
    result = run_recovery(trellis, channel, x, z, monitor=monitor,
                          candidate_policy=config.candidate_policy,
                          keep_trace=keep_trace)
    flags = result.permutation == pi[: result.stop_iteration]
    return TrialRecord(
        snr_db=snr_db,
        num_blocks=num_blocks,
        true_permutation=pi,
        recovered=result.permutation,
        stop_iteration=result.stop_iteration,
        stopped_early=result.stopped_early,
        correct_flags=flags,
        epsilons=result.epsilon_trace,
        failure_onset=failure_onset(flags, config.run_length_for_failure),
    )


def replay_early_stop(record: TrialRecord, thresholds: ThresholdPair,
                      run_length: int) -> TrialRecord:
    """Truncate a full-length record at the replayed stop iteration."""
    stop = first_stop_iteration(record.epsilons, thresholds)
    stopped = stop is not None
    i2 = stop if stopped else record.stop_iteration
    flags = record.correct_flags[:i2]
    return TrialRecord(
        snr_db=record.snr_db,
        num_blocks=record.num_blocks,
        true_permutation=record.true_permutation,
        recovered=record.recovered[:i2],
        stop_iteration=i2,
        stopped_early=stopped,
        correct_flags=flags,
        epsilons=record.epsilons[:i2],
        failure_onset=failure_onset(flags, run_length),
    )


def correct_probability(records, block_length: int) -> float:
    """Mean fraction of correctly recovered values (unattempted count as wrong)."""
    return float(np.mean([r.n_correct / block_length for r in records]))


def wasted_iterations(records) -> float:
    """Mean count of attempted-but-incorrect iterations."""
    return float(np.mean([r.wasted for r in records]))


def _map_trials(fn, seeds, threads: int):
    if threads <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seeds))


def trial_seeds(seed: int, point_index: int, trials: int):
    return [np.random.SeedSequence(seed, spawn_key=(point_index, t))
            for t in range(trials)]


@dataclass
class PointResult:
    """All trial records of one (snr, M) grid point."""

    snr_db: float
    num_blocks: int
    nes_records: list[TrialRecord]
    es_records: list[TrialRecord] | None
    thresholds: ThresholdPair | None


def run_point(config: ExperimentConfig, snr_db: float, num_blocks: int,
              point_index: int) -> PointResult:
    """Run all trials of one grid point, with paired stop-rule replay.

    Every trial runs once to full length (monitor off, trace kept); when
    the config enables early stopping the stopped twin of each record is
    derived by replaying the rule on the recorded trace, so both arms see
    identical data by construction.
    """
    seeds = trial_seeds(config.seed, point_index, config.trials)
    fn = lambda s: run_trial(config, snr_db, num_blocks, s,
                             early_stop=False, keep_trace=True)
    nes = _map_trials(fn, seeds, config.resolve_threads())
    thresholds = config.resolve_thresholds()
    es = None
    if thresholds is not None:
        es = [replay_early_stop(r, thresholds, config.run_length_for_failure)
              for r in nes]
    return PointResult(snr_db=snr_db, num_blocks=num_blocks,
                       nes_records=nes, es_records=es, thresholds=thresholds)


def _halfwidth(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / math.sqrt(values.size))


@dataclass
class SweepRow:
    """One CSV row: a grid point under one monitor arm."""

    snr_db: float
    num_blocks: int
    a: float | None
    b: int | None
    monitor: str            # "es" or "nes"
    trials: int
    p_c: float
    p_c_halfwidth: float
    e_w: float
    e_w_halfwidth: float
    delta_p_c: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    points: list[PointResult]


def summarize_point(point: PointResult, block_length: int) -> list[SweepRow]:
    rows = []
    nes_pc = correct_probability(point.nes_records, block_length)
    es_pc = None
    delta = 0.0
    if point.es_records is not None:
        es_pc = correct_probability(point.es_records, block_length)
        delta = nes_pc - es_pc
    arms = [("nes", point.nes_records)]
    if point.es_records is not None:
        arms.insert(0, ("es", point.es_records))
    for name, records in arms:
        pc_samples = [r.n_correct / block_length for r in records]
        w_samples = [r.wasted for r in records]
        rows.append(SweepRow(
            snr_db=point.snr_db,
            num_blocks=point.num_blocks,
            a=point.thresholds.a if point.thresholds else None,
            b=point.thresholds.b if point.thresholds else None,
            monitor=name,
            trials=len(records),
            p_c=float(np.mean(pc_samples)),
            p_c_halfwidth=_halfwidth(pc_samples),
            e_w=float(np.mean(w_samples)),
            e_w_halfwidth=_halfwidth(w_samples),
            delta_p_c=delta,
        ))
    return rows


def sweep(config: ExperimentConfig) -> SweepResult:
    """Grid Monte Carlo over every (snr_db, M) pair in the config."""
    rows: list[SweepRow] = []
    points: list[PointResult] = []
    point_index = 0
    for snr_db in config.snr_db:
        for m in config.num_blocks:
            point = run_point(config, snr_db, m, point_index)
            points.append(point)
            rows.extend(summarize_point(point, config.block_length))
            point_index += 1
    result = SweepResult(rows=rows, points=points)
    if config.out:
        write_sweep_csv(result, config.out)
    return result


_SWEEP_FIELDS = ["snr_db", "M", "A", "B", "monitor", "trials", "P_C",
                 "P_C_halfwidth", "E_W", "E_W_halfwidth", "delta_P_C"]


def write_sweep_csv(result: SweepResult, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(CSV_SCHEMA_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(_SWEEP_FIELDS)
        for row in result.rows:
            writer.writerow([
                repr(row.snr_db), row.num_blocks,
                "" if row.a is None else repr(float(row.a)),
                "" if row.b is None else row.b,
                row.monitor, row.trials,
                repr(row.p_c), repr(row.p_c_halfwidth),
                repr(row.e_w), repr(row.e_w_halfwidth),
                repr(row.delta_p_c),
            ])


@dataclass(frozen=True)
class ReturnProbabilityResult:
    """Observed returns to the correct path after a detected failure."""

    failures_examined: int
    returns_observed: int
    run_length: int
    bound: float            # 1 / K**(run_length - 1)


def return_probability_experiment(config: ExperimentConfig,
                                  run_length: int | None = None,
                                  min_failures: int = 200,
                                  max_trials: int = 5000) -> ReturnProbabilityResult:
    """Count post-failure returns across failed full-length trials.

    A trial has failed once ``run_length`` consecutive wrong results
    appear; it counts as returned if ``run_length`` consecutive correct
    results show up after that window.  Runs (at the first configured
    grid point, monitor off) until ``min_failures`` failed trials are
    examined.
    """
    d = run_length or config.run_length_for_failure
    snr_db = config.snr_db[0]
    m = config.num_blocks[0]
    failures = 0
    returns = 0
    trial = 0
    while failures < min_failures and trial < max_trials:
        seed = np.random.SeedSequence(config.seed, spawn_key=(0, trial))
        record = run_trial(config, snr_db, m, seed, early_stop=False,
                           keep_trace=False)
        trial += 1
        onset = failure_onset(record.correct_flags, d)
        if onset is None:
            continue
        failures += 1
        if _has_run(record.correct_flags[onset + d:], d):
            returns += 1
    if failures < min_failures:
        raise RuntimeError(
            f"only {failures} failed trials in {max_trials} attempts")
    return ReturnProbabilityResult(
        failures_examined=failures,
        returns_observed=returns,
        run_length=d,
        bound=1.0 / config.block_length ** (d - 1),
    )
