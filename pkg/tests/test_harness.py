"""Simulation harness: config parsing, seeded trials, pairing, sweeps."""

import numpy as np
import pytest

from turbopi.codec import (ChannelModel, GeneratorSpec, build_trellis,
                           encode_rsc, random_interleaver, transmit)
from turbopi.harness import (THREADS_ENV_VAR, ConfigError, ExperimentConfig,
                             TrialRecord, correct_probability,
                             default_thread_count, failure_onset,
                             make_observations, parse_config_file,
                             replay_early_stop, return_probability_experiment,
                             run_point, run_trial, sweep, trial_seeds,
                             wasted_iterations)
from turbopi.stopping import ThresholdPair


class TestDefaultThreadCount:
    def test_unset(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
        assert default_thread_count() == 1

    def test_set(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "3")
        assert default_thread_count() == 3

    def test_unparseable(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "lots")
        assert default_thread_count() == 1

    def test_clamped_to_one(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "0")
        assert default_thread_count() == 1


class TestParseConfigFile:
    def test_valid_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# campaign settings\n"
            "K = 512\n"
            "\n"
            "snr_db = -2.0, -1.0   # grid\n"
            "early_stop = true\n")
        assert parse_config_file(str(path)) == {
            "K": "512", "snr_db": "-2.0, -1.0", "early_stop": "true"}

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config_file(str(tmp_path / "absent.cfg"))

    def test_line_without_equals(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("K = 512\njust words\n")
        with pytest.raises(ConfigError, match=r"bad\.cfg:2"):
            parse_config_file(str(path))

    def test_empty_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("= 512\n")
        with pytest.raises(ConfigError, match="empty key"):
            parse_config_file(str(path))


class TestExperimentConfig:
    def test_from_mapping_full(self):
        config = ExperimentConfig.from_mapping({
            "K": "64", "M": "10,25", "snr_db": "0.0,-1.5", "trials": "7",
            "seed": "3", "ff": "7", "fb": "5", "memory": "2",
            "early_stop": "off", "A": "3.2", "B": "4", "policy": "unused",
            "failure_run_length": "3", "threads": "2", "out": "rows.csv",
        })
        assert config.block_length == 64
        assert config.num_blocks == (10, 25)
        assert config.snr_db == (0.0, -1.5)
        assert config.trials == 7
        assert config.feedforward == 7 and config.feedback == 5
        assert config.early_stop is False
        assert config.threshold_a == 3.2 and config.threshold_b == 4
        assert config.candidate_policy == "unused"
        assert config.failure_run_length == 3
        assert config.threads == 2
        assert config.out == "rows.csv"

    def test_auto_threshold(self):
        config = ExperimentConfig.from_mapping({"A": "auto"})
        assert config.threshold_a is None

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            ExperimentConfig.from_mapping({"blocks": "10"})

    @pytest.mark.parametrize("mapping", [{"K": "lots"},
                                         {"early_stop": "maybe"},
                                         {"M": "4,x"},
                                         {"snr_db": "zero"},
                                         {"A": "none"}])
    def test_bad_values(self, mapping):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping(mapping)

    @pytest.mark.parametrize("kwargs", [
        {"block_length": 3},
        {"num_blocks": ()},
        {"num_blocks": (0,)},
        {"snr_db": ()},
        {"trials": 0},
        {"threshold_b": 0},
        {"threshold_a": -1.0},
        {"candidate_policy": "best"},
        {"feedback": 0b10},          # feedback without the unit tap
    ])
    def test_validate_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kwargs).validate()

    def test_resolve_thresholds(self):
        off = ExperimentConfig(early_stop=False)
        assert off.resolve_thresholds() is None
        auto = ExperimentConfig(block_length=512)
        assert auto.resolve_thresholds() == ThresholdPair(a=3.48, b=5)
        explicit = ExperimentConfig(threshold_a=2.5, threshold_b=3)
        assert explicit.resolve_thresholds() == ThresholdPair(a=2.5, b=3)

    def test_resolve_threads(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "5")
        assert ExperimentConfig().resolve_threads() == 5
        assert ExperimentConfig(threads=2).resolve_threads() == 2
        assert ExperimentConfig(threads=0).resolve_threads() == 1

    def test_failure_run_length_defaults_to_memory(self):
        assert ExperimentConfig(memory=4).run_length_for_failure == 4
        assert ExperimentConfig(failure_run_length=2).run_length_for_failure \
            == 2


class TestFailureOnset:
    def test_no_failure(self):
        assert failure_onset([True] * 8, 3) is None

    def test_hand_cases(self):
        assert failure_onset([True, True, False, False, False], 3) == 2
        assert failure_onset([False, True, False, False], 2) == 2
        assert failure_onset([False, False], 2) == 0

    def test_short_trace(self):
        assert failure_onset([False], 2) is None

    def test_validation(self):
        with pytest.raises(ValueError):
            failure_onset([True, False], 0)


def fake_record(flags, stop=None, onset="auto", k=None):
    flags = np.asarray(flags, dtype=bool)
    stop = flags.size if stop is None else stop
    if onset == "auto":
        onset = failure_onset(flags, 2)
    return TrialRecord(
        snr_db=0.0, num_blocks=1,
        true_permutation=np.arange(k or flags.size),
        recovered=np.flatnonzero(flags), stop_iteration=stop,
        stopped_early=False, correct_flags=flags,
        epsilons=np.full(flags.size, np.nan), failure_onset=onset)


class TestRecordMetrics:
    def test_correct_probability(self):
        records = [fake_record([True] * 4), fake_record([True, True, False,
                                                         False])]
        assert correct_probability(records, 4) == 0.75

    def test_unattempted_positions_count_as_wrong(self):
        records = [fake_record([True, True], stop=2, k=8)]
        assert correct_probability(records, 8) == 0.25

    def test_wasted_iterations(self):
        records = [fake_record([True] * 4 + [False] * 6)]
        assert wasted_iterations(records) == 6.0

    def test_wasted_after_failure(self):
        record = fake_record([True] * 3 + [False] * 7, onset=3)
        assert record.wasted_after_failure == 7
        assert record.premature_loss is None

    def test_premature_loss(self):
        record = fake_record([True] * 5, stop=2, onset=3)
        assert record.premature_loss == 1
        assert record.wasted_after_failure is None

    def test_clean_run_has_neither(self):
        record = fake_record([True] * 5, onset=None)
        assert record.wasted_after_failure is None
        assert record.premature_loss is None


class TestMakeObservations:
    def test_matches_scalar_reference_exactly(self):
        trellis = build_trellis(GeneratorSpec(0b10111, 0b11001, 4))
        channel = ChannelModel.from_snr_db(-1.0)
        k, m = 32, 5
        streams = np.random.SeedSequence(123, spawn_key=(0, 0)).spawn(m + 1)
        pi = random_interleaver(k, np.random.default_rng(streams[0]))

        x, y, z = make_observations(trellis, channel, pi, m, streams[1:])

        for s in range(m):
            rng = np.random.default_rng(streams[1 + s])
            u = rng.integers(0, 2, size=k)
            v, _ = encode_rsc(trellis, u)
            w, _ = encode_rsc(trellis, u[pi])
            assert np.array_equal(x[s], transmit(u, channel, rng))
            assert np.array_equal(y[s], transmit(v, channel, rng))
            assert np.array_equal(z[s], transmit(w, channel, rng))


CLEAN = ExperimentConfig(block_length=48, num_blocks=(12,), snr_db=(8.0,),
                         trials=4, threshold_a=3.0, threshold_b=5)
NOISY = ExperimentConfig(block_length=64, num_blocks=(4,), snr_db=(-5.0,),
                         trials=6, threshold_a=3.2, threshold_b=5)


class TestRunTrial:
    def test_clean_channel_full_recovery(self):
        seed = np.random.SeedSequence(0, spawn_key=(0, 0))
        record = run_trial(CLEAN, 8.0, 12, seed)
        assert record.n_correct == 48
        assert not record.stopped_early
        assert record.stop_iteration == 48
        assert record.wasted == 0
        assert record.failure_onset is None
        assert np.array_equal(record.recovered,
                              record.true_permutation)

    def test_same_seed_reproduces(self):
        seed = np.random.SeedSequence(5, spawn_key=(1, 2))
        a = run_trial(NOISY, -5.0, 4, seed)
        b = run_trial(NOISY, -5.0, 4, seed)
        assert np.array_equal(a.recovered, b.recovered)
        assert np.array_equal(a.epsilons, b.epsilons, equal_nan=True)
        assert a.stop_iteration == b.stop_iteration

    def test_monitor_override(self):
        seed = np.random.SeedSequence(5, spawn_key=(1, 3))
        free = run_trial(NOISY, -5.0, 4, seed, early_stop=False)
        assert free.stop_iteration == 64
        assert not free.stopped_early

    def test_live_monitor_equals_replayed_rule(self):
        thresholds = ThresholdPair(a=3.2, b=5)
        for t in range(6):
            seed = np.random.SeedSequence(5, spawn_key=(0, t))
            live = run_trial(NOISY, -5.0, 4, seed, early_stop=True)
            full = run_trial(NOISY, -5.0, 4, seed, early_stop=False)
            twin = replay_early_stop(full, thresholds, 4)
            assert live.stop_iteration == twin.stop_iteration
            assert live.stopped_early == twin.stopped_early
            assert np.array_equal(live.recovered, twin.recovered)
            assert np.array_equal(live.correct_flags, twin.correct_flags)
            assert live.failure_onset == twin.failure_onset


class TestRunPoint:
    def test_paired_arms_share_data(self):
        point = run_point(NOISY, -5.0, 4, point_index=0)
        assert len(point.nes_records) == len(point.es_records) == 6
        assert point.thresholds == ThresholdPair(a=3.2, b=5)
        for nes, es in zip(point.nes_records, point.es_records):
            assert es.stop_iteration <= nes.stop_iteration
            assert np.array_equal(es.recovered,
                                  nes.recovered[:es.stop_iteration])
            assert np.array_equal(
                es.epsilons, nes.epsilons[:es.stop_iteration],
                equal_nan=True)

    def test_monitor_off_leaves_single_arm(self):
        config = ExperimentConfig(block_length=16, num_blocks=(2,),
                                  snr_db=(0.0,), trials=2, early_stop=False)
        point = run_point(config, 0.0, 2, point_index=0)
        assert point.es_records is None
        assert point.thresholds is None

    def test_more_blocks_never_hurt(self):
        # more observations can only sharpen the scores
        config = ExperimentConfig(block_length=64, num_blocks=(10, 50),
                                  snr_db=(0.0,), trials=200,
                                  early_stop=False, seed=17)
        small = run_point(config, 0.0, 10, point_index=0)
        large = run_point(config, 0.0, 50, point_index=1)
        p_small = correct_probability(small.nes_records, 64)
        p_large = correct_probability(large.nes_records, 64)
        assert p_large >= p_small


class TestSweep:
    def test_csv_schema_and_rows(self, tmp_path):
        out = tmp_path / "rows.csv"
        config = ExperimentConfig(block_length=16, num_blocks=(2, 3),
                                  snr_db=(0.0,), trials=2, threshold_a=3.0,
                                  out=str(out))
        result = sweep(config)
        assert len(result.points) == 2
        assert len(result.rows) == 4          # es + nes per grid point
        lines = out.read_text().splitlines()
        assert lines[0] == "# schema=1"
        assert lines[1].split(",")[:6] == ["snr_db", "M", "A", "B",
                                           "monitor", "trials"]
        assert len(lines) == 2 + 4
        assert lines[2].split(",")[4] == "es"
        assert lines[3].split(",")[4] == "nes"

    def test_deterministic_across_runs_and_threads(self, tmp_path):
        outs = []
        for tag, threads in (("a", 1), ("b", 1), ("c", 3)):
            out = tmp_path / f"{tag}.csv"
            config = ExperimentConfig(block_length=24, num_blocks=(3,),
                                      snr_db=(0.0, -4.0), trials=5,
                                      threshold_a=3.0, threads=threads,
                                      out=str(out), seed=9)
            sweep(config)
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_trial_seeds_are_distinct(self):
        seeds = trial_seeds(0, 0, 8) + trial_seeds(0, 1, 8)
        draws = {np.random.default_rng(s).integers(0, 1 << 62)
                 for s in seeds}
        assert len(draws) == 16


class TestReturnProbability:
    def test_insufficient_failures(self):
        with pytest.raises(RuntimeError, match="failed trials"):
            return_probability_experiment(CLEAN, min_failures=3,
                                          max_trials=3)

    def test_failed_state_bound_and_counts(self):
        config = ExperimentConfig(block_length=100, num_blocks=(2,),
                                  snr_db=(-9.0,), trials=1,
                                  failure_run_length=3, early_stop=False)
        result = return_probability_experiment(config, min_failures=5,
                                               max_trials=20)
        assert result.failures_examined >= 5
        assert result.run_length == 3
        assert result.bound == pytest.approx(1e-4)
        assert 0 <= result.returns_observed <= result.failures_examined
