import numpy as np
import pytest

from flagtuner import (
    CompilerTarget,
    Dataset,
    FlagCatalog,
    MeasurementCache,
    Prediction,
    Sequence,
    SyntheticLandscape,
    TunerConfig,
    build_model,
    expected_improvement,
    fit,
    predict,
    select_by_distribution,
    select_by_ei,
)
from flagtuner.model_builder import PoolExhaustedError

from conftest import prepared_run, random_landscape


def toy_forest():
    """Small forest whose predictions differ between the two candidates."""
    ds = Dataset()
    ds.add(Sequence([0, 0]), 2.0)
    ds.add(Sequence([1, 1]), 1.0)
    ds.add(Sequence([1, 0]), 1.4)
    return fit(ds, trees=30, rng=np.random.default_rng(0))


def constant_forest():
    ds = Dataset()
    ds.add(Sequence([0, 0]), 3.7)
    ds.add(Sequence([1, 1]), 3.7)
    return fit(ds, trees=10, rng=np.random.default_rng(0))


class TestSelectByEi:
    def test_single_candidate(self):
        forest = toy_forest()
        only = Sequence([0, 1])
        assert select_by_ei([only], forest, 1.0) == only

    def test_matches_scalar_argmax(self):
        forest = toy_forest()
        candidates = [Sequence([0, 1]), Sequence([1, 0]), Sequence([0, 0]), Sequence([1, 1])]
        f_best = 1.0
        eis = [expected_improvement(predict(forest, c), f_best) for c in candidates]
        assert select_by_ei(candidates, forest, f_best) == candidates[int(np.argmax(eis))]

    def test_ties_break_to_earliest(self):
        forest = constant_forest()
        candidates = [Sequence([0, 1]), Sequence([1, 0])]
        assert select_by_ei(candidates, forest, 4.0) == candidates[0]


class TestSelectByDistribution:
    def test_single_candidate_certain(self):
        forest = toy_forest()
        only = Sequence([0, 1])
        pick = select_by_distribution([only], forest, 1.0, np.random.default_rng(0), set())
        assert pick == only

    def test_two_candidate_rank_weights(self):
        # lower-EI candidate must come back with probability 2/3
        forest = toy_forest()
        candidates = [Sequence([0, 1]), Sequence([1, 0])]
        f_best = 1.0
        eis = [expected_improvement(predict(forest, c), f_best) for c in candidates]
        assert eis[0] != eis[1]
        low = candidates[int(np.argmin(eis))]
        rng = np.random.default_rng(404)
        hits = sum(
            select_by_distribution(candidates, forest, f_best, rng, set()) == low
            for _ in range(10_000)
        )
        assert hits / 10_000 == pytest.approx(2.0 / 3.0, abs=0.02)

    def test_already_taken_candidates_are_skipped(self):
        forest = toy_forest()
        candidates = [Sequence([0, 1]), Sequence([1, 0])]
        taken = {candidates[0]}
        rng = np.random.default_rng(7)
        for _ in range(50):
            assert select_by_distribution(candidates, forest, 1.0, rng, taken) == candidates[1]

    def test_exhausted_pool_is_an_error(self):
        forest = toy_forest()
        candidates = [Sequence([0, 1]), Sequence([1, 0])]
        with pytest.raises(PoolExhaustedError):
            select_by_distribution(candidates, forest, 1.0, np.random.default_rng(0), set(candidates))


class TestBuildModel:
    def test_terminates_within_budget_and_reproduces(self):
        landscape = random_landscape(8, seed=70)
        cfg = TunerConfig(rng_seed=7, time_budget_s=600)

        def run():
            cache, budget = prepared_run(landscape, cfg)
            state = build_model(landscape, cfg, cfg.rng(), cache, budget)
            return state

        first = run()
        again = run()
        assert 2 <= len(first.dataset) <= cfg.max_training
        bits = [s.to_bitstring() for s, _ in first.dataset]
        assert bits == [s.to_bitstring() for s, _ in again.dataset]
        assert first.enh_accuracies == again.enh_accuracies

    def test_constant_landscape_stops_after_one_ei_pick(self):
        landscape = SyntheticLandscape(n=6, base_time_s=2.0)
        cfg = TunerConfig(rng_seed=1, time_budget_s=600)
        cache, budget = prepared_run(landscape, cfg)
        state = build_model(landscape, cfg, cfg.rng(), cache, budget)
        assert state.enh_accuracies == [1.0]
        assert len(state.dataset) == cfg.ini_size + 1
        picks = [e["picked_by"] for e in state.phase_log]
        assert picks.count("roulette") == 0

    def test_easy_linear_landscape_exits_accurate_and_small(self):
        landscape = SyntheticLandscape(
            n=4, linear_weights=[-0.06, 0.08, -0.05, 0.04], base_time_s=2.0
        )
        cfg = TunerConfig(rng_seed=3, time_budget_s=600)
        cache, budget = prepared_run(landscape, cfg)
        state = build_model(landscape, cfg, cfg.rng(), cache, budget)
        assert float(np.mean(state.enh_accuracies)) > cfg.acc_threshold_stop
        assert len(state.dataset) < cfg.max_training

    def test_each_pass_adds_one_or_two_rows(self):
        landscape = random_landscape(10, seed=4, traps=1)
        cfg = TunerConfig(rng_seed=11, time_budget_s=600, max_training=20)
        cache, budget = prepared_run(landscape, cfg)
        state = build_model(landscape, cfg, cfg.rng(), cache, budget)

        events = [e for e in state.phase_log if e["phase"] == "enhance"]
        passes = []
        for e in events:
            if e["picked_by"] == "ei":
                passes.append([e])
            else:
                passes[-1].append(e)
        assert passes, "expected at least one enhancement pass"
        size = cfg.ini_size
        for group in passes:
            assert 1 <= len(group) <= 2
            acc = group[0]["acc"]
            took_roulette = len(group) == 2
            # the diversity pick follows a sub-threshold accuracy unless the
            # row budget was already full
            if took_roulette:
                assert acc < cfg.acc_threshold_select
            elif acc < cfg.acc_threshold_select:
                assert size + 1 >= cfg.max_training
            size += len(group)
        assert size == len(state.dataset) <= cfg.max_training

    def test_f_best_tracks_dataset_minimum(self, monkeypatch):
        from flagtuner import model_builder, surrogate

        landscape = random_landscape(8, seed=21)
        cfg = TunerConfig(rng_seed=2, time_budget_s=600, max_training=12)
        cache, budget = prepared_run(landscape, cfg)

        captured = []
        original = surrogate.expected_improvement_batch

        def spy(means, variances, f_best):
            captured.append(f_best)
            return original(means, variances, f_best)

        monkeypatch.setattr(model_builder.surrogate, "expected_improvement_batch", spy)
        state = build_model(landscape, cfg, cfg.rng(), cache, budget)

        mins = []
        times = [t for _, t in state.dataset]
        for k in range(cfg.ini_size, len(times) + 1):
            mins.append(min(times[:k]))
        assert captured, "EI was never evaluated"
        assert set(np.round(captured, 12)) <= set(np.round(mins, 12))

    def test_high_only_never_takes_roulette(self):
        landscape = random_landscape(10, seed=9, traps=2)
        cfg = TunerConfig(rng_seed=5, time_budget_s=600, max_training=20)
        cache, budget = prepared_run(landscape, cfg)
        state = build_model(landscape, cfg, cfg.rng(), cache, budget, variant="high_only")
        assert all(e["picked_by"] != "roulette" for e in state.phase_log)
        assert any(a < cfg.acc_threshold_select for a in state.enh_accuracies)

    def test_one_time_fills_budget_randomly_and_fits_once(self):
        landscape = random_landscape(10, seed=13)
        cfg = TunerConfig(rng_seed=5, time_budget_s=600)
        cache, budget = prepared_run(landscape, cfg)
        state = build_model(landscape, cfg, cfg.rng(), cache, budget, variant="one_time")
        assert len(state.dataset) == cfg.max_training
        assert state.enh_accuracies == []
        assert all(e["picked_by"] == "random" for e in state.phase_log)

    def test_all_penalized_initial_dataset_aborts(self, tmp_path):
        src = tmp_path / "broken.c"
        src.write_text("not c at all")
        target = CompilerTarget(
            compile_cmd_template="/bin/false {FLAGS} {SRC} -o {OUT}",
            run_cmd_template="{BIN}",
            sources=[str(src)],
            workdir=str(tmp_path),
            catalog=FlagCatalog.synthetic(4),
        )
        cfg = TunerConfig(rng_seed=0, time_budget_s=600)
        cache = MeasurementCache(4)
        cache.baseline_time_s = 1.0  # pretend the baseline ran elsewhere
        with pytest.raises(RuntimeError, match="initial measurement failed"):
            build_model(target, cfg, cfg.rng(), cache)

    def test_no_sequence_measured_twice(self):
        landscape = random_landscape(8, seed=30, traps=1)
        cfg = TunerConfig(rng_seed=8, time_budget_s=600, max_training=16)
        cache, budget = prepared_run(landscape, cfg)
        state = build_model(landscape, cfg, cfg.rng(), cache, budget)
        measured = [e.sequence for e in cache.events]
        assert len(measured) == len(set(measured))
        assert len(measured) == len(state.dataset)
