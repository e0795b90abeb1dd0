import shutil
import textwrap

import numpy as np
import pytest

from flagtuner import (
    CompilerFamily,
    CompilerTarget,
    FlagCatalog,
    MeasurementCache,
    Sequence,
    Status,
    SyntheticLandscape,
    ToolchainError,
    TunerConfig,
    brute_force_best,
    catalog_from_file,
    measure,
    measure_baseline,
    random_sequence,
)

from conftest import random_landscape

HAVE_CC = shutil.which("gcc") is not None

pytestmark_cc = pytest.mark.skipif(not HAVE_CC, reason="no C toolchain present")


@pytest.fixture
def small_landscape():
    return SyntheticLandscape(n=3, linear_weights=[-0.1, 0.2, 0.0], base_time_s=1.0)


@pytest.fixture
def cfg():
    return TunerConfig(rng_seed=0)


class TestSyntheticLandscape:
    def test_formula_values(self, small_landscape):
        assert small_landscape.time(Sequence([1, 0, 0])) == pytest.approx(0.9, abs=1e-15)
        assert small_landscape.time(Sequence([0, 0, 0])) == 1.0

    def test_pair_and_trap_terms(self):
        land = SyntheticLandscape(
            n=3, linear_weights=[0.1, 0.1, 0.0], pair_terms=[(0, 1, 0.5)],
            trap_blocks=[([1, 2], 0.25)], base_time_s=1.0,
        )
        assert land.time(Sequence([1, 1, 1])) == pytest.approx(1.7)  # full block: no trap
        assert land.time(Sequence([0, 1, 0])) == pytest.approx(1.35)  # partial block trips
        assert land.time(Sequence([0, 0, 0])) == 1.0

    def test_noise_free_is_bit_identical(self, small_landscape):
        seqs = [Sequence([i & 1, (i >> 1) & 1, (i >> 2) & 1]) for i in range(8)]
        first = [small_landscape.time(s) for s in seqs]
        again = [small_landscape.time(s) for s in seqs]
        assert first == again

    def test_positivity_guard(self):
        with pytest.raises(ValueError, match="raise base_time_s"):
            SyntheticLandscape(n=2, linear_weights=[-0.7, -0.5], base_time_s=1.0)

    def test_noise_is_seeded(self):
        a = SyntheticLandscape(n=2, noise_sd=0.05, noise_seed=3)
        b = SyntheticLandscape(n=2, noise_sd=0.05, noise_seed=3)
        s = Sequence([1, 0])
        assert a.observe(s) == b.observe(s) != a.time(s)


class TestMeasureSynthetic:
    def test_measure_evaluates_formula(self, small_landscape, cfg):
        cache = MeasurementCache(3)
        m = measure(small_landscape, Sequence([1, 0, 0]), cfg, cache)
        assert m.status is Status.OK
        assert m.exec_time_s == pytest.approx(0.9)
        assert m.repeats == [m.exec_time_s]

    def test_cache_hit_returns_stored_measurement(self, small_landscape, cfg):
        cache = MeasurementCache(3)
        seq = Sequence([0, 1, 0])
        first = measure(small_landscape, seq, cfg, cache)
        assert cache.misses == 1
        second = measure(small_landscape, seq, cfg, cache)
        assert second is first
        assert cache.misses == 1

    def test_width_mismatch_rejected(self, small_landscape, cfg):
        with pytest.raises(ValueError):
            measure(small_landscape, Sequence([0, 1]), cfg, MeasurementCache(3))

    def test_baseline_is_reference_sequence(self, small_landscape, cfg):
        cache = MeasurementCache(3)
        m = measure_baseline(small_landscape, cfg, cache)
        assert m.exec_time_s == 1.0
        assert cache.baseline_time_s == 1.0


class TestBruteForce:
    def test_hand_enumerated_case(self):
        land = SyntheticLandscape(
            n=2, linear_weights=[-0.1, -0.2], pair_terms=[(0, 1, 0.5)], base_time_s=1.0
        )
        # by hand: 00 -> 1.0, 01 -> 0.8, 10 -> 0.9, 11 -> 1.2
        best, t = brute_force_best(land)
        assert best == Sequence([0, 1])
        assert t == pytest.approx(0.8)

    def test_tie_breaks_lexicographically(self):
        best, t = brute_force_best(SyntheticLandscape(n=3, base_time_s=2.5))
        assert best == Sequence([0, 0, 0])
        assert t == 2.5

    def test_refuses_large_spaces(self):
        with pytest.raises(ValueError):
            brute_force_best(SyntheticLandscape(n=21))

    def test_lower_bounds_every_sequence(self, rng):
        land = random_landscape(8, seed=3, traps=2)
        _, best_time = brute_force_best(land)
        for _ in range(100):
            assert best_time <= land.time(random_sequence(rng, 8)) + 1e-12


class TestPenalties:
    def test_penalty_uses_worst_ok_then_baseline(self, cfg):
        cache = MeasurementCache(4)
        cache.baseline_time_s = 2.0
        assert cache.penalty_time(cfg) == 4.0
        cache.record(
            __import__("flagtuner").Measurement(Sequence([0, 0, 0, 0]), 3.0, repeats=[3.0])
        )
        assert cache.penalty_time(cfg) == 6.0

    def test_penalty_without_reference_is_fatal(self, cfg):
        with pytest.raises(ToolchainError):
            MeasurementCache(2).penalty_time(cfg)

    def test_penalized_is_worse_than_every_prior_ok(self, cfg):
        from flagtuner import Measurement

        cache = MeasurementCache(2)
        cache.baseline_time_s = 1.0
        for i, t in enumerate((0.8, 1.4, 1.1)):
            cache.record(Measurement(Sequence([i & 1, i >> 1]), t, repeats=[t]))
        penalty = cache.penalty_time(cfg)
        assert all(penalty > m.exec_time_s for m in cache.ok_measurements())


class TestJournal:
    def test_round_trip_recovery(self, small_landscape, cfg, tmp_path):
        journal = tmp_path / "measurements.log"
        cache = MeasurementCache(3, journal)
        cache.baseline_time_s = 1.0
        seqs = [Sequence([1, 0, 0]), Sequence([0, 1, 1])]
        for s in seqs:
            measure(small_landscape, s, cfg, cache)

        recovered = MeasurementCache(3, journal)
        assert len(recovered) == 2
        for s in seqs:
            assert recovered.get(s).exec_time_s == cache.get(s).exec_time_s
            assert recovered.get(s).status is Status.OK
        assert recovered.worst_ok_time == cache.worst_ok_time


def write_kernel(tmp_path, body=None):
    src = tmp_path / "kernel.c"
    src.write_text(body or textwrap.dedent("""
        #include <stdio.h>
        int main(void) {
            unsigned long long acc = 1469598103934665603ULL;
            for (int i = 0; i < 4000000; i++) {
                acc ^= (unsigned long long)(i * 2654435761u);
                acc *= 1099511628211ULL;
            }
            printf("%llu\\n", acc);
            return 0;
        }
    """))
    return src


def gcc_target(tmp_path, catalog, **kwargs):
    src = write_kernel(tmp_path)
    return CompilerTarget(
        compile_cmd_template="gcc -O2 {FLAGS} {SRC} -o {OUT}",
        run_cmd_template="{BIN}",
        sources=[str(src)],
        workdir=str(tmp_path),
        catalog=catalog,
        **kwargs,
    )


@pytestmark_cc
class TestMeasureCompiler:
    def test_baseline_smoke(self, tmp_path):
        catalog = FlagCatalog.synthetic(2)
        target = gcc_target(tmp_path, catalog)
        cfg = TunerConfig(rng_seed=0, repeats_per_measurement=3)
        cache = MeasurementCache(2)
        m = measure_baseline(target, cfg, cache)
        assert m.status is Status.OK
        assert m.exec_time_s > 0
        assert len(m.repeats) == 3
        assert m.exec_time_s == float(np.median(m.repeats))

    def test_flag_tokens_reach_the_compiler(self, tmp_path):
        flags = tmp_path / "flags.txt"
        flags.write_text("tree-dce\nipa-cp\n")
        catalog = catalog_from_file(flags, CompilerFamily.GCC)
        target = gcc_target(tmp_path, catalog)
        cfg = TunerConfig(rng_seed=0, repeats_per_measurement=1)
        cache = MeasurementCache(2)
        cache.baseline_time_s = 1.0
        m = measure(target, Sequence([1, 0]), cfg, cache)
        assert m.status is Status.OK

    def test_compile_failure_is_penalized(self, tmp_path):
        src = tmp_path / "broken.c"
        src.write_text("int main(void) { this does not compile }\n")
        target = CompilerTarget(
            compile_cmd_template="gcc {FLAGS} {SRC} -o {OUT}",
            run_cmd_template="{BIN}",
            sources=[str(src)],
            workdir=str(tmp_path),
            catalog=FlagCatalog.synthetic(2),
        )
        cfg = TunerConfig(rng_seed=0)
        cache = MeasurementCache(2)
        cache.baseline_time_s = 0.5
        m = measure(target, Sequence([0, 0]), cfg, cache)
        assert m.status is Status.COMPILE_ERROR
        assert m.penalized
        assert m.exec_time_s == pytest.approx(1.0)  # 2.0 * baseline

    def test_runtime_failure_is_penalized(self, tmp_path):
        src = tmp_path / "fails.c"
        src.write_text("int main(void) { return 7; }\n")
        target = CompilerTarget(
            compile_cmd_template="gcc {FLAGS} {SRC} -o {OUT}",
            run_cmd_template="{BIN}",
            sources=[str(src)],
            workdir=str(tmp_path),
            catalog=FlagCatalog.synthetic(1),
        )
        cfg = TunerConfig(rng_seed=0)
        cache = MeasurementCache(1)
        cache.baseline_time_s = 0.5
        m = measure(target, Sequence([0]), cfg, cache)
        assert m.status is Status.RUNTIME_ERROR and m.penalized

    def test_timeout_is_penalized(self, tmp_path):
        src = tmp_path / "slow.c"
        src.write_text("int main(void) { for (;;) {} }\n")
        target = CompilerTarget(
            compile_cmd_template="gcc {FLAGS} {SRC} -o {OUT}",
            run_cmd_template="{BIN}",
            sources=[str(src)],
            workdir=str(tmp_path),
            run_timeout_s=0.3,
            catalog=FlagCatalog.synthetic(1),
        )
        cfg = TunerConfig(rng_seed=0)
        cache = MeasurementCache(1)
        cache.baseline_time_s = 0.5
        m = measure(target, Sequence([0]), cfg, cache)
        assert m.status is Status.TIMEOUT and m.penalized

    def test_output_mismatch_is_runtime_error(self, tmp_path):
        src = tmp_path / "prints.c"
        src.write_text('#include <stdio.h>\nint main(void){ printf("42\\n"); return 0; }\n')
        expected = tmp_path / "expected.txt"
        expected.write_text("something else\n")
        target = CompilerTarget(
            compile_cmd_template="gcc {FLAGS} {SRC} -o {OUT}",
            run_cmd_template="{BIN}",
            sources=[str(src)],
            workdir=str(tmp_path),
            expected_output=str(expected),
            catalog=FlagCatalog.synthetic(1),
        )
        cfg = TunerConfig(rng_seed=0)
        cache = MeasurementCache(1)
        cache.baseline_time_s = 0.5
        m = measure(target, Sequence([0]), cfg, cache)
        assert m.status is Status.RUNTIME_ERROR


class TestBaselineFailures:
    def test_missing_compiler_is_fatal(self, tmp_path):
        src = write_kernel(tmp_path)
        target = CompilerTarget(
            compile_cmd_template="no-such-compiler-xyz {FLAGS} {SRC} -o {OUT}",
            run_cmd_template="{BIN}",
            sources=[str(src)],
            workdir=str(tmp_path),
            catalog=FlagCatalog.synthetic(1),
        )
        with pytest.raises(ToolchainError):
            measure_baseline(target, TunerConfig(rng_seed=0), MeasurementCache(1))

    def test_broken_baseline_compile_is_fatal(self, tmp_path):
        src = tmp_path / "broken.c"
        src.write_text("int main( {")
        target = CompilerTarget(
            compile_cmd_template="/bin/false {FLAGS} {SRC} -o {OUT}",
            run_cmd_template="{BIN}",
            sources=[str(src)],
            workdir=str(tmp_path),
            catalog=FlagCatalog.synthetic(1),
        )
        with pytest.raises(ToolchainError):
            measure_baseline(target, TunerConfig(rng_seed=0), MeasurementCache(1))


class TestTemplateValidation:
    def test_missing_placeholders_rejected(self, tmp_path):
        src = write_kernel(tmp_path)
        with pytest.raises(ValueError):
            CompilerTarget("gcc {SRC} -o {OUT}", "{BIN}", [str(src)], str(tmp_path))
        with pytest.raises(ValueError):
            CompilerTarget("gcc {FLAGS} {SRC} -o {OUT}", "./run", [str(src)], str(tmp_path))
        with pytest.raises(ValueError):
            CompilerTarget("gcc {FLAGS} {SRC} -o {OUT}", "{BIN}", [], str(tmp_path))
