"""Actual execution-time measurement, with caching, timeouts and penalties.

Two kinds of target are supported: a real compiler invocation (compile the
sources under the flag tokens of a sequence, run the binary, take the median
wall-clock time of several runs) and a deterministic synthetic landscape for
desk-scale experiments.  A cache guarantees each sequence is compiled and
executed at most once per run and journals every measurement for crash
recovery.
"""

from __future__ import annotations

import itertools
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .core import FlagCatalog, HistoryEvent, Measurement, Sequence, Status, TunerConfig

BRUTE_FORCE_MAX_BITS = 20


class ToolchainError(RuntimeError):
    """Fatal environment failure: missing compiler, broken baseline, etc."""


@dataclass
class CompilerTarget:
    """A program compiled and timed through a real toolchain.

    ``compile_cmd_template`` must contain {FLAGS}, {SRC} and {OUT};
    ``run_cmd_template`` must contain {BIN}.  If ``expected_output`` is set,
    run stdout is compared byte-wise against that file and a mismatch counts
    as a runtime error (an optimization that breaks the program must not win).
    """

    compile_cmd_template: str
    run_cmd_template: str
    sources: list[str]
    workdir: str
    baseline_flags: str = "-O3"
    run_timeout_s: float = 60.0
    compile_timeout_s: float = 120.0
    expected_output: str | None = None
    catalog: FlagCatalog | None = None

    def __post_init__(self):
        for ph in ("{FLAGS}", "{SRC}", "{OUT}"):
            if ph not in self.compile_cmd_template:
                raise ValueError(f"compile_cmd_template is missing {ph}")
        if "{BIN}" not in self.run_cmd_template:
            raise ValueError("run_cmd_template is missing {BIN}")
        if not self.sources:
            raise ValueError("target needs at least one source file")


@dataclass
class SyntheticLandscape:
    """Deterministic pseudo-boolean time surface standing in for a program.

    time(x) = base_time_s + sum(w_i * x_i) + sum(w_ij * x_i * x_j)
              + sum(penalty for each trap block that is partially enabled).

    A trap block charges its penalty when some but not all of its bits are
    set, which punishes near-misses and gives the surface non-pairwise
    structure.  Construction rejects parameter sets whose worst case could
    reach a non-positive time.  With ``noise_sd`` > 0 a seeded Gaussian
    perturbation is added per evaluation.
    """

    n: int
    linear_weights: list[float] = field(default_factory=list)
    pair_terms: list[tuple[int, int, float]] = field(default_factory=list)
    trap_blocks: list[tuple[list[int], float]] = field(default_factory=list)
    base_time_s: float = 1.0
    noise_sd: float = 0.0
    noise_seed: int = 0
    reference: Sequence | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("landscape needs n >= 1 bits")
        if not self.linear_weights:
            self.linear_weights = [0.0] * self.n
        if len(self.linear_weights) != self.n:
            raise ValueError("linear_weights length must equal n")
        for i, j, _ in self.pair_terms:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"pair term ({i},{j}) out of range")
        for bits, _ in self.trap_blocks:
            if any(not 0 <= b < self.n for b in bits):
                raise ValueError(f"trap block {bits} out of range")
        lower = (
            self.base_time_s
            + sum(min(0.0, w) for w in self.linear_weights)
            + sum(min(0.0, w) for _, _, w in self.pair_terms)
            + sum(min(0.0, p) for _, p in self.trap_blocks)
        )
        if lower <= 0:
            raise ValueError(f"landscape can reach time {lower} <= 0; raise base_time_s")
        self._noise_rng = np.random.default_rng(self.noise_seed)

    def reference_sequence(self) -> Sequence:
        return self.reference if self.reference is not None else Sequence([0] * self.n)

    def time(self, seq: Sequence) -> float:
        """Noise-free surface value; fixed evaluation order for bit-identical results."""
        if len(seq) != self.n:
            raise ValueError(f"sequence width {len(seq)} != landscape n {self.n}")
        t = self.base_time_s
        for w, b in zip(self.linear_weights, seq):
            t += w * b
        for i, j, w in self.pair_terms:
            t += w * seq[i] * seq[j]
        for bits, penalty in self.trap_blocks:
            set_count = sum(seq[b] for b in bits)
            if 0 < set_count < len(bits):
                t += penalty
        return t

    def observe(self, seq: Sequence) -> float:
        t = self.time(seq)
        if self.noise_sd > 0:
            t = max(1e-9, t + self.noise_sd * self._noise_rng.standard_normal())
        return t


Target = Union[CompilerTarget, SyntheticLandscape]


class MeasurementCache:
    """Per-run measurement store: dedup, penalty bookkeeping, journal.

    ``baseline_time_s`` must be set (normally by ``measure_baseline``) before
    any measurement can be penalized without a prior ok time.  The journal is
    an append-only text file, one line per actual measurement:
    ``bits_hex,status,time_s,repeats`` with repeats ';'-joined.
    """

    def __init__(self, n: int, journal_path: str | Path | None = None):
        self.n = n
        self._store: dict[Sequence, Measurement] = {}
        self.events: list[HistoryEvent] = []
        self.misses = 0
        self.worst_ok_time: float | None = None
        self.baseline_time_s: float | None = None
        self.t0 = time.perf_counter()
        self._journal_path = Path(journal_path) if journal_path else None
        if self._journal_path is not None and self._journal_path.exists():
            self._recover()

    def __contains__(self, seq: Sequence) -> bool:
        return seq in self._store

    def __len__(self) -> int:
        return len(self._store)

    def get(self, seq: Sequence) -> Measurement | None:
        return self._store.get(seq)

    def ok_measurements(self) -> list[Measurement]:
        return [m for m in self._store.values() if m.ok]

    def penalty_time(self, cfg: TunerConfig) -> float:
        if self.worst_ok_time is not None:
            return cfg.penalty_factor * self.worst_ok_time
        if self.baseline_time_s is not None:
            return cfg.penalty_factor * self.baseline_time_s
        raise ToolchainError("cannot penalize a failure before any ok or baseline measurement")

    def record(self, m: Measurement, phase: str = "") -> None:
        if m.sequence in self._store:
            return
        self._store[m.sequence] = m
        self.misses += 1
        if m.ok:
            self.worst_ok_time = (
                m.exec_time_s if self.worst_ok_time is None else max(self.worst_ok_time, m.exec_time_s)
            )
        self.events.append(HistoryEvent(phase, m.sequence, m.exec_time_s, time.perf_counter() - self.t0))
        self._journal(m)

    def _journal(self, m: Measurement) -> None:
        if self._journal_path is None:
            return
        reps = ";".join(repr(r) for r in m.repeats)
        with self._journal_path.open("a") as fh:
            fh.write(f"{m.sequence.to_hex()},{m.status.value},{m.exec_time_s!r},{reps}\n")

    def _recover(self) -> None:
        for raw in self._journal_path.read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            bits_hex, status, time_s, reps = line.split(",", 3)
            m = Measurement(
                sequence=Sequence.from_hex(bits_hex, self.n),
                exec_time_s=float(time_s),
                status=Status(status),
                penalized=Status(status) is not Status.OK,
                repeats=[float(r) for r in reps.split(";") if r],
            )
            if m.sequence not in self._store:
                self._store[m.sequence] = m
                if m.ok:
                    self.worst_ok_time = (
                        m.exec_time_s
                        if self.worst_ok_time is None
                        else max(self.worst_ok_time, m.exec_time_s)
                    )


@dataclass
class Budget:
    """Shared wall-clock and evaluation-count budget for one run.

    Evaluations are actual measurements (cache misses); cache hits are free.
    """

    time_budget_s: float
    max_evaluations: int | None
    cache: MeasurementCache
    started_at: float = field(default_factory=time.perf_counter)

    @classmethod
    def for_run(cls, cfg: TunerConfig, cache: MeasurementCache) -> "Budget":
        return cls(cfg.time_budget_s, cfg.max_evaluations, cache, started_at=cache.t0)

    def elapsed(self) -> float:
        return time.perf_counter() - self.started_at

    def remaining_s(self) -> float:
        return self.time_budget_s - self.elapsed()

    @property
    def evaluations(self) -> int:
        return self.cache.misses

    def exhausted(self) -> bool:
        if self.elapsed() >= self.time_budget_s:
            return True
        return self.max_evaluations is not None and self.cache.misses >= self.max_evaluations


def _run_once(cmd: list[str], workdir: str, timeout_s: float) -> tuple[float, subprocess.CompletedProcess]:
    start = time.perf_counter()
    proc = subprocess.run(
        cmd, cwd=workdir, capture_output=True, timeout=timeout_s,
    )
    return time.perf_counter() - start, proc


def _compile(target: CompilerTarget, flags: str, out_name: str) -> Path:
    out_path = Path(target.workdir) / out_name
    cmd = target.compile_cmd_template.format(
        FLAGS=flags, SRC=" ".join(target.sources), OUT=str(out_path)
    )
    try:
        proc = subprocess.run(
            shlex.split(cmd), cwd=target.workdir, capture_output=True,
            timeout=target.compile_timeout_s,
        )
    except FileNotFoundError as exc:
        raise ToolchainError(f"compiler executable not found: {exc}") from exc
    except subprocess.TimeoutExpired as exc:
        raise _CompileFailed(f"compile timed out after {target.compile_timeout_s}s") from exc
    if proc.returncode != 0:
        raise _CompileFailed(proc.stderr.decode(errors="replace")[:2000])
    return out_path


class _CompileFailed(Exception):
    pass


def _timed_runs(target: CompilerTarget, binary: Path, repeats: int) -> tuple[list[float], Status]:
    """Run the binary ``repeats`` times; stop early on the first failure."""
    expected = Path(target.expected_output).read_bytes() if target.expected_output else None
    cmd = shlex.split(target.run_cmd_template.format(BIN=str(binary)))
    times: list[float] = []
    for _ in range(repeats):
        try:
            elapsed, proc = _run_once(cmd, target.workdir, target.run_timeout_s)
        except subprocess.TimeoutExpired:
            return times, Status.TIMEOUT
        if proc.returncode != 0:
            return times, Status.RUNTIME_ERROR
        if expected is not None and proc.stdout != expected:
            return times, Status.RUNTIME_ERROR
        times.append(elapsed)
    return times, Status.OK


def _measure_compiler(target: CompilerTarget, flags: str, cfg: TunerConfig) -> tuple[list[float], Status]:
    try:
        binary = _compile(target, flags, "tuned.bin")
    except _CompileFailed:
        return [], Status.COMPILE_ERROR
    return _timed_runs(target, binary, cfg.repeats_per_measurement)


def measure(
    target: Target,
    seq: Sequence,
    cfg: TunerConfig,
    cache: MeasurementCache,
    phase: str = "",
) -> Measurement:
    """Obtain the actual execution time of ``seq``, through the cache.

    A cache hit returns the stored measurement without touching the target.
    Failures (compile error, run error, timeout) are penalized at
    ``penalty_factor`` times the worst ok time seen so far (baseline time if
    none), so they rank strictly below every success recorded before them.
    """
    if len(seq) != cache.n:
        raise ValueError(f"sequence width {len(seq)} != cache width {cache.n}")
    hit = cache.get(seq)
    if hit is not None:
        return hit

    if isinstance(target, SyntheticLandscape):
        value = target.observe(seq)
        m = Measurement(seq, value, Status.OK, repeats=[value])
    else:
        if target.catalog is None:
            raise ValueError("compiler target has no catalog attached")
        flags = " ".join(target.catalog.tokens(seq))
        repeats, status = _measure_compiler(target, flags, cfg)
        if status is Status.OK:
            m = Measurement(seq, float(np.median(repeats)), Status.OK, repeats=repeats)
        else:
            m = Measurement(seq, cache.penalty_time(cfg), status, penalized=True, repeats=repeats)
    cache.record(m, phase)
    return m


def measure_baseline(target: Target, cfg: TunerConfig, cache: MeasurementCache | None = None) -> Measurement:
    """Measure the reference the tuner is compared against.

    Real targets compile with ``baseline_flags`` verbatim; synthetic targets
    evaluate their reference sequence (all-zero by default).  Any failure is
    fatal: tuning without a baseline is meaningless.
    """
    if isinstance(target, SyntheticLandscape):
        ref = target.reference_sequence()
        value = target.observe(ref)
        m = Measurement(ref, value, Status.OK, repeats=[value])
    else:
        repeats, status = _measure_compiler_baseline(target, cfg)
        if status is not Status.OK:
            raise ToolchainError(f"baseline measurement failed with status {status.value}")
        # The -O3 baseline is not a point in the 0/1 search space; an all-zero
        # placeholder keeps the Measurement shape uniform.
        width = len(target.catalog) if target.catalog is not None else (cache.n if cache else 1)
        m = Measurement(Sequence([0] * width), float(np.median(repeats)), Status.OK, repeats=repeats)
    if cache is not None:
        cache.baseline_time_s = m.exec_time_s
    return m


def _measure_compiler_baseline(target: CompilerTarget, cfg: TunerConfig) -> tuple[list[float], Status]:
    try:
        binary = _compile(target, target.baseline_flags, "baseline.bin")
    except _CompileFailed as exc:
        raise ToolchainError(f"baseline compile failed: {exc}") from exc
    return _timed_runs(target, binary, cfg.repeats_per_measurement)


def brute_force_best(landscape: SyntheticLandscape) -> tuple[Sequence, float]:
    """Exhaustive noise-free minimum over all 2^n sequences (n <= 20).

    Ties break to the lexicographically smallest bit vector.
    """
    if landscape.n > BRUTE_FORCE_MAX_BITS:
        raise ValueError(f"refusing brute force over n={landscape.n} > {BRUTE_FORCE_MAX_BITS} bits")
    best_seq: Sequence | None = None
    best_time = float("inf")
    for bits in itertools.product((0, 1), repeat=landscape.n):
        seq = Sequence(bits)
        t = landscape.time(seq)
        if t < best_time:
            best_seq, best_time = seq, t
    assert best_seq is not None
    return best_seq, best_time
