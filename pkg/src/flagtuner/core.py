"""Domain types shared by every stage of the tuner.

A flag catalog defines the search space: an ordered list of binary
optimization flags.  A candidate setting is a fixed-length 0/1 sequence over
that catalog.  Measurements, datasets, configuration and results are the
currency exchanged between the evaluator, the surrogate model, the search
algorithms and the CLI.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np


class CatalogError(ValueError):
    """Raised for malformed, duplicated or empty flag catalog files."""


class CompilerFamily(enum.Enum):
    GCC = "gcc"
    LLVM = "llvm"
    SYNTHETIC = "synthetic"


class Status(enum.Enum):
    OK = "ok"
    COMPILE_ERROR = "compile_error"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"


class Sequence:
    """An immutable 0/1 vector over the flag catalog.

    Equality and hashing are bitwise so sequences can be deduplicated in
    sets and dataset indexes.
    """

    __slots__ = ("_bits", "_hash")

    def __init__(self, bits: Iterable[int]):
        t = tuple(int(b) for b in bits)
        if not t:
            raise ValueError("sequence must have at least one bit")
        if any(b not in (0, 1) for b in t):
            raise ValueError(f"sequence bits must be 0 or 1, got {t}")
        self._bits = t
        self._hash = hash(t)

    @property
    def bits(self) -> tuple[int, ...]:
        return self._bits

    def __len__(self) -> int:
        return len(self._bits)

    def __iter__(self) -> Iterator[int]:
        return iter(self._bits)

    def __getitem__(self, i: int) -> int:
        return self._bits[i]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Sequence) and self._bits == other._bits

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"Sequence({self.to_bitstring()!r})"

    def to_array(self) -> np.ndarray:
        return np.asarray(self._bits, dtype=np.int8)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Sequence":
        return cls(int(v) for v in arr)

    def to_bitstring(self) -> str:
        """Compact textual form used in JSON reports, e.g. ``"0110"``."""
        return "".join(str(b) for b in self._bits)

    @classmethod
    def from_bitstring(cls, s: str) -> "Sequence":
        if not s or any(c not in "01" for c in s):
            raise ValueError(f"invalid bitstring {s!r}")
        return cls(int(c) for c in s)

    def to_hex(self) -> str:
        """Hex packing used by the cache journal (MSB-first, zero padded)."""
        n = len(self._bits)
        nbytes = (n + 7) // 8
        value = 0
        for b in self._bits:
            value = (value << 1) | b
        value <<= nbytes * 8 - n
        return value.to_bytes(nbytes, "big").hex()

    @classmethod
    def from_hex(cls, s: str, n: int) -> "Sequence":
        raw = bytes.fromhex(s)
        if len(raw) != (n + 7) // 8:
            raise ValueError(f"hex string {s!r} does not hold {n} bits")
        value = int.from_bytes(raw, "big") >> (len(raw) * 8 - n)
        return cls((value >> (n - 1 - i)) & 1 for i in range(n))


@dataclass(frozen=True)
class FlagDef:
    """One binary flag: command-line tokens for its on and off states.

    An empty ``off_token`` means the flag is simply omitted when disabled
    (the LLVM pass convention).
    """

    name: str
    on_token: str
    off_token: str = ""

    def __post_init__(self):
        if not self.name:
            raise CatalogError("flag name must be non-empty")
        if self.on_token == self.off_token:
            raise CatalogError(f"flag {self.name!r}: on and off tokens are identical")

    def token(self, bit: int) -> str:
        return self.on_token if bit else self.off_token


@dataclass(frozen=True)
class FlagCatalog:
    """Ordered list of binary flags; catalog order defines bit order."""

    flags: tuple[FlagDef, ...]
    family: CompilerFamily = CompilerFamily.GCC

    def __post_init__(self):
        if len(self.flags) < 1:
            raise CatalogError("empty catalog")
        names = [f.name for f in self.flags]
        seen = set()
        for name in names:
            if name in seen:
                raise CatalogError(f"duplicate flag name {name!r}")
            seen.add(name)

    def __len__(self) -> int:
        return len(self.flags)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.flags]

    def tokens(self, seq: Sequence) -> list[str]:
        """Command-line tokens for a sequence, skipping empty off-tokens."""
        if len(seq) != len(self.flags):
            raise ValueError(f"sequence width {len(seq)} != catalog width {len(self.flags)}")
        return [t for f, b in zip(self.flags, seq) if (t := f.token(b))]

    @classmethod
    def synthetic(cls, n: int) -> "FlagCatalog":
        """Placeholder catalog for synthetic landscapes (tokens unused)."""
        flags = tuple(FlagDef(f"bit{i:02d}", f"bit{i:02d}") for i in range(n))
        return cls(flags, CompilerFamily.SYNTHETIC)


def _flag_from_name(name: str, family: CompilerFamily) -> FlagDef:
    if family is CompilerFamily.GCC:
        return FlagDef(name, f"-f{name}", f"-fno-{name}")
    # LLVM passes and synthetic bits: present when on, omitted when off.
    return FlagDef(name, f"-{name}" if family is CompilerFamily.LLVM else name, "")


def catalog_from_file(path: str | Path, family: CompilerFamily = CompilerFamily.GCC) -> FlagCatalog:
    """Parse a catalog file: one flag per line, ``#`` comments.

    A bare name synthesizes family-style tokens (``-fX``/``-fno-X`` for GCC,
    pass name / omitted for LLVM).  Irregular flags use the triple form
    ``name|on_token|off_token``.
    """
    path = Path(path)
    flags: list[FlagDef] = []
    names: set[str] = set()
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if "|" in line:
                parts = [p.strip() for p in line.split("|")]
                if len(parts) != 3:
                    raise CatalogError(f"expected name|on_token|off_token, got {len(parts)} fields")
                flag = FlagDef(parts[0], parts[1], parts[2])
            else:
                flag = _flag_from_name(line, family)
        except CatalogError as exc:
            raise CatalogError(f"{path}:{lineno}: {exc}") from None
        if flag.name in names:
            raise CatalogError(f"{path}:{lineno}: duplicate flag name {flag.name!r}")
        names.add(flag.name)
        flags.append(flag)
    if not flags:
        raise CatalogError(f"{path}: empty catalog")
    return FlagCatalog(tuple(flags), family)


def random_sequence(rng: np.random.Generator, n: int) -> Sequence:
    """Draw a sequence with each bit independently 0 or 1 at probability 0.5."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return Sequence.from_array(rng.integers(0, 2, size=n))


@dataclass
class Measurement:
    """Observed execution time for one sequence.

    For ok measurements ``exec_time_s`` is the median of ``repeats``; failed
    measurements carry a penalty time instead and are flagged ``penalized``.
    """

    sequence: Sequence
    exec_time_s: float
    status: Status = Status.OK
    penalized: bool = False
    repeats: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.exec_time_s < 0:
            raise ValueError("exec_time_s must be non-negative")
        if self.status is Status.OK:
            if not self.repeats:
                raise ValueError("ok measurement requires at least one repeat")
            if abs(self.exec_time_s - float(np.median(self.repeats))) > 1e-12:
                raise ValueError("ok measurement time must be the median of its repeats")
        elif not self.penalized:
            raise ValueError(f"{self.status.value} measurement must be penalized")

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


class Dataset:
    """Ordered (sequence, time) pairs with O(1) duplicate lookup.

    Insertion order is the canonical row order used by model fitting.
    Inserting an already-present sequence is a no-op.
    """

    def __init__(self):
        self._entries: list[tuple[Sequence, float]] = []
        self._index: dict[Sequence, int] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, seq: Sequence) -> bool:
        return seq in self._index

    def __iter__(self) -> Iterator[tuple[Sequence, float]]:
        return iter(self._entries)

    @property
    def entries(self) -> list[tuple[Sequence, float]]:
        return list(self._entries)

    def add(self, seq: Sequence, exec_time_s: float) -> bool:
        """Append an entry; returns False (unchanged) for duplicates."""
        if seq in self._index:
            return False
        self._index[seq] = len(self._entries)
        self._entries.append((seq, float(exec_time_s)))
        return True

    def time_of(self, seq: Sequence) -> float:
        return self._entries[self._index[seq]][1]

    def best(self) -> tuple[Sequence, float]:
        """Entry with the minimum time; earliest entry wins ties."""
        if not self._entries:
            raise ValueError("best() is undefined on an empty dataset")
        return min(self._entries, key=lambda e: e[1])

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, y) in insertion order: X int8 (rows, n), y float64."""
        X = np.array([s.to_array() for s, _ in self._entries], dtype=np.int8)
        y = np.array([t for _, t in self._entries], dtype=np.float64)
        return X, y


@dataclass
class TunerConfig:
    """All tunable knobs of a run, with the defaults used in evaluation."""

    ini_size: int = 2
    acc_threshold_select: float = 0.95
    acc_threshold_stop: float = 0.96
    max_training: int = 50
    candidate_pool: int = 1000
    omega: float = 0.6
    c1: float = 2.0
    c2: float = 2.0
    c_boost: float = 1.5
    v_max: float = 4.0
    swarm_iterations: int = 500
    time_budget_s: float = 6000.0
    rng_seed: int = 0
    repeats_per_measurement: int = 3
    penalty_factor: float = 2.0
    n_trees: int = 100
    top_k_final: int = 5
    max_evaluations: int | None = None

    def __post_init__(self):
        if not (0 < self.acc_threshold_select <= self.acc_threshold_stop < 1):
            raise ValueError("need 0 < acc_threshold_select <= acc_threshold_stop < 1")
        if self.ini_size < 2:
            raise ValueError("ini_size must be >= 2")
        if self.max_training <= self.ini_size:
            raise ValueError("max_training must exceed ini_size")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        if self.candidate_pool < 1 or self.repeats_per_measurement < 1 or self.n_trees < 1:
            raise ValueError("candidate_pool, repeats_per_measurement and n_trees must be >= 1")
        if self.penalty_factor <= 1:
            raise ValueError("penalty_factor must exceed 1 so failures rank below every success")

    def rng(self) -> np.random.Generator:
        """The run's single seedable generator; thread it through explicitly."""
        return np.random.default_rng(self.rng_seed)


@dataclass
class HistoryEvent:
    """One actual measurement during a run: phase tag, sequence, time, and
    the wall-clock offset at which it completed (drives time_c reporting)."""

    phase: str
    sequence: Sequence
    time_s: float
    wall_s: float


@dataclass
class TuningResult:
    """Final outcome of one tuning run; speedup is baseline over measured."""

    best_sequence: Sequence
    predicted_time_s: float
    measured_time_s: float
    baseline_time_s: float
    speedup: float
    evaluations_used: int
    wall_clock_s: float
    history: list[HistoryEvent] = field(default_factory=list)
    strategy: str = "comptuner"

    def __post_init__(self):
        if self.speedup <= 0:
            raise ValueError("speedup must be strictly positive")
        expected = self.baseline_time_s / self.measured_time_s
        if abs(self.speedup - expected) > 1e-9 * max(1.0, abs(expected)):
            raise ValueError("speedup must equal baseline_time_s / measured_time_s")

    @property
    def time_c_s(self) -> float | None:
        """Wall clock at which the best sequence was first measured."""
        for ev in self.history:
            if ev.sequence == self.best_sequence:
                return ev.wall_s
        return None
