"""Multi-phase construction of the performance prediction model.

An initial forest is fitted on a couple of random measurements, then grown
one loop pass at a time: the candidate with the highest expected improvement
is measured, its prediction accuracy is checked against the pre-retrain
model, and when the model was off (< 0.95) a second, diversity-oriented pick
is added by rank roulette biased toward low EI.  The loop stops once the
mean accuracy of the EI picks clears 0.96, the training budget of 50 rows is
reached, or the wall-clock budget runs out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import surrogate
from .core import Dataset, Sequence, TunerConfig, random_sequence
from .evaluator import Budget, MeasurementCache, Target, measure
from .surrogate import Forest

Variant = Literal["default", "high_only", "one_time"]


class PoolExhaustedError(RuntimeError):
    """Every candidate in the pool is already part of the dataset."""


@dataclass
class BuildState:
    """Result of model building: the labeled data, the fitted forest, and
    the per-pick accuracy trail that drove the stopping rule."""

    dataset: Dataset
    forest: Forest
    enh_accuracies: list[float] = field(default_factory=list)
    phase_log: list[dict] = field(default_factory=list)


def _candidate_matrix(candidates: list[Sequence]) -> np.ndarray:
    return np.array([c.to_array() for c in candidates], dtype=np.int8)


def select_by_ei(candidates: list[Sequence], forest: Forest, f_best: float) -> Sequence:
    """Argmax expected improvement; ties break to the earliest candidate."""
    if not candidates:
        raise ValueError("no candidates")
    means, variances = forest.predict_stats(_candidate_matrix(candidates))
    ei = surrogate.expected_improvement_batch(means, variances, f_best)
    return candidates[int(np.argmax(ei))]


def select_by_distribution(
    candidates: list[Sequence],
    forest: Forest,
    f_best: float,
    rng: np.random.Generator,
    taken: set[Sequence] | Dataset,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> Sequence:
    """Rank roulette biased toward low EI, skipping already-measured picks.

    Candidates sorted by EI descending get weight i / sum(1..m) at 1-based
    sorted position i, so the smallest EI carries the largest probability.
    The draw repeats while it lands on a sequence already in ``taken``.
    ``stats`` lets a caller that already predicted the candidates reuse the
    (means, variances) pair.
    """
    if not candidates:
        raise ValueError("no candidates")
    if all(c in taken for c in candidates):
        raise PoolExhaustedError("pool exhausted: every candidate is already in the dataset")
    means, variances = stats if stats is not None else forest.predict_stats(_candidate_matrix(candidates))
    ei = surrogate.expected_improvement_batch(means, variances, f_best)
    order = np.argsort(-ei, kind="stable")
    m = len(candidates)
    weights = np.arange(1, m + 1, dtype=np.float64)
    cum = np.cumsum(weights / (m * (m + 1) / 2.0))
    while True:
        pos = int(np.searchsorted(cum, rng.random(), side="right"))
        pick = candidates[int(order[min(pos, m - 1)])]
        if pick not in taken:
            return pick


def _draw_pool(
    rng: np.random.Generator, n: int, pool: int, taken: Dataset, attempts_factor: int = 50
) -> list[Sequence]:
    """Up to ``pool`` distinct random sequences outside the dataset.

    Bounded rejection sampling: on small catalogs the reachable space may be
    smaller than the pool, in which case fewer candidates come back.
    """
    out: list[Sequence] = []
    seen: set[Sequence] = set()
    attempts = 0
    limit = attempts_factor * pool
    while len(out) < pool and attempts < limit:
        attempts += 1
        seq = random_sequence(rng, n)
        if seq in seen or seq in taken:
            continue
        seen.add(seq)
        out.append(seq)
    return out


def build_model(
    target: Target,
    cfg: TunerConfig,
    rng: np.random.Generator,
    cache: MeasurementCache,
    budget: Budget | None = None,
    variant: Variant = "default",
) -> BuildState:
    """Run the phased build loop and return the final model and its data.

    ``variant`` switches the two ablations: ``high_only`` keeps the EI
    argmax picks but never takes the diversity pick; ``one_time`` fills the
    training budget with random sequences and fits a single forest.
    The baseline must already be measured (failure penalties need it).
    """
    n = cache.n
    budget = budget if budget is not None else Budget.for_run(cfg, cache)
    dataset = Dataset()
    phase_log: list[dict] = []

    def measure_into(seq: Sequence, phase: str) -> float:
        m = measure(target, seq, cfg, cache, phase=phase)
        dataset.add(seq, m.exec_time_s)
        return m.exec_time_s

    initial_rows = cfg.max_training if variant == "one_time" else cfg.ini_size
    phase = "one_time" if variant == "one_time" else "initial"
    while len(dataset) < initial_rows and not budget.exhausted():
        seq = random_sequence(rng, n)
        if seq in dataset:
            continue
        actual = measure_into(seq, phase)
        phase_log.append({"phase": phase, "picked_by": "random",
                          "seq": seq.to_bitstring(), "predicted": None,
                          "actual": actual, "acc": None})
    if len(dataset) < 2:
        raise RuntimeError("budget exhausted before the initial dataset reached 2 rows")
    if all(cache.get(seq).penalized for seq, _ in dataset):
        raise RuntimeError(
            "every initial measurement failed; the target is broken under random flag settings"
        )

    forest = surrogate.fit(dataset, cfg.n_trees, rng)
    state = BuildState(dataset, forest, [], phase_log)
    if variant == "one_time":
        return state

    while True:
        if len(dataset) >= cfg.max_training or budget.exhausted():
            break
        candidates = _draw_pool(rng, n, cfg.candidate_pool, dataset)
        if not candidates:
            break  # reachable space fully measured

        means, variances = state.forest.predict_stats(_candidate_matrix(candidates))
        f_best = dataset.best()[1]
        ei = surrogate.expected_improvement_batch(means, variances, f_best)
        pick_idx = int(np.argmax(ei))
        pick = candidates[pick_idx]
        predicted = float(means[pick_idx])

        actual = measure_into(pick, "enhance")
        # Accuracy against the model that chose the pick, before retraining.
        acc = 1.0 - abs(predicted - actual) / actual
        state.enh_accuracies.append(acc)
        phase_log.append({"phase": "enhance", "picked_by": "ei",
                          "seq": pick.to_bitstring(), "predicted": predicted,
                          "actual": actual, "acc": acc})

        if (
            variant != "high_only"
            and acc < cfg.acc_threshold_select
            and len(dataset) < cfg.max_training
            and not budget.exhausted()
        ):
            # f' tracks the dataset minimum, which the EI pick may have lowered.
            extra = select_by_distribution(
                candidates, state.forest, dataset.best()[1], rng, dataset,
                stats=(means, variances),
            )
            extra_actual = measure_into(extra, "enhance")
            phase_log.append({"phase": "enhance", "picked_by": "roulette",
                              "seq": extra.to_bitstring(), "predicted": None,
                              "actual": extra_actual, "acc": None})

        state.forest = surrogate.fit(dataset, cfg.n_trees, rng)
        if state.enh_accuracies and float(np.mean(state.enh_accuracies)) > cfg.acc_threshold_stop:
            break

    return state
