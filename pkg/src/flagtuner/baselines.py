"""Comparison strategies sharing the evaluator and budget accounting.

Random iterative optimization draws distinct random sequences until the
budget expires.  The genetic algorithm evolves a small population of bit
strings with tournament selection, uniform crossover, per-bit mutation and
single-slot elitism.  Both report through the same result schema as the
main tuner so runs are directly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Sequence, TunerConfig, TuningResult, random_sequence
from .evaluator import Budget, MeasurementCache, Target, measure


@dataclass
class GAParams:
    """Fixed GA hyperparameters; the defaults are recorded in every report."""

    population_size: int = 20
    tournament_size: int = 2
    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # None means 1/n
    elitism: int = 1


def _result_from_cache(
    cache: MeasurementCache, budget: Budget, strategy: str
) -> TuningResult:
    if cache.baseline_time_s is None:
        raise ValueError(f"{strategy} requires a measured baseline on the cache")
    ok = cache.ok_measurements()
    if not ok:
        raise RuntimeError("no successful measurement in the entire run")
    winner = min(ok, key=lambda m: m.exec_time_s)
    return TuningResult(
        best_sequence=winner.sequence,
        predicted_time_s=winner.exec_time_s,
        measured_time_s=winner.exec_time_s,
        baseline_time_s=cache.baseline_time_s,
        speedup=cache.baseline_time_s / winner.exec_time_s,
        evaluations_used=cache.misses,
        wall_clock_s=budget.elapsed(),
        history=list(cache.events),
        strategy=strategy,
    )


def rio_tune(
    target: Target,
    cfg: TunerConfig,
    rng: np.random.Generator,
    cache: MeasurementCache,
    budget: Budget | None = None,
) -> TuningResult:
    """Measure distinct random sequences until the budget expires."""
    budget = budget if budget is not None else Budget.for_run(cfg, cache)
    n = cache.n
    space = 2**n if n <= 30 else None
    while not budget.exhausted():
        if space is not None and len(cache) >= space:
            break  # whole space measured; dedup would spin forever
        seq = random_sequence(rng, n)
        if seq in cache:
            continue
        measure(target, seq, cfg, cache, phase="rio")
    return _result_from_cache(cache, budget, "rio")


def _tournament(
    fitness: list[float], rng: np.random.Generator, k: int
) -> int:
    contenders = rng.integers(0, len(fitness), size=k)
    return int(min(contenders, key=lambda i: fitness[i]))


def ga_tune(
    target: Target,
    cfg: TunerConfig,
    ga: GAParams,
    rng: np.random.Generator,
    cache: MeasurementCache,
    budget: Budget | None = None,
    initial_population: list[Sequence] | None = None,
) -> TuningResult:
    """Generational GA on bit strings, minimizing measured time."""
    budget = budget if budget is not None else Budget.for_run(cfg, cache)
    n = cache.n
    mutation = ga.mutation_rate if ga.mutation_rate is not None else 1.0 / n
    if initial_population is not None:
        population = list(initial_population)
    else:
        population = [random_sequence(rng, n) for _ in range(ga.population_size)]

    while not budget.exhausted():
        fitness: list[float] = []
        for ind in population:
            if budget.exhausted():
                return _result_from_cache(cache, budget, "ga")
            fitness.append(measure(target, ind, cfg, cache, phase="ga").exec_time_s)

        if mutation == 0.0 and len(set(population)) == 1:
            break  # fixed point: no operator can produce a new individual

        order = sorted(range(len(population)), key=lambda i: fitness[i])
        children = [population[i] for i in order[: ga.elitism]]
        while len(children) < ga.population_size:
            i1 = _tournament(fitness, rng, ga.tournament_size)
            i2 = _tournament(fitness, rng, ga.tournament_size)
            p1 = population[i1].to_array()
            p2 = population[i2].to_array()
            if rng.random() < ga.crossover_rate:
                take_p1 = rng.random(n) < 0.5
                child = np.where(take_p1, p1, p2)
            else:
                child = p1.copy()
            flips = rng.random(n) < mutation
            children.append(Sequence.from_array(child ^ flips.astype(np.int8)))
        population = children

    return _result_from_cache(cache, budget, "ga")
