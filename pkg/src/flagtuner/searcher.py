"""Improved binary particle swarm search over the surrogate model.

Each training example becomes a particle whose personal best starts at its
actually measured time.  Velocities evolve by inertia plus attraction toward
the personal and global bests, are squashed through a sigmoid, and sampled
into fresh bit vectors.  When an iteration fails to improve the global best,
particles are split by cosine similarity to the iteration's best position:
the similar group gets a boosted local pull (c1) and the rest a boosted
global pull (c2) for the next evolution step only.

Randomness contract (apart from the one-off swarm init): iteration 1 uses
one uniform per bit per particle; later iterations use, per particle in
swarm order, one r1, one r2, then one uniform per bit.  Any plain binary PSO
following the same contract produces byte-identical trajectories when the
boost factor is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import surrogate
from .core import HistoryEvent, Sequence, TunerConfig, TuningResult
from .evaluator import Budget, MeasurementCache, Target, measure
from .model_builder import BuildState
from .surrogate import Forest


@dataclass
class Particle:
    position: Sequence
    velocity: np.ndarray
    p_best_pos: Sequence
    p_best_val: float


@dataclass
class Swarm:
    particles: list[Particle]
    g_best_pos: Sequence
    g_best_val: float
    iteration: int = 0


@dataclass
class SearchResult:
    best_pos: Sequence
    best_val: float
    iterations: list[dict] = field(default_factory=list)
    visited: dict[Sequence, float] = field(default_factory=dict)
    trajectory: list[list[Sequence]] | None = None


def init_swarm(state: BuildState, rng: np.random.Generator) -> Swarm:
    """One particle per training row, seeded with its measured time.

    Velocities are uniform in [-1, 1] per component, drawn in dataset order.
    """
    if len(state.dataset) == 0:
        raise ValueError("cannot initialize a swarm from an empty dataset")
    particles = []
    n = len(state.dataset.entries[0][0])
    for seq, t in state.dataset:
        vel = rng.uniform(-1.0, 1.0, size=n)
        particles.append(Particle(seq, vel, seq, t))
    best_seq, best_t = state.dataset.best()
    return Swarm(particles, best_seq, best_t)


def velocity_update(
    p: Particle,
    g_best_pos: Sequence,
    omega: float,
    c1: float,
    c2: float,
    rng: np.random.Generator,
    v_max: float = 4.0,
) -> np.ndarray:
    """Inertia plus pBest/gBest attraction, clamped to [-v_max, v_max].

    One r1 and one r2 are drawn per call and shared across components.
    """
    r1 = rng.random()
    r2 = rng.random()
    x = p.position.to_array().astype(np.float64)
    v = (
        omega * p.velocity
        + c1 * r1 * (p.p_best_pos.to_array() - x)
        + c2 * r2 * (g_best_pos.to_array() - x)
    )
    return np.clip(v, -v_max, v_max)


def binarize(velocity: np.ndarray, rng: np.random.Generator) -> Sequence:
    """Sample a bit vector: bit j is 1 when a fresh uniform < sigmoid(v_j)."""
    s = 1.0 / (1.0 + np.exp(-velocity))
    return Sequence.from_array((rng.random(velocity.shape[0]) < s).astype(np.int8))


def cosine_similarity(a: Sequence, b: Sequence) -> float:
    """Cosine of two bit vectors; zero when either vector is all-zero.

    The denominator is one square root of the integer product of squared
    norms, so identity gives exactly 1.0 and perfect-square cases are exact.
    """
    if len(a) != len(b):
        raise ValueError("sequences must have equal length")
    av, bv = a.to_array().astype(np.float64), b.to_array().astype(np.float64)
    denom_sq = float(av @ av) * float(bv @ bv)
    if denom_sq == 0.0:
        return 0.0
    return float(av @ bv) / math.sqrt(denom_sq)


def search(
    state: BuildState,
    forest: Forest,
    cfg: TunerConfig,
    rng: np.random.Generator,
    budget: Budget | None = None,
    record_trajectory: bool = False,
) -> SearchResult:
    """Evolve the swarm against the model for up to ``swarm_iterations``.

    Returns the best predicted position, its value, per-iteration journal
    rows, and the minimum predicted value seen for every visited position
    (the shortlist the finalizer measures from).

    The loop body is vectorized over particles but consumes the generator in
    the documented per-particle order (a batched draw of k uniforms equals k
    sequential draws for numpy generators), so a plain per-particle
    implementation with the same seed reproduces the trajectory exactly.
    """
    swarm = init_swarm(state, rng)
    n_particles = len(swarm.particles)
    n = len(swarm.g_best_pos)

    X = np.array([p.position.to_array() for p in swarm.particles], dtype=np.int8)
    V = np.stack([p.velocity for p in swarm.particles])
    pb_pos = X.astype(np.float64)
    pb_val = np.array([p.p_best_val for p in swarm.particles], dtype=np.float64)
    gb_pos = swarm.g_best_pos.to_array().astype(np.float64)
    gb_val = swarm.g_best_val
    gb_seq = swarm.g_best_pos
    c1 = np.full(n_particles, cfg.c1)
    c2 = np.full(n_particles, cfg.c2)

    visited: dict[bytes, float] = {}
    result = SearchResult(gb_seq, gb_val)
    if record_trajectory:
        result.trajectory = []

    for it in range(1, cfg.swarm_iterations + 1):
        if budget is not None and budget.exhausted():
            break
        if it == 1:
            draws = rng.random((n_particles, n))
        else:
            block = rng.random((n_particles, 2 + n))
            r1 = block[:, 0:1]
            r2 = block[:, 1:2]
            draws = block[:, 2:]
            xf = X.astype(np.float64)
            V = (
                cfg.omega * V
                + (c1[:, None] * r1) * (pb_pos - xf)
                + (c2[:, None] * r2) * (gb_pos[None, :] - xf)
            )
            V = np.clip(V, -cfg.v_max, cfg.v_max)
        X = (draws < 1.0 / (1.0 + np.exp(-V))).astype(np.int8)
        if record_trajectory:
            result.trajectory.append([Sequence.from_array(row) for row in X])

        preds, _ = forest.predict_stats(X)
        for i in range(n_particles):
            key = X[i].tobytes()
            pred = float(preds[i])
            prev = visited.get(key)
            if prev is None or pred < prev:
                visited[key] = pred
        better = preds < pb_val
        pb_val = np.where(better, preds, pb_val)
        pb_pos[better] = X[better]

        best_idx = int(np.argmin(preds))
        iter_best_val = float(preds[best_idx])
        improved = iter_best_val < gb_val
        if improved:
            gb_val = iter_best_val
            gb_pos = X[best_idx].astype(np.float64)
            gb_seq = Sequence.from_array(X[best_idx])
            c1 = np.full(n_particles, cfg.c1)
            c2 = np.full(n_particles, cfg.c2)
            part1_size = 0
        else:
            xb = X[best_idx].astype(np.float64)
            dots = X.astype(np.float64) @ xb
            norms = np.sqrt(X.sum(axis=1).astype(np.float64) * float(xb @ xb))
            sims = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
            in_part1 = sims >= sims.mean()
            c1 = np.where(in_part1, cfg.c1 * cfg.c_boost, cfg.c1)
            c2 = np.where(in_part1, cfg.c2, cfg.c2 * cfg.c_boost)
            part1_size = int(in_part1.sum())
        swarm.iteration = it
        result.iterations.append(
            {"iter": it, "g_best_val": gb_val, "improved": improved,
             "part1_size": part1_size}
        )

    # Sync the particle objects so callers can inspect the final swarm.
    for i, p in enumerate(swarm.particles):
        p.position = Sequence.from_array(X[i])
        p.velocity = V[i]
        p.p_best_val = float(pb_val[i])
        p.p_best_pos = Sequence.from_array(pb_pos[i].astype(np.int8))
    swarm.g_best_pos = gb_seq
    swarm.g_best_val = gb_val

    result.best_pos = gb_seq
    result.best_val = gb_val
    result.visited = {
        Sequence.from_array(np.frombuffer(key, dtype=np.int8)): val
        for key, val in visited.items()
    }
    return result


def finalize(
    search_out: SearchResult,
    target: Target,
    cfg: TunerConfig,
    cache: MeasurementCache,
    forest: Forest | None = None,
    budget: Budget | None = None,
    strategy: str = "comptuner",
) -> TuningResult:
    """Measure the search's most promising positions and report the winner.

    The top ``top_k_final`` unmeasured positions by predicted value are
    actually measured (budget permitting); the reported sequence is the
    argmin of actual time over every ok measurement of the whole run, which
    may well be a training sequence.
    """
    if cache.baseline_time_s is None:
        raise ValueError("finalize requires a measured baseline on the cache")
    budget = budget if budget is not None else Budget.for_run(cfg, cache)

    ranked = sorted(search_out.visited.items(), key=lambda kv: kv[1])
    pending = [pos for pos, _ in ranked if pos not in cache][: cfg.top_k_final]
    for pos in pending:
        if budget.exhausted():
            break
        measure(target, pos, cfg, cache, phase="finalize")

    ok = cache.ok_measurements()
    if not ok:
        raise RuntimeError("no successful measurement in the entire run")
    winner = min(ok, key=lambda m: m.exec_time_s)

    predicted = winner.exec_time_s
    if forest is not None:
        predicted = surrogate.predict(forest, winner.sequence).mean
    return TuningResult(
        best_sequence=winner.sequence,
        predicted_time_s=predicted,
        measured_time_s=winner.exec_time_s,
        baseline_time_s=cache.baseline_time_s,
        speedup=cache.baseline_time_s / winner.exec_time_s,
        evaluations_used=cache.misses,
        wall_clock_s=budget.elapsed(),
        history=list(cache.events),
        strategy=strategy,
    )
