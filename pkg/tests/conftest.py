"""Shared helpers: reproducible synthetic landscapes and run plumbing."""

from __future__ import annotations

import numpy as np
import pytest

from flagtuner import Budget, MeasurementCache, SyntheticLandscape, TunerConfig, measure_baseline


def random_landscape(n: int, seed: int, base: float = 2.0, traps: int = 0) -> SyntheticLandscape:
    """A landscape with enough relative time variation that model accuracy
    is informative (flat surfaces make the accuracy gates trivially pass)."""
    r = np.random.default_rng(seed)
    weights = r.uniform(-0.13, 0.2, size=n)
    pairs = []
    for _ in range(n // 2):
        i, j = sorted(r.choice(n, size=2, replace=False))
        pairs.append((int(i), int(j), float(r.uniform(-0.08, 0.12))))
    blocks = []
    for _ in range(traps):
        bits = sorted(int(b) for b in r.choice(n, size=3, replace=False))
        blocks.append((bits, float(r.uniform(0.05, 0.15))))
    return SyntheticLandscape(
        n=n, linear_weights=list(weights), pair_terms=pairs, trap_blocks=blocks, base_time_s=base
    )


def prepared_run(target, cfg: TunerConfig):
    """Cache with measured baseline plus the run budget, as the CLI sets up."""
    n = target.n
    cache = MeasurementCache(n)
    measure_baseline(target, cfg, cache)
    return cache, Budget.for_run(cfg, cache)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
