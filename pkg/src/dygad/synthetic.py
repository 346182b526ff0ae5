"""Two-community temporal graph generator for the end-to-end benchmark.

Construction:

- The timeline alternates community activity blocks: community 0 interacts
  inside [k*cycle, k*cycle + w0), community 1 inside the remainder of each
  cycle, with w0 != w1 giving each community its own inter-event rhythm.
- Every node is alive from the start and retires at its own time, spread
  over the whole timeline; events pick both endpoints among currently
  living community members, weighted inversely to lifespan so per-node
  degree totals stay roughly flat.

Normal edges therefore always join two living nodes embedded in fresh
neighborhoods. Injected cross-community edges (standard injection
pipeline: uniform node pairs, interpolated timestamps) usually catch at
least one long-retired endpoint whose whole neighborhood went quiet when
it did. Because degrees carry no lifespan information, that dormancy is
visible only through event time gaps, which is what the time-embedding
ablation benchmark leans on.
"""

from __future__ import annotations

import numpy as np

from .tgraph import EventStore


def two_community_store(n_nodes: int = 500, n_events: int = 2000,
                        widths=(3.0, 5.0), min_life_frac: float = 0.125,
                        seed: int = 0) -> EventStore:
    if n_nodes < 8 or n_nodes % 2 != 0:
        raise ValueError("n_nodes must be even and >= 8")
    w0, w1 = float(widths[0]), float(widths[1])
    if w0 <= 0 or w1 <= 0:
        raise ValueError("block widths must be positive")
    cycle = w0 + w1
    n_cycles = max(4, int(round(n_events / 125)))
    span = n_cycles * cycle
    rng = np.random.default_rng([seed, 17])
    half = n_nodes // 2

    src = np.empty(n_events, dtype=np.int64)
    dst = np.empty(n_events, dtype=np.int64)
    t = np.empty(n_events)
    comm = np.arange(n_events) % 2
    for c, (offset, width) in enumerate(((0.0, w0), (w0, w1))):
        idx = np.flatnonzero(comm == c)
        lo = c * half
        deaths = rng.uniform(min_life_frac * span, span, half)
        # inverse-square lifespan weighting keeps degree totals flat enough
        # that retirement is invisible to degree-only features
        weights = deaths ** -2.0
        blocks = rng.integers(0, n_cycles, len(idx))
        times = np.sort(blocks * cycle + offset + rng.uniform(0, width, len(idx)))
        order = np.argsort(deaths)  # living nodes = suffix of this order
        deaths_sorted = deaths[order]
        for row, when in zip(idx, times):
            first_alive = np.searchsorted(deaths_sorted, when, side="right")
            alive = order[first_alive:]
            if len(alive) < 2:
                alive = order[-2:]
            w = weights[alive]
            pair = rng.choice(alive, size=2, replace=False, p=w / w.sum())
            src[row] = lo + pair[0]
            dst[row] = lo + pair[1]
            t[row] = when
    return EventStore(src, dst, t, np.zeros((n_events, 1)))


def community_of(node: int, n_nodes: int) -> int:
    return 0 if node < n_nodes // 2 else 1
