"""Wall-clock timings of k-NN construction and the AGConv forward pass."""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from .graph import knn_spatial
from .layers import AGConvLayer, build_edges

BENCH_HEADER = "op,n,k,seconds"


def _best_of(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(sizes: Sequence[int] = (256, 512, 1024), k: int = 20, dim: int = 64, hidden: int = 64,
              repeats: int = 3, seed: int = 0) -> list[tuple[str, int, int, float]]:
    """Best-of-``repeats`` seconds per op and cloud size."""
    rng = np.random.default_rng(seed)
    layer = AGConvLayer(dim, dim, hidden, "spatial", rng)
    rows = []
    for n in sizes:
        coords = rng.uniform(-1, 1, (n, 3))
        feats = rng.standard_normal((n, dim))
        kk = min(k, n)
        rows.append(("knn", n, kk, _best_of(lambda: knn_spatial(coords, kk), repeats)))
        graph = knn_spatial(coords, kk)
        rows.append(("agconv_forward", n, kk, _best_of(lambda: layer(build_edges(coords, feats, graph)), repeats)))
    return rows


def bench_csv(rows) -> str:
    return BENCH_HEADER + "\n" + "".join(f"{op},{n},{k},{s!r}\n" for op, n, k, s in rows)
