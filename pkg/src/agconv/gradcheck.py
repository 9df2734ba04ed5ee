"""Finite-difference gradient checks over every layer variant and both networks."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .graph import fps, idw_interpolate, knn_spatial
from .layers import CONV_INPUT_MODES, AGConvLayer, FixedKernelLayer, GraphPool, STNLayer, build_edges
from .models import ClassificationNet, SegmentationNet
from .pointcloud import gen_synthetic

LAYER_TOL = 1e-5
NETWORK_TOL = 1e-4
# inputs are redrawn until every max has a runner-up at least this far below
TIE_MARGIN = 1e-3


@dataclass
class CheckResult:
    target: str
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _max_gap(values: np.ndarray, axis: int) -> float:
    """Smallest distance between the top two entries along ``axis``."""
    if values.shape[axis] < 2:
        return np.inf
    top2 = -np.partition(-values, 1, axis=axis).take([0, 1], axis=axis)
    return float(np.min(np.abs(top2.take(0, axis=axis) - top2.take(1, axis=axis))))


def _cloud(n: int, rng):
    coords = rng.uniform(-1.0, 1.0, size=(n, 3))
    normals = rng.standard_normal((n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return coords, normals


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * weights).sum()


def _untied(build: Callable[[np.random.Generator], tuple], seed: int, attempts: int = 50):
    """Draw problem instances until the max-reduction margin is respected."""
    for attempt in range(attempts):
        rng = np.random.default_rng([seed, attempt])
        problem = build(rng)
        if problem[-1] >= TIE_MARGIN:
            return problem[:-1]
    raise RuntimeError("could not draw an instance away from max ties")


def check_agconv(mode: str, seed: int = 0, n: int = 32, k: int = 6, eps: float = 1e-6,
                 shortcut: bool = False, norm: bool = False) -> float:
    def build(rng):
        coords, normals = _cloud(n, rng)
        feats = Parameter(rng.standard_normal((n, 4)))
        layer = AGConvLayer(4, 5, 6, mode, rng, shortcut=shortcut, norm=norm)
        graph = knn_spatial(coords, k)
        edges = build_edges(coords, feats, graph, mode, normals)
        gap = _max_gap(layer.edge_features(edges).data, axis=1)
        w = rng.standard_normal((n, 5))
        return layer, feats, coords, normals, graph, w, gap

    layer, feats, coords, normals, graph, w = _untied(build, seed)
    f = lambda: _weighted_sum(layer(build_edges(coords, feats, graph, mode, normals)), w)
    return ag.grad_check(f, [*layer.parameters(), feats], eps)


def check_fixed(variant: str, seed: int = 0, n: int = 32, k: int = 6, eps: float = 1e-6) -> float:
    def build(rng):
        coords, _ = _cloud(n, rng)
        feats = Parameter(rng.standard_normal((n, 4)))
        layer = FixedKernelLayer(4, 5, variant, rng)
        graph = knn_spatial(coords, k)
        edges = build_edges(coords, feats, graph)
        if variant == "graphconv":
            pre = edges.linear(layer.h.weight, layer.h.bias).data
        else:
            a, u = layer.attention(edges)
            pre = (a * u).data
        w = rng.standard_normal((n, 5))
        return layer, feats, coords, graph, w, _max_gap(pre, axis=1)

    layer, feats, coords, graph, w = _untied(build, seed)
    f = lambda: _weighted_sum(layer(build_edges(coords, feats, graph)), w)
    return ag.grad_check(f, [*layer.parameters(), feats], eps)


def check_pool(aggregator: str, seed: int = 0, n: int = 32, k: int = 4, eps: float = 1e-6) -> float:
    def build(rng):
        coords, _ = _cloud(n, rng)
        feats = Parameter(rng.standard_normal((n, 4)))
        pool = GraphPool(4, 4, aggregator, k, hidden=6, rng=rng)
        if aggregator == "max":
            graph = knn_spatial(coords, k)
            gap = _max_gap(feats.data[graph.neighbors], axis=1)
        else:
            sel = fps(coords, pool.sample_count(n))
            graph = knn_spatial(coords, k, centers=sel)
            gap = _max_gap(pool.conv.edge_features(build_edges(coords, feats, graph)).data, axis=1)
        w = rng.standard_normal((pool.sample_count(n), 4))
        return pool, feats, coords, w, gap

    pool, feats, coords, w = _untied(build, seed)
    f = lambda: _weighted_sum(pool(coords, feats)[1], w)
    return ag.grad_check(f, [*pool.parameters(), feats], eps)


def check_idw(seed: int = 0, eps: float = 1e-6) -> float:
    rng = np.random.default_rng(seed)
    src = rng.uniform(-1, 1, (8, 3))
    dst = rng.uniform(-1, 1, (32, 3))
    feats = Parameter(rng.standard_normal((8, 5)))
    w = rng.standard_normal((32, 5))
    return ag.grad_check(lambda: _weighted_sum(idw_interpolate(src, feats, dst), w), [feats], eps)


def check_stn(seed: int = 0, n: int = 32, eps: float = 1e-6) -> float:
    rng = np.random.default_rng(seed)
    coords, normals = _cloud(n, rng)
    stn = STNLayer(6, k=6, widths=(6, 8, 10), head=(8, 6), rng=rng)
    # move away from the identity initialization so every weight gets a gradient
    stn.out.weight.data[:] = 0.1 * rng.standard_normal(stn.out.weight.shape)
    pos = Parameter(coords)
    w1, w2 = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))

    def f():
        c, nr, _, _ = stn(pos, Tensor(normals))
        return _weighted_sum(c, w1) + _weighted_sum(nr, w2)

    return ag.grad_check(f, [*stn.parameters(), pos], eps)


def tiny_cls_net(seed: int = 0, k: int = 8) -> ClassificationNet:
    return ClassificationNet(3, k=k, hidden=8, widths=(8, 8, 12, 12), emb=24, head=(16, 8), seed=seed)


def tiny_seg_net(seed: int = 0, k: int = 2, stn: bool = True) -> SegmentationNet:
    return SegmentationNet(
        num_parts=6, category_count=3, k=k, hidden=6, widths=(6, 6, 8, 8, 10), head=(12, 8),
        use_normals=True, stn=stn, stn_widths=(6, 8, 10), stn_head=(8, 6), seed=seed,
    )


def check_cls_net(seed: int = 0, n: int = 32, eps: float = 1e-6, max_entries: int | None = 16) -> float:
    net = tiny_cls_net(seed)
    cloud = gen_synthetic("torus", n, seed)
    return ag.grad_check(lambda: ag.cross_entropy(net(cloud), cloud.class_label), net.parameters(), eps,
                         max_entries, seed)


def check_seg_net(seed: int = 0, n: int = 32, eps: float = 1e-6, max_entries: int | None = 16) -> float:
    net = tiny_seg_net(seed)
    rng = np.random.default_rng(seed)
    net.stn.out.weight.data[:] = 0.1 * rng.standard_normal(net.stn.out.weight.shape)
    cloud = gen_synthetic("cube", n, seed)
    return ag.grad_check(lambda: ag.cross_entropy(net(cloud), cloud.point_labels), net.parameters(), eps,
                         max_entries, seed)


def suite(seed: int = 0) -> list[tuple[str, Callable[[], float], float]]:
    checks = [(f"agconv[{m}]", lambda m=m: check_agconv(m, seed), LAYER_TOL) for m in CONV_INPUT_MODES]
    checks.append(("agconv[spatial]+shortcut+norm", lambda: check_agconv("spatial", seed, shortcut=True, norm=True),
                   LAYER_TOL))
    checks += [(v, lambda v=v: check_fixed(v, seed), LAYER_TOL)
               for v in ("graphconv", "attention_point", "attention_channel")]
    checks += [
        ("pool[max]", lambda: check_pool("max", seed), LAYER_TOL),
        ("pool[agconv]", lambda: check_pool("agconv", seed), LAYER_TOL),
        ("idw", lambda: check_idw(seed), LAYER_TOL),
        ("stn", lambda: check_stn(seed), LAYER_TOL),
        ("cls_net", lambda: check_cls_net(seed), NETWORK_TOL),
        ("seg_net", lambda: check_seg_net(seed), NETWORK_TOL),
    ]
    return checks


def run_suite(seed: int = 0) -> list[CheckResult]:
    results = []
    for name, fn, tol in suite(seed):
        t0 = time.perf_counter()
        err = fn()
        results.append(CheckResult(name, err, tol, time.perf_counter() - t0))
    return results
