"""Neighborhood machinery: exact k-NN graphs, farthest point sampling and
inverse-distance-weighted interpolation.

Everything is brute force. Ties are broken by ascending index so results do
not depend on platform or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, as_tensor, weighted_gather
from .exceptions import DimensionError, SizeError

# pairwise differences are formed explicitly up to this width, above it the
# |a|^2 + |b|^2 - 2ab expansion keeps memory at O(N^2)
_EXACT_WIDTH = 8


@dataclass(frozen=True)
class NeighborGraph:
    """Dense ``rows x k`` neighbor table.

    Row ``r`` lists the neighborhood of point ``centers[r]``; the center itself
    always comes first (self-loop), the rest follow by ascending distance with
    ties broken by ascending index. For an ordinary graph ``centers`` is
    ``arange(n)``; pooling graphs are rooted at a sampled subset.
    """

    n: int
    k: int
    neighbors: np.ndarray
    centers: np.ndarray
    space: str = "spatial"

    @property
    def rows(self) -> int:
        return self.neighbors.shape[0]


def _sq_norm_rows(diff: np.ndarray) -> np.ndarray:
    # fixed left-to-right order so equal distances round identically everywhere
    out = diff[..., 0] * diff[..., 0]
    for j in range(1, diff.shape[-1]):
        out = out + diff[..., j] * diff[..., j]
    return out


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"width mismatch: {a.shape} vs {b.shape}")
    if a.shape[1] <= _EXACT_WIDTH:
        return _sq_norm_rows(a[:, None, :] - b[None, :, :])
    d = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def _knn(points: np.ndarray, k: int, centers, space: str) -> NeighborGraph:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if not 1 <= k <= n:
        raise SizeError(f"k={k} must lie in [1, {n}]")
    centers = np.arange(n) if centers is None else np.asarray(centers, dtype=np.intp)
    d = pairwise_sq_dists(points[centers], points)
    d[np.arange(centers.size), centers] = -1.0
    return NeighborGraph(n=n, k=k, neighbors=smallest_k(d, k), centers=centers, space=space)


def smallest_k(d: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the ``k`` smallest entries per row, ordered by
    (value, index). Equivalent to a stable full argsort truncated to ``k``."""
    if k >= d.shape[1]:
        return np.argsort(d, axis=1, kind="stable")[:, :k]
    part = np.argpartition(d, k - 1, axis=1)[:, :k]
    vals = np.take_along_axis(d, part, axis=1)
    order = np.take_along_axis(part, np.lexsort((part, vals), axis=-1), axis=1)
    # a tie straddling the k-th place may have left out a lower index
    ties = (d <= vals.max(axis=1, keepdims=True)).sum(axis=1) > k
    if ties.any():
        order[ties] = np.argsort(d[ties], axis=1, kind="stable")[:, :k]
    return order


def knn_spatial(coords: np.ndarray, k: int, centers=None) -> NeighborGraph:
    """k nearest neighbors by Euclidean distance, self included."""
    return _knn(coords, k, centers, "spatial")


def knn_feature(features, k: int, centers=None) -> NeighborGraph:
    """k nearest neighbors in feature space (the dynamic graph update)."""
    feats = features.data if isinstance(features, Tensor) else features
    return _knn(feats, k, centers, "feature")


def fps(coords: np.ndarray, m: int, start: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; returns indices in selection order."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if not 1 <= m <= n:
        raise SizeError(f"cannot sample {m} of {n} points")
    if not 0 <= start < n:
        raise SizeError(f"start index {start} outside [0, {n})")
    selected = np.empty(m, dtype=np.intp)
    selected[0] = start
    mind = _sq_norm_rows(coords - coords[start])
    mind[start] = -np.inf
    for s in range(1, m):
        nxt = int(np.argmax(mind))
        selected[s] = nxt
        np.minimum(mind, _sq_norm_rows(coords - coords[nxt]), out=mind)
        mind[nxt] = -np.inf
    return selected


def farthest_from_centroid(coords: np.ndarray) -> int:
    """Permutation-stable FPS start: the point farthest from the centroid."""
    diff = coords - coords.mean(axis=0)
    return int(np.argmax(np.einsum("ij,ij->i", diff, diff)))


def idw_weights(src_coords, dst_coords, k_interp: int = 3, p: float = 2.0, eps: float = 1e-8):
    """Neighbor indices and normalized weights ``1 / (d^p + eps)``.

    With ``eps == 0`` a destination that coincides with sources takes their
    mean, avoiding the division by zero.
    """
    src = np.asarray(src_coords, dtype=np.float64)
    dst = np.asarray(dst_coords, dtype=np.float64)
    if not 1 <= k_interp <= src.shape[0]:
        raise SizeError(f"k_interp={k_interp} must lie in [1, {src.shape[0]}]")
    d2 = pairwise_sq_dists(dst, src)
    idx = smallest_k(d2, k_interp)
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    with np.errstate(divide="ignore"):
        w = 1.0 / (dist**p + eps)
    hit = ~np.isfinite(w)
    rows = hit.any(axis=1)
    w[rows] = hit[rows].astype(np.float64)
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def idw_interpolate(
    src_coords, src_feats, dst_coords, k_interp: int = 3, p: float = 2.0, eps: float = 1e-8
) -> Tensor:
    """Propagate source features to destination points; differentiable in ``src_feats``."""
    feats = as_tensor(src_feats)
    if feats.shape[0] != np.asarray(src_coords).shape[0]:
        raise DimensionError(f"{feats.shape[0]} feature rows for {len(src_coords)} sources")
    idx, w = idw_weights(src_coords, dst_coords, k_interp, p, eps)
    return weighted_gather(feats, idx, w)
