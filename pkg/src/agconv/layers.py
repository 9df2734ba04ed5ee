"""Graph convolution layers on point clouds.

``AGConvLayer`` generates a ``c x M`` weight matrix for every edge from the
edge feature ``[f_i, f_j - f_i]`` and multiplies it with the edge's spatial
input ``[x_i, x_j - x_i]``. ``FixedKernelLayer`` holds the isotropic
baselines (plain graph convolution and two attention variants).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor, as_tensor
from .exceptions import InputError, LayerConfigError, SizeError
from .graph import NeighborGraph, farthest_from_centroid, fps, knn_spatial

CONV_INPUT_MODES = ("spatial", "normals", "spatial+normals", "feature")
DEFAULT_SLOPE = 0.2


def conv_input_width(mode: str, in_dim: int) -> int:
    """Width ``c`` of the convolution operand for a given mode."""
    if mode == "spatial" or mode == "normals":
        return 6
    if mode == "spatial+normals":
        return 12
    if mode == "feature":
        return 2 * in_dim
    raise LayerConfigError(f"unknown conv_input_mode {mode!r}; expected one of {CONV_INPUT_MODES}")


class Module:
    """Container that discovers parameters and sub-modules from its attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def name_parameters(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Affine map ``x @ W + b`` applied to the last axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Parameter(_uniform(rng, in_dim, (in_dim, out_dim)))
        self.bias = Parameter(_uniform(rng, in_dim, (out_dim,))) if bias else None

    def __call__(self, x) -> Tensor:
        y = ag.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias

    def param_count(self, include_bias: bool = False) -> int:
        n = self.in_dim * self.out_dim
        if include_bias and self.bias is not None:
            n += self.out_dim
        return n


class AffineNorm(Module):
    """Per-feature normalization over the points of one cloud (batch-norm stand-in)."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.dim = dim
        self.eps = eps
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.affine_norm(x, self.gamma, self.beta, self.eps)

    def param_count(self, include_bias: bool = False) -> int:
        return 2 * self.dim if include_bias else self.dim


# ------------------------------------------------------------------ edges


@dataclass
class EdgeBatch:
    """Per-edge operands of one graph.

    ``delta_f`` is ``rows x k x 2D`` and ``delta_x`` is ``rows x k x c``; both
    are built lazily. :meth:`linear` evaluates ``delta_f @ W + b`` without
    materializing ``delta_f`` by splitting ``W`` into its center and
    difference halves.
    """

    graph: NeighborGraph
    feats: Tensor
    pos: Tensor | None
    mode: str
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def in_dim(self) -> int:
        return self.feats.shape[1]

    @property
    def c(self) -> int:
        return conv_input_width(self.mode, self.in_dim)

    def _pairs(self, x: Tensor) -> Tensor:
        g = self.graph
        xi = ag.gather_rows(x, np.repeat(g.centers[:, None], g.k, axis=1))
        xj = ag.gather_rows(x, g.neighbors)
        return ag.concat([xi, xj - xi], axis=-1)

    @property
    def delta_f(self) -> Tensor:
        if "df" not in self._cache:
            self._cache["df"] = self._pairs(self.feats)
        return self._cache["df"]

    @property
    def delta_x(self) -> Tensor:
        if self.mode == "feature":
            return self.delta_f
        if "dx" not in self._cache:
            self._cache["dx"] = self._pairs(self.pos)
        return self._cache["dx"]

    def center_feats(self) -> Tensor:
        return ag.gather_rows(self.feats, self.graph.centers)

    def linear(self, weight: Tensor, bias: Tensor | None) -> Tensor:
        d = self.in_dim
        if weight.shape[0] != 2 * d:
            raise LayerConfigError(f"edge linear expects {2 * d} input rows, got {weight.shape[0]}")
        w_center, w_diff = weight[:d], weight[d:]
        p = ag.matmul(self.feats, w_center - w_diff)
        q = ag.matmul(self.feats, w_diff)
        g = self.graph
        out = ag.reshape(ag.gather_rows(p, g.centers), (g.rows, 1, -1)) + ag.gather_rows(q, g.neighbors)
        return out if bias is None else out + bias

    def with_feats(self, feats: Tensor) -> "EdgeBatch":
        return EdgeBatch(self.graph, feats, self.pos, self.mode)


def build_edges(coords, feats, graph: NeighborGraph, mode: str = "spatial", normals=None) -> EdgeBatch:
    """Assemble the edge operands for ``graph``.

    ``mode`` picks the convolution operand: ``spatial`` (xyz, c=6), ``normals``
    (c=6), ``spatial+normals`` (c=12) or ``feature`` (the edge feature itself,
    c=2D).
    """
    feats = as_tensor(feats)
    if feats.shape[0] != graph.n:
        raise LayerConfigError(f"graph has {graph.n} nodes but features have {feats.shape[0]} rows")
    conv_input_width(mode, feats.shape[1])
    if mode in ("normals", "spatial+normals") and normals is None:
        raise InputError(f"conv_input_mode {mode!r} needs normals")
    if mode == "spatial":
        pos = as_tensor(coords)
    elif mode == "normals":
        pos = as_tensor(normals)
    elif mode == "spatial+normals":
        pos = ag.concat([as_tensor(coords), as_tensor(normals)], axis=-1)
    else:
        pos = None
    if pos is not None and pos.shape[0] != graph.n:
        raise LayerConfigError(f"graph has {graph.n} nodes but coordinates have {pos.shape[0]} rows")
    return EdgeBatch(graph, feats, pos, mode)


def _aggregate(y: Tensor, slope: float, norm: AffineNorm | None) -> Tensor:
    # LeakyReLU is monotone, so with normalization it is applied after the max
    if norm is None:
        out, _ = ag.reduce_max(ag.leaky_relu(y, slope), axis=1)
        return out
    out, _ = ag.reduce_max(y, axis=1)
    return ag.leaky_relu(norm(out), slope)


# ----------------------------------------------------------------- layers


class AGConvLayer(Module):
    """Adaptive graph convolution.

    Per edge the kernel MLP maps ``[f_i, f_j - f_i]`` (2D) to ``d`` hidden
    units and then to a ``c x M`` weight matrix; the edge response is
    ``LeakyReLU([x_i, x_j - x_i] @ W_ij)`` and the output of point ``i`` is
    the channel-wise max over its neighborhood.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        hidden: int = 64,
        mode: str = "spatial",
        rng: np.random.Generator | None = None,
        slope: float = DEFAULT_SLOPE,
        shortcut: bool = False,
        norm: bool = False,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim, self.hidden = in_dim, out_dim, hidden
        self.mode = mode
        self.c = conv_input_width(mode, in_dim)
        self.slope = slope
        self.kernel_mlp1 = Linear(2 * in_dim, hidden, rng)
        self.kernel_mlp2 = Linear(hidden, self.c * out_dim, rng)
        self.norm = AffineNorm(out_dim) if norm else None
        self.shortcut = Linear(in_dim, out_dim, rng) if shortcut else None
        self.shortcut_norm = AffineNorm(out_dim) if shortcut else None

    def kernels(self, edges: EdgeBatch) -> Tensor:
        """Adaptive weight matrices, ``rows x k x c x M``."""
        z = ag.leaky_relu(edges.linear(self.kernel_mlp1.weight, self.kernel_mlp1.bias), self.slope)
        g = edges.graph
        return ag.reshape(self.kernel_mlp2(z), (g.rows, g.k, self.c, self.out_dim))

    def edge_features(self, edges: EdgeBatch) -> Tensor:
        """Pre-activation edge responses ``rows x k x M``."""
        self._check(edges)
        return ag.edge_matvec(edges.delta_x, self.kernels(edges))

    def __call__(self, edges: EdgeBatch) -> Tensor:
        out = _aggregate(self.edge_features(edges), self.slope, self.norm)
        if self.shortcut is not None:
            out = out + self.shortcut_norm(self.shortcut(edges.center_feats()))
        return out

    def _check(self, edges: EdgeBatch) -> None:
        if edges.in_dim != self.in_dim:
            raise LayerConfigError(f"AGConv expects D={self.in_dim}, edges carry D={edges.in_dim}")
        if edges.mode != self.mode or edges.c != self.c:
            raise LayerConfigError(
                f"AGConv built for mode {self.mode!r} (c={self.c}), got {edges.mode!r} (c={edges.c})"
            )

    def param_count(self, include_bias: bool = False) -> int:
        return self.kernel_mlp1.param_count(include_bias) + self.kernel_mlp2.param_count(include_bias)


FIXED_VARIANTS = ("graphconv", "attention_point", "attention_channel")


class FixedKernelLayer(Module):
    """Isotropic graph convolution baselines.

    ``graphconv``: ``max_j LeakyReLU(h([f_i, f_j - f_i]))``.
    ``attention_point`` / ``attention_channel``: ``max_j a_ij * h(f_j)`` with
    ``a_ij`` a softmax over the neighborhood of scores computed from
    ``[h(f_i), h(f_j) - h(f_i)]``; a scalar per edge or one per channel.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        variant: str = "graphconv",
        rng: np.random.Generator | None = None,
        slope: float = DEFAULT_SLOPE,
        norm: bool = False,
    ):
        if variant not in FIXED_VARIANTS:
            raise LayerConfigError(f"unknown variant {variant!r}; expected one of {FIXED_VARIANTS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.variant = variant
        self.slope = slope
        if variant == "graphconv":
            self.h = Linear(2 * in_dim, out_dim, rng)
            self.alpha = None
        else:
            self.h = Linear(in_dim, out_dim, rng)
            self.alpha = Linear(2 * out_dim, 1 if variant == "attention_point" else out_dim, rng)
        self.norm = AffineNorm(out_dim) if norm else None

    def attention(self, edges: EdgeBatch) -> tuple[Tensor, Tensor]:
        """Attention weights ``rows x k x (1|M)`` and neighbor features ``rows x k x M``."""
        self._check(edges)
        u = ag.leaky_relu(self.h(edges.feats), self.slope)
        scores = edges.with_feats(u).linear(self.alpha.weight, self.alpha.bias)
        return ag.softmax(scores, axis=1), ag.gather_rows(u, edges.graph.neighbors)

    def __call__(self, edges: EdgeBatch) -> Tensor:
        if self.variant == "graphconv":
            self._check(edges)
            return _aggregate(edges.linear(self.h.weight, self.h.bias), self.slope, self.norm)
        a, u = self.attention(edges)
        out, _ = ag.reduce_max(a * u, axis=1)
        return out if self.norm is None else self.norm(out)

    def _check(self, edges: EdgeBatch) -> None:
        if edges.in_dim != self.in_dim:
            raise LayerConfigError(f"{self.variant} expects D={self.in_dim}, edges carry D={edges.in_dim}")

    def param_count(self, include_bias: bool = False) -> int:
        n = self.h.param_count(include_bias)
        if self.alpha is not None:
            n += self.alpha.param_count(include_bias)
        return n


def GraphConv(in_dim, out_dim, rng=None, slope=DEFAULT_SLOPE, norm=False) -> FixedKernelLayer:
    return FixedKernelLayer(in_dim, out_dim, "graphconv", rng, slope, norm)


def make_conv(kind: str, in_dim: int, out_dim: int, rng, hidden: int = 64, mode: str = "spatial",
              slope: float = DEFAULT_SLOPE, norm: bool = False, shortcut: bool = False) -> Module:
    if kind == "agconv":
        return AGConvLayer(in_dim, out_dim, hidden, mode, rng, slope, shortcut=shortcut, norm=norm)
    return FixedKernelLayer(in_dim, out_dim, kind, rng, slope, norm)


# ---------------------------------------------------------------- pooling


class GraphPool(Module):
    """Farthest-point subsampling followed by neighborhood aggregation.

    ``aggregator='max'`` takes the channel-wise max of the input features over
    each sampled point's k-NN neighborhood in the full cloud;
    ``aggregator='agconv'`` runs an AGConv layer over the same neighborhoods.
    ``start`` is the FPS seed index, or ``"farthest"`` for the point farthest
    from the centroid (independent of point order).
    """

    def __init__(
        self,
        dim: int = 0,
        rate: int = 4,
        aggregator: str = "max",
        k: int = 20,
        hidden: int = 64,
        rng: np.random.Generator | None = None,
        slope: float = DEFAULT_SLOPE,
        norm: bool = False,
        start: int | str = 0,
    ):
        if rate < 1:
            raise LayerConfigError(f"rate must be >= 1, got {rate}")
        if aggregator not in ("max", "agconv"):
            raise LayerConfigError(f"unknown aggregator {aggregator!r}")
        self.rate, self.aggregator, self.k, self.start = rate, aggregator, k, start
        self.conv = (
            AGConvLayer(dim, dim, hidden, "spatial", rng, slope, norm=norm) if aggregator == "agconv" else None
        )

    def sample_count(self, n: int) -> int:
        return math.ceil(n / self.rate)

    def __call__(self, coords, feats) -> tuple[Tensor, Tensor, np.ndarray]:
        coords, feats = as_tensor(coords), as_tensor(feats)
        n = coords.shape[0]
        m = self.sample_count(n)
        if m < self.k:
            raise SizeError(f"pooling {n} points at rate {self.rate} leaves {m} < k={self.k}")
        start = farthest_from_centroid(coords.data) if self.start == "farthest" else int(self.start)
        selected = fps(coords.data, m, start)
        graph = knn_spatial(coords.data, self.k, centers=selected)
        if self.conv is None:
            out, _ = ag.reduce_max(ag.gather_rows(feats, graph.neighbors), axis=1)
        else:
            out = self.conv(build_edges(coords, feats, graph, "spatial"))
        return ag.gather_rows(coords, selected), out, selected

    def param_count(self, include_bias: bool = False) -> int:
        return 0 if self.conv is None else self.conv.param_count(include_bias)


def graph_pool(coords, feats, rate: int = 4, aggregator: str = "max", k: int = 20, layer=None, start=0):
    """Functional form of :class:`GraphPool`; ``layer`` supplies the AGConv aggregator."""
    pool = GraphPool(as_tensor(feats).shape[1], rate, "max", k, start=start)
    if aggregator == "agconv":
        if layer is None:
            raise LayerConfigError("aggregator 'agconv' needs an AGConvLayer")
        pool.aggregator, pool.conv = "agconv", layer
    elif aggregator != "max":
        raise LayerConfigError(f"unknown aggregator {aggregator!r}")
    return pool(coords, feats)


# ----------------------------------------------------------------- STN


class STNLayer(Module):
    """Spatial transformer predicting a global 3x3 matrix.

    Three graph convolutions on a spatial k-NN graph, a global max, and an MLP
    head whose last layer starts at zero weights with an identity bias, so the
    untrained layer returns the identity exactly.
    """

    def __init__(
        self,
        in_dim: int = 3,
        k: int = 20,
        widths=(64, 128, 1024),
        head=(512, 256),
        rng: np.random.Generator | None = None,
        slope: float = DEFAULT_SLOPE,
        norm: bool = False,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.k, self.slope = in_dim, k, slope
        dims = [in_dim, *widths]
        self.convs = [GraphConv(a, b, rng, slope, norm) for a, b in zip(dims[:-1], dims[1:])]
        hdims = [widths[-1], *head]
        self.head = [Linear(a, b, rng) for a, b in zip(hdims[:-1], hdims[1:])]
        self.out = Linear(hdims[-1], 9, rng)
        self.out.weight.data[:] = 0.0
        self.out.bias.data[:] = np.eye(3).reshape(-1)

    def matrix(self, coords, normals=None) -> Tensor:
        coords = as_tensor(coords)
        feats = coords if self.in_dim == 3 else ag.concat([coords, as_tensor(normals)], axis=-1)
        graph = knn_spatial(coords.data, self.k)
        for conv in self.convs:
            feats = conv(build_edges(coords, feats, graph, "spatial"))
        g, _ = ag.reduce_max(feats, axis=0)
        for lin in self.head:
            g = ag.leaky_relu(lin(g), self.slope)
        return ag.reshape(self.out(g), (3, 3))

    def __call__(self, coords, normals=None):
        """Returns ``(coords', normals', T, det T)`` with ``coords' = coords @ T^T``."""
        t = self.matrix(coords, normals)
        tt = ag.transpose(t)
        new_coords = ag.matmul(coords, tt)
        new_normals = None if normals is None else ag.matmul(normals, tt)
        return new_coords, new_normals, t, float(np.linalg.det(t.data))

    def param_count(self, include_bias: bool = False) -> int:
        return sum(m.param_count(include_bias) for m in [*self.convs, *self.head, self.out])


def layer_param_count(layer, include_bias: bool = False) -> int:
    """Parameter count of a layer's kernel function.

    Bias-free, an AGConv layer holds ``2dD + dcM`` and a graph convolution
    ``2DM``; with biases ``d + cM`` and ``M`` are added respectively.
    Normalization and shortcut blocks are counted separately.
    """
    return layer.param_count(include_bias)


def agconv_param_formula(in_dim: int, out_dim: int, hidden: int, c: int) -> int:
    return 2 * hidden * in_dim + hidden * c * out_dim


def graphconv_param_formula(in_dim: int, out_dim: int) -> int:
    return 2 * in_dim * out_dim
