"""Desk-scale classification and segmentation networks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ConfigError, InputError, SizeError
from .graph import idw_interpolate, knn_feature, knn_spatial
from .layers import (
    DEFAULT_SLOPE,
    AffineNorm,
    AGConvLayer,
    FixedKernelLayer,
    GraphPool,
    Linear,
    Module,
    STNLayer,
    build_edges,
    make_conv,
)
from .pointcloud import PointCloud

CONV_KINDS = ("agconv", "graphconv", "attention_point", "attention_channel")


def _coords_of(cloud) -> np.ndarray:
    return cloud.coords if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


class ClassificationNet(Module):
    """Dynamic-graph classifier.

    Four graph convolutions, each on a k-NN graph rebuilt from its input
    features (the first from coordinates). The first two are adaptive when
    ``conv='agconv'``; the last two are always plain graph convolutions. The
    concatenated layer outputs pass a shared linear map, a global max and an
    MLP head.
    """

    def __init__(
        self,
        num_classes: int = 3,
        k: int = 20,
        conv: str = "agconv",
        hidden: int = 64,
        widths=(64, 64, 128, 256),
        emb: int = 1024,
        head=(512, 256),
        norm: bool = True,
        slope: float = DEFAULT_SLOPE,
        seed: int = 0,
    ):
        if conv not in CONV_KINDS:
            raise ConfigError(f"unknown conv kind {conv!r}; expected one of {CONV_KINDS}")
        if len(widths) != 4:
            raise ConfigError("classification backbone needs exactly four widths")
        self.config = dict(
            kind="cls", num_classes=num_classes, k=k, conv=conv, hidden=hidden, widths=list(widths),
            emb=emb, head=list(head), norm=norm, slope=slope, seed=seed,
        )
        rng = np.random.default_rng(seed)
        self.k, self.slope = k, slope
        dims = [3, *widths]
        self.convs = [
            make_conv(conv if i < 2 else "graphconv", dims[i], dims[i + 1], rng, hidden, "spatial", slope, norm)
            for i in range(4)
        ]
        self.embed = Linear(sum(widths), emb, rng)
        self.embed_norm = AffineNorm(emb) if norm else None
        hdims = [emb, *head, num_classes]
        self.head = [Linear(a, b, rng) for a, b in zip(hdims[:-1], hdims[1:])]
        self.name_parameters()

    @property
    def num_classes(self) -> int:
        return self.config["num_classes"]

    def __call__(self, cloud) -> Tensor:
        return cls_forward(self, cloud)


def cls_forward(net: ClassificationNet, cloud) -> Tensor:
    """Class logits for one cloud."""
    coords = _coords_of(cloud)
    n = coords.shape[0]
    if n < net.k:
        raise SizeError(f"cloud has {n} points, fewer than k={net.k}")
    pos = Tensor(coords)
    f = pos
    outs = []
    for i, conv in enumerate(net.convs):
        graph = knn_spatial(coords, net.k) if i == 0 else knn_feature(f, net.k)
        f = conv(build_edges(pos, f, graph, "spatial"))
        outs.append(f)
    x = net.embed(ag.concat(outs, axis=-1))
    if net.embed_norm is not None:
        x = net.embed_norm(x)
    x, _ = ag.reduce_max(ag.leaky_relu(x, net.slope), axis=0)
    for i, lin in enumerate(net.head):
        x = lin(x)
        if i < len(net.head) - 1:
            x = ag.leaky_relu(x, net.slope)
    return x


class SegmentationNet(Module):
    """Hierarchical part-segmentation network.

    Encoder: AGConv, AGConv, pool, AGConv, pool, AGConv, GraphConv, where each
    pool subsamples by farthest point sampling and aggregates with an AGConv
    layer. Coarse features are interpolated back to full resolution, stacked
    with a one-hot category vector and decoded per point.
    """

    def __init__(
        self,
        num_parts: int = 6,
        category_count: int = 3,
        k: int = 20,
        hidden: int = 64,
        widths=(64, 64, 128, 128, 256),
        head=(512, 256),
        pool_rate: int = 4,
        k_interp: int = 3,
        use_normals: bool = False,
        stn: bool = False,
        stn_widths=(64, 128, 1024),
        stn_head=(512, 256),
        norm: bool = True,
        slope: float = DEFAULT_SLOPE,
        seed: int = 0,
    ):
        if len(widths) != 5:
            raise ConfigError("segmentation encoder needs exactly five widths")
        self.config = dict(
            kind="seg", num_parts=num_parts, category_count=category_count, k=k, hidden=hidden,
            widths=list(widths), head=list(head), pool_rate=pool_rate, k_interp=k_interp,
            use_normals=use_normals, stn=stn, stn_widths=list(stn_widths), stn_head=list(stn_head),
            norm=norm, slope=slope, seed=seed,
        )
        rng = np.random.default_rng(seed)
        self.k, self.slope, self.k_interp = k, slope, k_interp
        self.use_normals = use_normals
        in_dim = 6 if use_normals else 3
        self.stn = STNLayer(in_dim, k, stn_widths, stn_head, rng, slope, norm) if stn else None
        w = widths
        self.conv1 = AGConvLayer(in_dim, w[0], hidden, "spatial", rng, slope, shortcut=True, norm=norm)
        self.conv2 = AGConvLayer(w[0], w[1], hidden, "spatial", rng, slope, shortcut=True, norm=norm)
        self.pool1 = GraphPool(w[1], pool_rate, "agconv", k, hidden, rng, slope, norm, start="farthest")
        self.conv3 = AGConvLayer(w[1], w[2], hidden, "spatial", rng, slope, shortcut=True, norm=norm)
        self.pool2 = GraphPool(w[2], pool_rate, "agconv", k, hidden, rng, slope, norm, start="farthest")
        self.conv4 = AGConvLayer(w[2], w[3], hidden, "spatial", rng, slope, shortcut=True, norm=norm)
        self.conv5 = FixedKernelLayer(w[3], w[4], "graphconv", rng, slope, norm)
        hdims = [sum(w) + category_count, *head]
        self.head = [Linear(a, b, rng) for a, b in zip(hdims[:-1], hdims[1:])]
        self.head_norms = [AffineNorm(b) for b in head] if norm else []
        self.classifier = Linear(hdims[-1], num_parts, rng)
        self.name_parameters()

    @property
    def num_parts(self) -> int:
        return self.config["num_parts"]

    def min_points(self) -> int:
        return self.k * self.config["pool_rate"] ** 2

    def __call__(self, cloud, category_onehot=None) -> Tensor:
        return seg_forward(self, cloud, category_onehot)


def seg_forward(net: SegmentationNet, cloud: PointCloud, category_onehot=None) -> Tensor:
    """Per-point part logits, ``N x num_parts``."""
    coords = _coords_of(cloud)
    n = coords.shape[0]
    rate = net.config["pool_rate"]
    coarsest = math.ceil(math.ceil(n / rate) / rate)
    if n < net.k or coarsest < net.k:
        raise SizeError(f"{n} points cannot be pooled twice at rate {rate} with k={net.k}")
    cats = net.config["category_count"]
    if category_onehot is None:
        category_onehot = np.zeros(cats)
        if isinstance(cloud, PointCloud) and cloud.class_label is not None:
            category_onehot[cloud.class_label] = 1.0
    onehot = np.asarray(category_onehot, dtype=np.float64).reshape(-1)
    if onehot.size != cats:
        raise InputError(f"category vector has {onehot.size} entries, expected {cats}")

    pos = Tensor(coords)
    normals = None
    if net.use_normals:
        if not isinstance(cloud, PointCloud) or cloud.normals is None:
            raise InputError("this network needs normals")
        normals = Tensor(cloud.normals)
    if net.stn is not None:
        pos, normals, _, _ = net.stn(pos, normals)
    f0 = pos if normals is None else ag.concat([pos, normals], axis=-1)

    k = net.k
    f1 = net.conv1(build_edges(pos, f0, knn_spatial(pos.data, k)))
    f2 = net.conv2(build_edges(pos, f1, knn_feature(f1, k)))
    c1, p1, sel1 = net.pool1(pos, f2)
    f3 = net.conv3(build_edges(c1, p1, knn_feature(p1, k)))
    c2, p2, sel2 = net.pool2(c1, f3)
    f4 = net.conv4(build_edges(c2, p2, knn_feature(p2, k)))
    f5 = net.conv5(build_edges(c2, f4, knn_feature(f4, k)))

    # interpolation weights come from the input coordinates, so they stay
    # constants even when the STN makes positions trainable
    src1 = coords[sel1]
    src2 = src1[sel2]
    blocks = [f1, f2]
    for src, feats in ((src1, f3), (src2, f4), (src2, f5)):
        ki = min(net.k_interp, src.shape[0])
        blocks.append(idw_interpolate(src, feats, coords, k_interp=ki))
    blocks.append(Tensor(np.broadcast_to(onehot, (n, cats))))
    x = ag.concat(blocks, axis=-1)
    for i, lin in enumerate(net.head):
        x = lin(x)
        if net.head_norms:
            x = net.head_norms[i](x)
        x = ag.leaky_relu(x, net.slope)
    return net.classifier(x)


def build_model(config: dict) -> Module:
    """Rebuild a network from its ``config`` dictionary."""
    cfg = dict(config)
    kind = cfg.pop("kind", None)
    if kind == "cls":
        return ClassificationNet(**cfg)
    if kind == "seg":
        return SegmentationNet(**cfg)
    raise ConfigError(f"unknown model kind {kind!r}")


# -------------------------------------------------------- parameter tables


@dataclass
class ParamRow:
    name: str
    kind: str
    formula: str
    count: int


def _rows(module, name: str, include_bias: bool) -> Iterator[ParamRow]:
    if isinstance(module, AGConvLayer):
        dims = f"D={module.in_dim},M={module.out_dim},d={module.hidden},c={module.c}"
        formula = "2dD+dcM" + ("+d+cM" if include_bias else "")
        yield ParamRow(name, "agconv", f"{formula} ({dims})", module.param_count(include_bias))
        for sub in ("norm", "shortcut", "shortcut_norm"):
            if getattr(module, sub) is not None:
                yield from _rows(getattr(module, sub), f"{name}.{sub}", include_bias)
    elif isinstance(module, FixedKernelLayer):
        dims = f"D={module.in_dim},M={module.out_dim}"
        if module.variant == "graphconv":
            formula = "2DM" + ("+M" if include_bias else "")
        else:
            a = module.alpha.out_dim
            formula = f"DM+2M*{a}" + (f"+M+{a}" if include_bias else "")
        yield ParamRow(name, module.variant, f"{formula} ({dims})", module.param_count(include_bias))
        if module.norm is not None:
            yield from _rows(module.norm, f"{name}.norm", include_bias)
    elif isinstance(module, Linear):
        formula = "in*out" + ("+out" if include_bias and module.bias is not None else "")
        yield ParamRow(name, "linear", f"{formula} (in={module.in_dim},out={module.out_dim})",
                       module.param_count(include_bias))
    elif isinstance(module, AffineNorm):
        yield ParamRow(name, "norm", ("2F" if include_bias else "F") + f" (F={module.dim})",
                       module.param_count(include_bias))
    elif isinstance(module, Module):
        for attr, value in vars(module).items():
            sub = f"{name}.{attr}" if name else attr
            if isinstance(value, Module):
                yield from _rows(value, sub, include_bias)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from _rows(item, f"{sub}.{i}", include_bias)


def model_param_count(net: Module, include_bias: bool = False) -> tuple[int, list[ParamRow]]:
    """Total parameter count and the per-layer table it sums."""
    rows = list(_rows(net, "", include_bias))
    return sum(r.count for r in rows), rows
