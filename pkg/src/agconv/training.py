"""Training loop, evaluation and the robustness sweep."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import autograd as ag
from .checkpoint import save_checkpoint
from .config import TrainConfig, config_to_text
from .exceptions import ConfigError, TrainingDivergedError
from .layers import Module
from .metrics import MetricsReport, accuracy_scores, instance_and_class_miou, part_iou
from .models import ClassificationNet, SegmentationNet
from .optim import SGD, clip_grad_norm, cosine_lr
from .pointcloud import (
    CLASS_IDS,
    PART_COUNTS,
    SHAPES,
    Dataset,
    PointCloud,
    augment,
    build_synthetic_dataset,
    corrupt_dropout,
    corrupt_noise,
    load_manifest,
)

log = logging.getLogger(__name__)

ROBUSTNESS_HEADER = "keep_fraction,sigma,oa,macc,miou"


def build_net(cfg: TrainConfig) -> Module:
    if cfg.task == "cls":
        kw = dict(widths=cfg.widths) if cfg.widths else {}
        return ClassificationNet(
            num_classes=len(SHAPES), k=cfg.k, conv=cfg.conv, hidden=cfg.hidden, emb=cfg.emb,
            head=cfg.head, norm=cfg.norm, slope=cfg.slope, seed=cfg.seed, **kw,
        )
    kw = dict(widths=cfg.widths) if cfg.widths else {}
    return SegmentationNet(
        num_parts=max(PART_COUNTS[s] for s in cfg.shapes), category_count=len(SHAPES), k=cfg.k,
        hidden=cfg.hidden, head=cfg.head, use_normals=cfg.use_normals, stn=cfg.stn, norm=cfg.norm,
        slope=cfg.slope, seed=cfg.seed, **kw,
    )


def resolve_dataset(cfg: TrainConfig) -> Dataset:
    if cfg.data:
        return load_manifest(cfg.data)
    unknown = [s for s in cfg.shapes if s not in CLASS_IDS]
    if unknown:
        raise ConfigError(f"unknown shapes {unknown}")
    return build_synthetic_dataset(cfg.n_train, cfg.n_test, cfg.n_points, cfg.seed, cfg.shapes)


def sample_loss(net: Module, cloud: PointCloud, task: str) -> ag.Tensor:
    if task == "cls":
        return ag.cross_entropy(net(cloud), cloud.class_label)
    return ag.cross_entropy(net(cloud), cloud.point_labels)


@contextmanager
def _executor(threads: int):
    # BLAS is pinned to one thread so results do not depend on the thread count
    with threadpool_limits(limits=1):
        if threads == 1:
            yield map
        else:
            with ThreadPoolExecutor(max_workers=threads or os.cpu_count() or 1) as pool:
                yield pool.map


def _sample_grads(net, task, cloud):
    with ag.Tape() as tape:
        loss = sample_loss(net, cloud, task)
    return loss.item(), ag.backward(loss, tape, accumulate=False)


def train_step(
    net: Module, opt: SGD, clouds: Sequence[PointCloud], task: str, lr: float, mapper=map, grad_clip: float = 0.0
) -> float:
    """One minibatch update; per-sample gradients are merged in sample order."""
    results = list(mapper(lambda c: _sample_grads(net, task, c), clouds))
    for p in opt.params:
        total = None
        for _, grads in results:
            g = grads.get(p)
            if g is not None:
                total = g.copy() if total is None else total + g
        p.grad = np.zeros_like(p.data) if total is None else total / len(clouds)
    clip_grad_norm(opt.params, grad_clip)
    opt.step(lr)
    return float(np.mean([loss for loss, _ in results]))


def evaluate(net: Module, clouds: Sequence[PointCloud], task: str, mapper=map) -> dict:
    """Loss and accuracy metrics of ``net`` on ``clouds``."""

    def run(cloud):
        logits = net(cloud)
        if task == "cls":
            return ag.cross_entropy(logits, cloud.class_label).item(), int(np.argmax(logits.data))
        return ag.cross_entropy(logits, cloud.point_labels).item(), np.argmax(logits.data, axis=1)

    outs = list(mapper(run, clouds))
    loss = float(np.mean([o[0] for o in outs])) if outs else float("nan")
    if task == "cls":
        oa, macc, per_class = accuracy_scores([o[1] for o in outs], [c.class_label for c in clouds])
        return dict(loss=loss, oa=oa, macc=macc, miou=None, mciou=None, per_class=per_class)
    preds = np.concatenate([o[1] for o in outs])
    truth = np.concatenate([c.point_labels for c in clouds])
    oa, macc, per_class = accuracy_scores(preds, truth)
    shape_ious = [
        part_iou(o[1], c.point_labels, c.part_count or net.num_parts)[1] for o, c in zip(outs, clouds)
    ]
    miou, mciou = instance_and_class_miou(shape_ious, [c.class_label for c in clouds])
    return dict(loss=loss, oa=oa, macc=macc, miou=miou, mciou=mciou, per_class=per_class)


def fit(
    net: Module,
    train_set: Sequence[PointCloud],
    test_set: Sequence[PointCloud],
    cfg: TrainConfig,
) -> MetricsReport:
    """Train ``net`` in place with SGD momentum and a per-step cosine schedule."""
    if not train_set:
        raise ConfigError("training split is empty")
    opt = SGD(net.parameters(), cfg.momentum)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total = max(1, cfg.epochs * steps_per_epoch)
    aug_cfg = cfg.augment_config()
    report = MetricsReport()
    step = 0
    with _executor(cfg.threads) as mapper:
        for epoch in range(cfg.epochs):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
            losses = []
            for b in range(steps_per_epoch):
                idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                batch = [
                    augment(train_set[i], [cfg.seed, epoch, int(i)], aug_cfg) if cfg.augment else train_set[i]
                    for i in idx
                ]
                loss = train_step(net, opt, batch, cfg.task, cosine_lr(step, total, cfg.lr_max, cfg.lr_min), mapper,
                                  cfg.grad_clip)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(step)
                losses.append(loss)
                step += 1
            train_loss = float(np.mean(losses))
            report.loss_curve.append(train_loss)
            report.history.append(dict(epoch=epoch, split="train", loss=train_loss))
            if test_set:
                m = evaluate(net, test_set, cfg.task, mapper)
                report.history.append(dict(epoch=epoch, split="test", **m))
                log.info("epoch %d loss %.4f test oa %.4f", epoch, train_loss, m["oa"])
        if cfg.epochs == 0 and test_set:
            m = evaluate(net, test_set, cfg.task, mapper)
            report.history.append(dict(epoch=0, split="test", **m))
    final = report.history[-1] if report.history and report.history[-1]["split"] == "test" else None
    if final is not None:
        report.oa, report.macc = final["oa"], final["macc"]
        report.miou, report.mciou = final["miou"], final["mciou"]
        report.per_class = final["per_class"]
    return report


def train(cfg: TrainConfig, out_dir=None) -> tuple[MetricsReport, Module]:
    """Train from a config; writes ``model.agck``, ``metrics.csv`` and ``config.txt`` to ``out_dir``."""
    dataset = resolve_dataset(cfg)
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    net = build_net(cfg)
    report = fit(net, dataset.split("train"), dataset.split("test"), cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(net, out / "model.agck")
        (out / "metrics.csv").write_text(report.to_csv())
        (out / "config.txt").write_text(config_to_text(cfg))
    return report, net


def robustness_sweep(
    net: Module,
    clouds: Sequence[PointCloud],
    task: str = "cls",
    keep_fractions: Sequence[float] = (1.0, 0.75, 0.5, 0.25),
    noise_levels: Sequence[float] = (0.0, 0.02, 0.05),
    seed: int = 0,
    threads: int = 1,
) -> list[dict]:
    """Evaluate on dropped-out and noisy copies of ``clouds``; one row per
    (keep fraction, sigma) pair."""
    rows = []
    with _executor(threads) as mapper:
        for ki, keep in enumerate(keep_fractions):
            for si, sigma in enumerate(noise_levels):
                corrupted = [
                    corrupt_noise(corrupt_dropout(c, keep, [seed, 0, ki, i]), sigma, [seed, 1, si, i])
                    for i, c in enumerate(clouds)
                ]
                m = evaluate(net, corrupted, task, mapper)
                rows.append(dict(keep_fraction=keep, sigma=sigma, oa=m["oa"], macc=m["macc"], miou=m["miou"]))
    return rows


def robustness_csv(rows: Sequence[dict]) -> str:
    keys = ROBUSTNESS_HEADER.split(",")
    lines = [ROBUSTNESS_HEADER]
    for row in rows:
        lines.append(",".join("" if row[k] is None else repr(float(row[k])) for k in keys))
    return "\n".join(lines) + "\n"
