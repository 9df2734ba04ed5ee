"""scikit-learn style wrappers around the classification and segmentation networks.

Inputs are sequences of clouds: each item is a :class:`PointCloud` or an
``N x 3`` coordinate array. Clouds may differ in size, so ``X`` is never
stacked into a single array.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import TrainConfig
from .exceptions import InputError
from .metrics import part_iou
from .models import ClassificationNet, SegmentationNet
from .pointcloud import PointCloud
from .training import _executor, fit


def check_cloud(cloud) -> PointCloud:
    """Coerce one cloud to :class:`PointCloud`, rejecting non-finite or mis-shaped input."""
    if isinstance(cloud, PointCloud):
        coords = cloud.coords
    else:
        coords = np.asarray(cloud, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise InputError(f"expected an N x 3 coordinate array, got shape {coords.shape}")
        cloud = PointCloud(coords)
    if not np.all(np.isfinite(coords)):
        raise InputError("cloud contains non-finite coordinates")
    return cloud


def check_clouds(X) -> list[PointCloud]:
    if isinstance(X, (PointCloud, np.ndarray)) and not (isinstance(X, np.ndarray) and X.ndim == 3):
        raise InputError("X must be a sequence of clouds, not a single cloud")
    clouds = [check_cloud(c) for c in X]
    if not clouds:
        raise InputError("X is empty")
    return clouds


def _check_lengths(clouds, y) -> None:
    if len(clouds) != len(y):
        raise InputError(f"{len(clouds)} clouds but {len(y)} targets")


class _NetEstimator(BaseEstimator):
    _task = "cls"

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            task=self._task, epochs=self.epochs, batch_size=self.batch_size, lr_max=self.lr_max,
            lr_min=self.lr_min, momentum=self.momentum, grad_clip=self.grad_clip, k=self.k,
            hidden=self.hidden, norm=self.norm, augment=self.augment, seed=self.seed, threads=self.threads,
        )

    def _map(self, fn, clouds):
        with _executor(self.threads) as mapper:
            return list(mapper(fn, clouds))


class AGConvClassifier(ClassifierMixin, _NetEstimator):
    """Point-cloud classifier; ``conv`` selects the first two layers' operator."""

    def __init__(self, conv="agconv", k=20, hidden=64, widths=(64, 64, 128, 256), emb=1024, head=(512, 256),
                 epochs=10, batch_size=8, lr_max=0.1, lr_min=0.001, momentum=0.9, grad_clip=1.0,
                 norm=True, augment=True, seed=0, threads=1):
        self.conv = conv
        self.k = k
        self.hidden = hidden
        self.widths = widths
        self.emb = emb
        self.head = head
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.norm = norm
        self.augment = augment
        self.seed = seed
        self.threads = threads

    def fit(self, X, y):
        clouds = check_clouds(X)
        y = np.asarray(y)
        _check_lengths(clouds, y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        train_set = [
            PointCloud(c.coords, c.normals, c.point_labels, int(lbl), c.category_count, c.part_count)
            for c, lbl in zip(clouds, encoded)
        ]
        self.net_ = ClassificationNet(
            num_classes=len(self.classes_), k=self.k, conv=self.conv, hidden=self.hidden, widths=tuple(self.widths),
            emb=self.emb, head=tuple(self.head), norm=self.norm, seed=self.seed,
        )
        self.report_ = fit(self.net_, train_set, [], self._train_config())
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        return np.stack(self._map(lambda c: self.net_(c).data, check_clouds(X)))

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class AGConvSegmenter(_NetEstimator):
    """Per-point part labeller; ``score`` is the mean shape IoU.

    ``categories`` gives each cloud's category index for the one-hot input;
    it defaults to each cloud's ``class_label`` or 0.
    """

    _task = "seg"

    def __init__(self, num_parts=6, category_count=3, k=20, hidden=64, widths=(64, 64, 128, 128, 256),
                 head=(512, 256), use_normals=False, stn=False, epochs=10, batch_size=8, lr_max=0.1,
                 lr_min=0.001, momentum=0.9, grad_clip=1.0, norm=True, augment=True, seed=0, threads=1):
        self.num_parts = num_parts
        self.category_count = category_count
        self.k = k
        self.hidden = hidden
        self.widths = widths
        self.head = head
        self.use_normals = use_normals
        self.stn = stn
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.norm = norm
        self.augment = augment
        self.seed = seed
        self.threads = threads

    def _with_categories(self, clouds: Sequence[PointCloud], categories) -> list[PointCloud]:
        if categories is None:
            categories = [0 if c.class_label is None else c.class_label for c in clouds]
        if len(categories) != len(clouds):
            raise InputError(f"{len(clouds)} clouds but {len(categories)} categories")
        out = []
        for c, cat in zip(clouds, categories):
            if not 0 <= int(cat) < self.category_count:
                raise InputError(f"category {cat} outside [0, {self.category_count})")
            out.append(PointCloud(c.coords, c.normals, c.point_labels, int(cat), self.category_count, c.part_count))
        return out

    def fit(self, X, y, categories=None):
        clouds = check_clouds(X)
        _check_lengths(clouds, y)
        labelled = []
        for c, labels in zip(clouds, y):
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (c.n,):
                raise InputError(f"expected {c.n} point labels, got shape {labels.shape}")
            if labels.min() < 0 or labels.max() >= self.num_parts:
                raise InputError(f"point labels must lie in [0, {self.num_parts})")
            labelled.append(PointCloud(c.coords, c.normals, labels, c.class_label, part_count=self.num_parts))
        train_set = self._with_categories(labelled, categories)
        self.net_ = SegmentationNet(
            num_parts=self.num_parts, category_count=self.category_count, k=self.k, hidden=self.hidden,
            widths=tuple(self.widths), head=tuple(self.head), use_normals=self.use_normals, stn=self.stn,
            norm=self.norm, seed=self.seed,
        )
        self.report_ = fit(self.net_, train_set, [], self._train_config())
        return self

    def predict(self, X, categories=None) -> list[np.ndarray]:
        check_is_fitted(self, "net_")
        clouds = self._with_categories(check_clouds(X), categories)
        return self._map(lambda c: np.argmax(self.net_(c).data, axis=1), clouds)

    def score(self, X, y, categories=None) -> float:
        preds = self.predict(X, categories)
        _check_lengths(preds, y)
        return float(np.mean([part_iou(p, t, self.num_parts)[1] for p, t in zip(preds, y)]))
