"""Point clouds: data model, ASCII ``.xyz`` I/O, synthetic shapes, augmentation
and the corruptions used by the robustness sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, DegenerateCloudError, FormatError, InputError, ParseError

SHAPES = ("sphere", "cube", "torus")
CLASS_IDS = {name: i for i, name in enumerate(SHAPES)}
PART_COUNTS = {"sphere": 2, "cube": 6, "torus": 2}
TORUS_MAJOR = 0.7
TORUS_MINOR = 0.3
MIN_POINTS = 8


@dataclass
class PointCloud:
    coords: np.ndarray
    normals: np.ndarray | None = None
    point_labels: np.ndarray | None = None
    class_label: int | None = None
    category_count: int | None = None
    part_count: int | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        n = self.coords.shape[0]
        if n < 1:
            raise InputError("a point cloud needs at least one point")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape[0] != n:
                raise InputError(f"{self.normals.shape[0]} normals for {n} points")
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise InputError("normals must have unit length")
        if self.point_labels is not None:
            self.point_labels = np.asarray(self.point_labels, dtype=np.int64).reshape(-1)
            if self.point_labels.shape[0] != n:
                raise InputError(f"{self.point_labels.shape[0]} labels for {n} points")
            if self.part_count is not None and self.point_labels.size:
                if self.point_labels.max() >= self.part_count or self.point_labels.min() < 0:
                    raise InputError("point label outside the declared part count")

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def subset(self, idx: np.ndarray) -> "PointCloud":
        idx = np.asarray(idx, dtype=np.intp)
        return replace(
            self,
            coords=self.coords[idx],
            normals=None if self.normals is None else self.normals[idx],
            point_labels=None if self.point_labels is None else self.point_labels[idx],
        )

    def with_coords(self, coords: np.ndarray, normals: np.ndarray | None = None) -> "PointCloud":
        return replace(self, coords=coords, normals=self.normals if normals is None else normals)


@dataclass
class Dataset:
    clouds: list[PointCloud]
    splits: list[str]
    seed: int = 0
    paths: list[str] = field(default_factory=list)

    def split(self, name: str) -> list[PointCloud]:
        return [c for c, s in zip(self.clouds, self.splits) if s == name]

    def __len__(self) -> int:
        return len(self.clouds)


# ---------------------------------------------------------------- file I/O


def load_xyz(path) -> PointCloud:
    """Read ``x y z [nx ny nz] [label]`` rows; ``#`` lines are comments."""
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 4, 6, 7):
                raise ParseError(f"expected 3, 4, 6 or 7 columns, got {len(parts)}", lineno)
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise FormatError(f"{len(parts)} columns after {width}-column rows", lineno)
            try:
                rows.append([float(v) for v in parts])
            except ValueError as err:
                raise ParseError(str(err), lineno) from None
    if not rows:
        raise ParseError(f"{path}: no points")
    arr = np.array(rows)
    normals = arr[:, 3:6] if width >= 6 else None
    labels = arr[:, -1] if width in (4, 7) else None
    if labels is not None:
        if np.any(labels != np.round(labels)):
            raise FormatError("label column must hold integers")
        labels = labels.astype(np.int64)
    return PointCloud(arr[:, :3], normals=normals, point_labels=labels)


def save_xyz(cloud: PointCloud, path) -> None:
    cols = [cloud.coords]
    if cloud.normals is not None:
        cols.append(cloud.normals)
    data = np.hstack(cols)
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(data):
            line = " ".join(repr(float(v)) for v in row)
            if cloud.point_labels is not None:
                line += f" {int(cloud.point_labels[i])}"
            fh.write(line + "\n")


def write_manifest(entries: Sequence[tuple[str, str, int]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rel, split, label in entries:
            fh.write(f"{rel} {split} {label}\n")


def load_manifest(path) -> Dataset:
    """Load a dataset listed as ``path split class_label`` lines."""
    base = Path(path).parent
    clouds, splits, paths = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3 or parts[1] not in ("train", "test"):
                raise ParseError("expected 'path split class_label'", lineno)
            cloud = load_xyz(base / parts[0])
            cloud.class_label = int(parts[2])
            cloud.category_count = len(SHAPES)
            if 0 <= cloud.class_label < len(SHAPES):
                cloud.part_count = PART_COUNTS[SHAPES[cloud.class_label]]
            clouds.append(cloud)
            splits.append(parts[1])
            paths.append(parts[0])
    if not clouds:
        raise ConfigError(f"manifest {path} lists no clouds")
    return Dataset(clouds, splits, paths=paths)


# --------------------------------------------------------- synthetic shapes


def normalize_unit_sphere(coords: np.ndarray) -> np.ndarray:
    centered = coords - coords.mean(axis=0)
    radius = np.sqrt((centered**2).sum(axis=1)).max()
    if radius == 0:
        return centered
    out = centered / radius
    # rounding can leave the farthest point a few ulps above 1
    over = np.sqrt((out**2).sum(axis=1)).max()
    if over > 1.0:
        out /= over * (1.0 + 1e-15)
    return out


def _sample_cube(n, rng):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    coords = np.empty((n, 3))
    normals = np.zeros((n, 3))
    for a in range(3):
        sel = axis == a
        others = [b for b in range(3) if b != a]
        coords[sel, a] = sign[sel]
        coords[sel, others[0]] = uv[sel, 0]
        coords[sel, others[1]] = uv[sel, 1]
        normals[sel, a] = sign[sel]
    return coords, normals, face


def _sample_sphere(n, rng):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v, v.copy(), (v[:, 2] < 0).astype(np.int64)


def _sample_torus(n, rng):
    big, small = TORUS_MAJOR, TORUS_MINOR
    # area element is proportional to (R + r cos v); rejection-sample v
    vs = np.empty(0)
    while vs.size < n:
        cand = rng.uniform(0.0, 2.0 * np.pi, size=2 * n)
        keep = rng.uniform(0.0, big + small, size=2 * n) < big + small * np.cos(cand)
        vs = np.concatenate([vs, cand[keep]])
    v = vs[:n]
    u = rng.uniform(0.0, 2.0 * np.pi, size=n)
    ring = big + small * np.cos(v)
    coords = np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)], axis=1)
    normals = np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)], axis=1)
    labels = (np.cos(v) >= 0).astype(np.int64)  # 0 = inner half, 1 = outer half
    return coords, normals, labels


_SAMPLERS = {"sphere": _sample_sphere, "cube": _sample_cube, "torus": _sample_torus}


def gen_synthetic(shape: str, n: int, seed=0) -> PointCloud:
    """Sample ``n`` surface points of a unit-normalized sphere, cube or torus.

    Normals are analytic and part labels are attached (hemispheres, cube
    faces, inner/outer torus halves).
    """
    if shape not in _SAMPLERS:
        raise ConfigError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    if n < MIN_POINTS:
        raise ConfigError(f"need at least {MIN_POINTS} points, got {n}")
    rng = np.random.default_rng(seed)
    coords, normals, labels = _SAMPLERS[shape](n, rng)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(
        normalize_unit_sphere(coords),
        normals=normals,
        point_labels=labels,
        class_label=CLASS_IDS[shape],
        category_count=len(SHAPES),
        part_count=PART_COUNTS[shape],
    )


def build_synthetic_dataset(
    n_train: int,
    n_test: int,
    n_points: int,
    seed: int = 0,
    shapes: Sequence[str] = SHAPES,
) -> Dataset:
    """Balanced dataset: cloud ``i`` has shape ``shapes[i % len(shapes)]`` and
    is a train cloud iff ``i < n_train``. Each cloud is seeded by ``(seed, i)``.
    """
    total = n_train + n_test
    if total < 1:
        raise ConfigError("dataset must contain at least one cloud")
    clouds, splits = [], []
    for i in range(total):
        clouds.append(gen_synthetic(shapes[i % len(shapes)], n_points, seed=[seed, i]))
        splits.append("train" if i < n_train else "test")
    return Dataset(clouds, splits, seed=seed)


def write_dataset(dataset: Dataset, directory) -> Path:
    """Write each cloud as ``.xyz`` plus ``manifest.txt``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (cloud, split) in enumerate(zip(dataset.clouds, dataset.splits)):
        name = f"cloud_{i:05d}.xyz"
        save_xyz(cloud, directory / name)
        entries.append((name, split, -1 if cloud.class_label is None else cloud.class_label))
    manifest = directory / "manifest.txt"
    write_manifest(entries, manifest)
    return manifest


# ---------------------------------------------------- augmentation/corruption


@dataclass
class AugmentConfig:
    scale_low: float = 0.8
    scale_high: float = 1.25
    shift: float = 0.1
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05


def augment(cloud: PointCloud, seed=0, config: AugmentConfig | None = None) -> PointCloud:
    """Random isotropic scale, translation and clipped Gaussian jitter."""
    cfg = config or AugmentConfig()
    rng = np.random.default_rng(seed)
    s = rng.uniform(cfg.scale_low, cfg.scale_high)
    t = rng.uniform(-cfg.shift, cfg.shift, size=3)
    jitter = np.clip(
        cfg.jitter_sigma * rng.standard_normal(cloud.coords.shape), -cfg.jitter_clip, cfg.jitter_clip
    )
    return cloud.with_coords(cloud.coords * s + t + jitter)


def dropout_indices(n: int, keep_fraction: float, seed=0) -> np.ndarray:
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    m = math.ceil(keep_fraction * n - 1e-9)
    if m < MIN_POINTS:
        raise DegenerateCloudError(f"dropout leaves {m} points (< {MIN_POINTS})")
    if m == n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=m, replace=False))


def corrupt_dropout(cloud: PointCloud, keep_fraction: float, seed=0) -> PointCloud:
    """Keep ``ceil(keep_fraction * N)`` uniformly chosen points (original order)."""
    return cloud.subset(dropout_indices(cloud.n, keep_fraction, seed))


def corrupt_noise(cloud: PointCloud, sigma_rel: float, seed=0) -> PointCloud:
    """Isotropic Gaussian noise scaled by the cloud's radius about its centroid."""
    if sigma_rel < 0:
        raise ConfigError("sigma_rel must be non-negative")
    if sigma_rel == 0:
        return cloud.with_coords(cloud.coords.copy())
    radius = np.linalg.norm(cloud.coords - cloud.coords.mean(axis=0), axis=1).max()
    rng = np.random.default_rng(seed)
    return cloud.with_coords(cloud.coords + sigma_rel * radius * rng.standard_normal(cloud.coords.shape))

