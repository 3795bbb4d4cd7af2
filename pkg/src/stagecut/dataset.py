"""Empirical datasets: CIFAR-10 binary batches, CSV tables, synthetic clusters."""

from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from stagecut.errors import FormatError

CIFAR_RECORD_BYTES = 3073
CIFAR_PIXELS = 3072
DATA_DIR_ENV = "STAGECUT_DATA_DIR"


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset:
    """N points of dimension n, stored as a read-only ``(N, n)`` float64 array."""

    points: np.ndarray
    range: tuple[float, float] = (0.0, 1.0)
    source: str = ""

    def __post_init__(self):
        # Read-only view, not a copy: CIFAR-scale arrays are over 1 GB.
        pts = np.asarray(self.points, dtype=np.float64).view()
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"points must be a non-empty (N, n) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite values")
        lo, hi = (float(v) for v in self.range)
        if lo > hi:
            raise ValueError(f"invalid range {self.range}")
        if pts.min() < lo or pts.max() > hi:
            raise ValueError(
                f"points span [{pts.min()}, {pts.max()}], outside declared range [{lo}, {hi}]"
            )
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "range", (lo, hi))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @functools.cached_property
    def sq_norms(self) -> np.ndarray:
        norms = np.einsum("ij,ij->i", self.points, self.points)
        norms.setflags(write=False)
        return norms

    def fingerprint(self) -> dict:
        digest = hashlib.sha256(np.ascontiguousarray(self.points).tobytes()).hexdigest()
        return {"size": self.size, "dim": self.dim, "sha256": digest}


def resolve_path(path: str | os.PathLike) -> Path:
    """Return `path`, falling back to ``$STAGECUT_DATA_DIR/path`` for missing relative paths."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    root = os.environ.get(DATA_DIR_ENV)
    if root and (Path(root) / p).exists():
        return Path(root) / p
    return p


def find_cifar_batches(root: str | os.PathLike | None = None, split: str = "train") -> list[Path]:
    """Locate the standard binary batch files under `root` (or the data-dir env var)."""
    if root is None:
        root = os.environ.get(DATA_DIR_ENV)
        if not root:
            raise FileNotFoundError(f"no dataset root given and ${DATA_DIR_ENV} is unset")
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    names = (
        [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    )
    for base in (Path(root), Path(root) / "cifar-10-batches-bin"):
        files = [base / name for name in names]
        if all(f.is_file() for f in files):
            return files
    raise FileNotFoundError(f"CIFAR-10 {split} batches ({', '.join(names)}) not found under {root}")


def load_cifar10(
    paths: Sequence[str | os.PathLike], data_range: tuple[float, float] = (0.0, 1.0)
) -> Dataset:
    """Read CIFAR-10 binary records, dropping labels.

    Each 3073-byte record is one label byte followed by 3072 channel-planar
    pixel bytes. Pixels map to ``lo + (hi - lo) * byte / 255``.
    """
    if not paths:
        raise ValueError("load_cifar10 needs at least one file")
    chunks = []
    for path in paths:
        p = resolve_path(path)
        raw = np.fromfile(p, dtype=np.uint8)
        residue = raw.size % CIFAR_RECORD_BYTES
        if residue:
            raise FormatError(
                f"{p}: length {raw.size} is not a multiple of {CIFAR_RECORD_BYTES} "
                f"(residue {residue})"
            )
        chunks.append(raw.reshape(-1, CIFAR_RECORD_BYTES)[:, 1:])
    pixels = np.concatenate(chunks)
    if pixels.shape[0] == 0:
        raise FormatError("CIFAR-10 files contain no records")
    lo, hi = data_range
    values = pixels / 255.0
    if (lo, hi) != (0.0, 1.0):
        values = lo + (hi - lo) * values
    return Dataset(values, range=(lo, hi), source="cifar10:" + ",".join(str(p) for p in paths))


def load_csv(path: str | os.PathLike) -> Dataset:
    p = resolve_path(path)
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{p}: empty file, expected a header row") from None
        width = len(header)
        rows = []
        for row_idx, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != width:
                raise FormatError(f"{p}: row {row_idx} has {len(row)} cells, expected {width}")
            values = []
            for col_idx, cell in enumerate(row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise FormatError(
                        f"{p}: row {row_idx}, column {col_idx}: cannot parse {cell!r}"
                    ) from None
            rows.append(values)
    if not rows:
        raise FormatError(f"{p}: no data rows")
    pts = np.array(rows)
    return Dataset(pts, range=(float(pts.min()), float(pts.max())), source=f"csv:{p}")


def write_csv(dataset: Dataset, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(dataset.dim)])
        for row in dataset.points:
            writer.writerow([repr(float(v)) for v in row])


def synth_clusters(
    centers: Sequence[Sequence[float]], per_center: int, spread: float, seed: int
) -> Dataset:
    """Isotropic Gaussian blobs around `centers`, grouped center by center."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if centers.size == 0:
        raise ValueError("centers must be non-empty")
    if per_center < 1:
        raise ValueError(f"per_center must be >= 1, got {per_center}")
    if spread < 0:
        raise ValueError(f"spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    pts = np.repeat(centers, per_center, axis=0)
    if spread > 0:
        pts = pts + spread * rng.standard_normal(pts.shape)
    return Dataset(
        pts,
        range=(float(pts.min()), float(pts.max())),
        source=f"synth:k={len(centers)},per={per_center},spread={spread},seed={seed}",
    )


def subsample(dataset: Dataset, m: int, seed: int) -> Dataset:
    if not 1 <= m <= dataset.size:
        raise ValueError(f"m must lie in [1, {dataset.size}], got {m}")
    order = np.random.default_rng(seed).permutation(dataset.size)[:m]
    return Dataset(
        dataset.points[order],
        range=dataset.range,
        source=f"{dataset.source}|subsample(m={m},seed={seed})",
    )
