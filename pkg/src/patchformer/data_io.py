"""Dataset ingestion, deterministic stratified splitting, synthetic data.

Directory format: a `labels.csv` (UTF-8, LF, header `path,label`, extra
columns ignored) next to PNG or binary PGM/PPM images. Grayscale images are
expanded to three channels by replication. The synthetic generator writes a
desk-scale, class-separable blob dataset that is byte-reproducible per seed.
"""

from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .images import ImageBuffer, ImageFormatError, load_image, save_image
from .seeding import substream

__all__ = [
    "DataError",
    "DatasetManifest",
    "SplitAssignment",
    "LoadedDataset",
    "thread_cap",
    "load_manifest",
    "load_dataset",
    "split",
    "synth_dataset",
]

SPLIT_NAMES = ("train", "val", "test")
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


class DataError(ValueError):
    """Dataset-level problem: missing file, bad label, malformed csv."""


def thread_cap() -> int:
    """Worker-thread budget; the PATCHFORMER_THREADS env var caps it."""
    env = os.environ.get("PATCHFORMER_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError as exc:
            raise DataError(f"PATCHFORMER_THREADS must be an integer: {env!r}") from exc
        if cap < 1:
            raise DataError(f"PATCHFORMER_THREADS must be >= 1, got {cap}")
        return cap
    return min(8, os.cpu_count() or 1)


@dataclass
class DatasetManifest:
    root: Path
    paths: list[str]  # relative paths, labels.csv order
    labels: np.ndarray  # int64 class indices, dense in [0, K)
    class_names: list[str]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.paths)


@dataclass
class LoadedDataset:
    manifest: DatasetManifest
    images: list[ImageBuffer]

    def stacked(self) -> np.ndarray:
        """(n, H, W, 3) array; raises if image shapes disagree."""
        if not self.images:
            raise DataError("dataset is empty")
        shapes = {img.pixels.shape for img in self.images}
        if len(shapes) != 1:
            raise DataError(f"images have mixed shapes: {sorted(shapes)}")
        return np.stack([img.pixels for img in self.images], axis=0)


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    csv_path = root / "labels.csv"
    if not csv_path.is_file():
        raise DataError(f"missing labels file: {csv_path}")
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{csv_path}: empty file, expected a `path,label` header")
        if [h.strip() for h in header[:2]] != ["path", "label"]:
            raise DataError(
                f"{csv_path}: header must start with `path,label`, got {header!r}"
            )
        paths: list[str] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise DataError(f"{csv_path}:{lineno}: expected `path,label`, got {row!r}")
            rel = row[0].strip()
            try:
                label = int(row[1])
            except ValueError as exc:
                raise DataError(
                    f"{csv_path}:{lineno}: label must be an integer, got {row[1]!r}"
                ) from exc
            if label < 0:
                raise DataError(f"{csv_path}:{lineno}: negative label for {rel!r}")
            if not (root / rel).is_file():
                raise DataError(f"{csv_path}:{lineno}: missing image file {root / rel}")
            paths.append(rel)
            labels.append(label)

    label_arr = np.asarray(labels, dtype=np.int64)
    if len(label_arr):
        num_classes = int(label_arr.max()) + 1
        present = set(label_arr.tolist())
        missing = sorted(set(range(num_classes)) - present)
        if missing:
            raise DataError(
                f"{csv_path}: class indices must be dense in [0, {num_classes}); "
                f"missing {missing}"
            )
    else:
        num_classes = 0
    names_path = root / "classes.txt"
    if names_path.is_file():
        class_names = [
            line.strip()
            for line in names_path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        if len(class_names) != num_classes:
            raise DataError(
                f"{names_path}: {len(class_names)} names for {num_classes} classes"
            )
    else:
        class_names = [str(k) for k in range(num_classes)]
    return DatasetManifest(root, paths, label_arr, class_names)


def load_dataset(root) -> LoadedDataset:
    """Manifest plus decoded images in [0, 1], all expanded to 3 channels.
    Decoding runs on a thread pool; order follows labels.csv."""
    manifest = load_manifest(root)

    def decode(rel: str) -> ImageBuffer:
        try:
            return load_image(manifest.root / rel).to_rgb()
        except (ImageFormatError, OSError) as exc:
            raise DataError(f"cannot decode {manifest.root / rel}: {exc}") from exc

    if not manifest.paths:
        return LoadedDataset(manifest, [])
    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        images = list(pool.map(decode, manifest.paths))
    return LoadedDataset(manifest, images)


@dataclass
class SplitAssignment:
    tags: np.ndarray  # array of "train"/"val"/"test" strings, manifest order
    seed: int

    def indices(self, name: str) -> np.ndarray:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}")
        return np.flatnonzero(self.tags == name)

    def counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.tags == name)) for name in SPLIT_NAMES}


def split(manifest: DatasetManifest, seed: int) -> SplitAssignment:
    """Stratified 0.80/0.10/0.10 assignment, deterministic in the seed.

    Per class, val and test each get round(0.1 * n_c) samples and train the
    residue, so every split lands within one sample of its target. Classes
    with fewer than 3 samples stay entirely in train (with a warning).
    """
    if len(manifest) < 10:
        raise DataError(f"need at least 10 entries to split, got {len(manifest)}")
    rng = substream(seed, "split")
    tags = np.empty(len(manifest), dtype=object)
    for c in range(manifest.num_classes):
        members = np.flatnonzero(manifest.labels == c)
        n_c = len(members)
        if n_c < 3:
            warnings.warn(
                f"class {c} has only {n_c} samples; keeping all in train",
                stacklevel=2,
            )
            tags[members] = "train"
            continue
        order = members[rng.permutation(n_c)]
        n_val = int(np.floor(0.1 * n_c + 0.5))
        n_test = n_val
        tags[order[:n_val]] = "val"
        tags[order[n_val : n_val + n_test]] = "test"
        tags[order[n_val + n_test :]] = "train"
    return SplitAssignment(tags.astype(str), seed)


def _blob_image(
    size: int,
    center: tuple[float, float],
    sigma: float,
    amplitude: float,
    noise: np.ndarray,
) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d2 = (yy - center[0]) ** 2 + (xx - center[1]) ** 2
    img = amplitude * np.exp(-d2 / (2.0 * sigma * sigma)) + noise
    return np.clip(img, 0.0, 1.0)


def synth_dataset(
    num_classes: int,
    per_class: int,
    size: int,
    seed: int,
    out_dir,
) -> DatasetManifest:
    """Write a class-separable blob dataset: one Gaussian blob per image at a
    class-specific ring position with small positional jitter and pixel noise.
    Byte-identical for a fixed seed."""
    if num_classes < 2:
        raise DataError(f"need at least 2 classes, got {num_classes}")
    if per_class < 1 or size < 8:
        raise DataError(f"bad synth shape: per_class={per_class}, size={size}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = substream(seed, "synth")
    half = size / 2.0
    ring = size / 4.0
    rows: list[tuple[str, int]] = []
    index = 0
    for c in range(num_classes):
        angle = 2.0 * np.pi * c / num_classes
        base = (half + ring * np.sin(angle), half + ring * np.cos(angle))
        for _ in range(per_class):
            jitter = rng.normal(0.0, size / 20.0, size=2)
            center = (base[0] + jitter[0], base[1] + jitter[1])
            sigma = size / 8.0 * (1.0 + 0.1 * rng.uniform(-1.0, 1.0))
            noise = rng.normal(0.0, 0.04, size=(size, size))
            pixels = _blob_image(size, center, sigma, 0.85, noise)
            name = f"img_{index:05d}.pgm"
            save_image(out / name, ImageBuffer(pixels[..., None]))
            rows.append((name, c))
            index += 1
    with open(out / "labels.csv", "w", newline="\n", encoding="utf-8") as fh:
        fh.write("path,label\n")
        for name, label in rows:
            fh.write(f"{name},{label}\n")
    labels = np.asarray([label for _, label in rows], dtype=np.int64)
    return DatasetManifest(out, [name for name, _ in rows], labels,
                           [str(k) for k in range(num_classes)])
