"""
Dataset ingestion: manifest files, graymap images resized to the network input,
Gaussian-noise augmentation, stratified splits and shuffled batches.
"""

import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from cachetools import LRUCache, cached
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import tensor as T
from .cam import upsample_bilinear
from .config import settings
from .errors import ConfigError, DataError, ManifestNotFoundError
from .logger import setup_logger
from .pgm import read_pgm

logger = setup_logger(__name__)

HEADER = ["id", "path", "label"]
INPUT_SIZE = 137


class ManifestRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    sample_id: str = Field(min_length=1)
    image_path: str = Field(min_length=1)
    label: Literal[0, 1]


@dataclass(frozen=True)
class DatasetManifest:
    rows: tuple[ManifestRow, ...]
    root: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.sample_id in seen:
                raise DataError(f"duplicate sample id {row.sample_id!r}")
            seen.add(row.sample_id)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def ids(self) -> list[str]:
        return [row.sample_id for row in self.rows]

    @property
    def labels(self) -> list[int]:
        return [row.label for row in self.rows]

    def resolve(self, row: ManifestRow) -> Path:
        path = Path(row.image_path)
        return path if path.is_absolute() else self.root / path

    def subset(self, rows: Sequence[ManifestRow]) -> "DatasetManifest":
        return DatasetManifest(rows=tuple(rows), root=self.root)

    def class_counts(self) -> dict[int, int]:
        return {label: self.labels.count(label) for label in (0, 1)}


@dataclass(frozen=True)
class Sample:
    sample_id: str
    image: np.ndarray  # [1, 137, 137], values in [0, 1]
    label: int


class NoiseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma: float = Field(0.05, ge=0.0)
    seed: int = Field(0, ge=0)


def load_manifest(path) -> DatasetManifest:
    """Read an `id,path,label` manifest; image paths resolve against its directory"""
    path = Path(path)
    if not path.is_file():
        raise ManifestNotFoundError(f"manifest not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise DataError(f"{path}: missing header line {','.join(HEADER)!r}") from e
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: malformed row: {e}") from e

    if list(frame.columns) != HEADER:
        raise DataError(f"{path}: header must be {','.join(HEADER)!r}, got {','.join(frame.columns)!r}")

    rows = []
    for index, record in enumerate(frame.itertuples(index=False)):
        line = index + 2
        if all(pd.isna(value) or value == "" for value in record):
            continue
        if record.label not in ("0", "1"):
            raise DataError(f"{path}:{line}: bad label value {record.label!r} (expected 0 or 1)")
        try:
            rows.append(ManifestRow(sample_id=record.id, image_path=record.path, label=int(record.label)))
        except ValidationError as e:
            raise DataError(f"{path}:{line}: malformed row ({e.errors()[0]['loc'][0]} is empty)") from e
    manifest = DatasetManifest(rows=tuple(rows), root=path.parent)
    logger.info(f"Loaded manifest {path}: {len(manifest)} rows, classes {manifest.class_counts()}")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> Path:
    """Write the manifest with image paths relative to its new location"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [(row.sample_id,
          Path(os.path.relpath(manifest.resolve(row).resolve(), path.parent.resolve())).as_posix(),
          row.label) for row in manifest],
        columns=HEADER
    )
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    return path


def load_image(path) -> np.ndarray:
    """Graymap pixels scaled to [0, 1]"""
    return read_pgm(path)


def resize_to_input(grid: np.ndarray, size: int = INPUT_SIZE) -> np.ndarray:
    """Bilinear resample to [1, size, size]; a size x size grid passes through unchanged"""
    return upsample_bilinear(np.asarray(grid), (size, size))[None, :, :]


def add_gaussian_noise(image: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """clamp(image + N(0, sigma^2), 0, 1), seed-deterministic"""
    if spec.sigma == 0.0:
        return image.copy()
    rng = np.random.default_rng(spec.seed)
    noisy = image + rng.normal(0.0, spec.sigma, size=image.shape)
    return np.clip(noisy, 0.0, 1.0).astype(image.dtype)


@cached(cache=LRUCache(maxsize=max(settings.IMAGE_CACHE_SIZE, 1)), lock=threading.Lock())
def _load_input(path: Path, size: int) -> np.ndarray:
    image = resize_to_input(load_image(path), size)
    image.flags.writeable = False
    return image


def load_sample(manifest: DatasetManifest, row: ManifestRow, size: int = INPUT_SIZE) -> Sample:
    image = _load_input(manifest.resolve(row).resolve(), size)
    return Sample(sample_id=row.sample_id, image=image, label=row.label)


def load_samples(manifest: DatasetManifest, size: int = INPUT_SIZE) -> list[Sample]:
    return [load_sample(manifest, row, size) for row in manifest]


def split(manifest: DatasetManifest, fractions: Sequence[float], seed: int
          ) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Per-class shuffled (train, val, test) partition; rows keep manifest order"""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {tuple(fractions)}")
    _, f_val, f_test = fractions

    assignment: dict[str, int] = {}
    for label in (0, 1):
        ids = [row.sample_id for row in manifest if row.label == label]
        n = len(ids)
        n_test = min(int(round(n * f_test)), n)
        n_val = min(int(round(n * f_val)), n - n_test)
        order = np.random.default_rng(T.derive_seed(seed, label)).permutation(n)
        for rank, index in enumerate(order):
            assignment[ids[index]] = 2 if rank < n_test else 1 if rank < n_test + n_val else 0

    parts = tuple(manifest.subset([row for row in manifest if assignment[row.sample_id] == part])
                  for part in (0, 1, 2))
    logger.info(f"Split {len(manifest)} rows into train/val/test = {[len(p) for p in parts]}")
    return parts


def batches(manifest: DatasetManifest, batch_size: int, seed: int,
            augment: Optional[NoiseSpec] = None, size: int = INPUT_SIZE) -> Iterator[list[Sample]]:
    """One epoch of shuffled batches; the final batch may be short"""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(manifest))
    for start in range(0, len(order), batch_size):
        batch = []
        for position in order[start:start + batch_size]:
            sample = load_sample(manifest, manifest.rows[position], size)
            if augment is not None and augment.sigma > 0:
                noise = NoiseSpec(sigma=augment.sigma, seed=T.derive_seed(augment.seed, seed, int(position)))
                sample = Sample(sample.sample_id, add_gaussian_noise(sample.image, noise), sample.label)
            batch.append(sample)
        yield batch
