"""
Synthetic two-class hand-radiograph proxies.

Each image is a stylized left hand (fingers, palm bones, wrist cluster, two
forearm bones) drawn on a 137x137 grid. Both classes share every structure
except the wrist band: class 0 gets one thick fused blob, class 1 four thin
blobs separated by gaps. Mean wrist-band intensity therefore separates the
classes by construction.
"""

from pathlib import Path

import numpy as np

from . import tensor as T
from .data import DatasetManifest, ManifestRow, save_manifest
from .errors import DataError
from .logger import setup_logger
from .pgm import read_pgm, write_pgm

logger = setup_logger(__name__)

SIZE = 137
MANIFEST_NAME = "manifest.csv"
CLASS_PREFIX = {0: "male", 1: "female"}

# wrist band rows, as fractions of the image height
WRIST_BAND = (0.65, 0.82)


def _ellipse(canvas, yy, xx, cy, cx, ry, rx, value):
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    np.maximum(canvas, np.where(inside, value, 0.0), out=canvas)


def _box(canvas, yy, xx, top, bottom, left, right, value):
    inside = (yy >= top) & (yy < bottom) & (xx >= left) & (xx < right)
    np.maximum(canvas, np.where(inside, value, 0.0), out=canvas)


def render_hand(label: int, rng: np.random.Generator, size: int = SIZE) -> np.ndarray:
    """One [size, size] grid in [0, 1]"""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    yy, xx = np.mgrid[0:size, 0:size] / size
    canvas = np.full((size, size), 0.08)

    def jitter(scale):
        return rng.uniform(-scale, scale)

    # soft tissue
    _ellipse(canvas, yy, xx, 0.58 + jitter(0.01), 0.5 + jitter(0.01), 0.30, 0.30, 0.22)
    _box(canvas, yy, xx, 0.82, 1.0, 0.28, 0.72, 0.22)

    # phalanges: five fingers of three segments, thumb set lower
    bone = rng.uniform(0.7, 0.8)
    for finger, cx in enumerate((0.22, 0.34, 0.46, 0.58, 0.70)):
        top = (0.30 if finger == 0 else 0.06) + jitter(0.02)
        length = (0.44 - top) / 3
        for segment in range(3):
            cy = top + (segment + 0.5) * length
            _ellipse(canvas, yy, xx, cy, cx + jitter(0.005), 0.45 * length, 0.022, bone)

    # metacarpals
    for cx in (0.30, 0.40, 0.50, 0.60, 0.70):
        _box(canvas, yy, xx, 0.47, 0.63, cx - 0.02 + jitter(0.004), cx + 0.02, bone)

    # carpals: the only class-dependent structure
    wrist = rng.uniform(0.8, 0.9)
    if label == 0:
        _ellipse(canvas, yy, xx, 0.735 + jitter(0.01), 0.5 + jitter(0.01),
                 0.07 * rng.uniform(0.92, 1.08), 0.26 * rng.uniform(0.92, 1.08), wrist)
    else:
        for cy in (0.70, 0.77):
            for cx in (0.40, 0.60):
                r = 0.028 * rng.uniform(0.92, 1.08)
                _ellipse(canvas, yy, xx, cy + jitter(0.005), cx + jitter(0.005), r, r, wrist)

    # radius (left) and ulna (right)
    _box(canvas, yy, xx, 0.84, 1.0, 0.32 + jitter(0.005), 0.44, bone)
    _box(canvas, yy, xx, 0.84, 1.0, 0.57 + jitter(0.005), 0.66, bone)

    canvas += rng.normal(0.0, 0.015, size=canvas.shape)
    return np.clip(canvas, 0.0, 1.0).astype(T.DTYPE)


def wrist_band_mean(image: np.ndarray) -> float:
    """Mean intensity of the class-dependent wrist band"""
    plane = image[0] if image.ndim == 3 else image
    h = plane.shape[0]
    top, bottom = int(np.ceil(WRIST_BAND[0] * h)), int(np.ceil(WRIST_BAND[1] * h))
    return float(plane[top:bottom].mean())


def generate_synthetic_dataset(n_per_class: int, seed: int, out_dir) -> DatasetManifest:
    """Write 2 * n_per_class graymaps plus `manifest.csv` into `out_dir`"""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create {out_dir}: {e}") from e

    rows = []
    for label in (0, 1):
        for index in range(n_per_class):
            sample_id = f"{CLASS_PREFIX[label]}_{index:04d}"
            rng = np.random.default_rng(T.derive_seed(seed, label, index))
            write_pgm(out_dir / f"{sample_id}.pgm", render_hand(label, rng))
            rows.append(ManifestRow(sample_id=sample_id, image_path=f"{sample_id}.pgm", label=label))

    manifest = DatasetManifest(rows=tuple(rows), root=out_dir)
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info(f"Generated {len(rows)} synthetic images in {out_dir}")
    return manifest


def oracle_accuracy(manifest: DatasetManifest) -> float:
    """Accuracy of a midpoint threshold on wrist-band mean over the manifest's images"""
    means = np.array([wrist_band_mean(read_pgm(manifest.resolve(row))) for row in manifest])
    labels = np.array(manifest.labels)
    threshold = 0.5 * (means[labels == 0].mean() + means[labels == 1].mean())
    predicted = (means < threshold).astype(int)
    return float((predicted == labels).mean())
