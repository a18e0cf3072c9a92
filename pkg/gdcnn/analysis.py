"""
Evaluation metrics on confusion counts, result tables, and attention-region
analysis of normalized class activation maps.
"""

from dataclasses import dataclass, field
from decimal import ROUND_DOWN, ROUND_HALF_UP, Decimal, localcontext
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .cam import Heatmap
from .errors import MetricsError
from .logger import setup_logger

logger = setup_logger(__name__)

UNDEFINED = "undefined"
TABLE_COLUMNS = ["class", "tp", "fp", "fn", "tn", "accuracy", "precision", "recall", "f1"]

REGIONS = ("phalanges", "metacarpals", "carpals", "radius", "ulna")
COMBINATIONS = {
    "carpals+radius": frozenset({"carpals", "radius"}),
    "ulna+carpals+radius": frozenset({"ulna", "carpals", "radius"}),
    "ulna+carpals+radius+metacarpals": frozenset({"ulna", "carpals", "radius", "metacarpals"}),
    "all": frozenset(REGIONS),
}
BOTTOM_BAND = frozenset({"carpals", "radius", "ulna"})


class ConfusionCounts(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int = Field(0, ge=0)
    fp: int = Field(0, ge=0)
    fn: int = Field(0, ge=0)
    tn: int = Field(0, ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class MetricsReport(BaseModel):
    """None marks an undefined (0/0) metric"""
    model_config = ConfigDict(frozen=True)

    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


def confusion_counts(labels: Sequence[int], predicted: Sequence[int], positive: int) -> ConfusionCounts:
    """Counts with `positive` treated as the positive class"""
    y = np.asarray(labels) == positive
    p = np.asarray(predicted) == positive
    return ConfusionCounts(
        tp=int(np.sum(y & p)),
        fp=int(np.sum(~y & p)),
        fn=int(np.sum(y & ~p)),
        tn=int(np.sum(~y & ~p)),
    )


def _ratio(numerator: int, denominator: int) -> Optional[Fraction]:
    return Fraction(numerator, denominator) if denominator else None


def _exact_metrics(counts: ConfusionCounts) -> tuple[Fraction, Optional[Fraction], Optional[Fraction]]:
    if counts.total == 0:
        raise MetricsError("all confusion counts are zero")
    accuracy = Fraction(counts.tp + counts.tn, counts.total)
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    recall = _ratio(counts.tp, counts.tp + counts.fn)
    return accuracy, precision, recall


def _harmonic(precision, recall):
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def metrics(counts: ConfusionCounts, literal_f1: bool = False) -> MetricsReport:
    """Accuracy, precision, recall and harmonic F1.

    `literal_f1` switches to precision / (recall + precision), the printed form
    of the F1 formula, for documentation only.
    """
    accuracy, precision, recall = _exact_metrics(counts)
    if literal_f1:
        f1 = None if precision is None or recall is None or precision + recall == 0 else precision / (recall + precision)
    else:
        f1 = _harmonic(precision, recall)

    def as_float(value):
        return None if value is None else float(value)

    return MetricsReport(accuracy=float(accuracy), precision=as_float(precision),
                         recall=as_float(recall), f1=as_float(f1))


class TableStyle(str, Enum):
    STANDARD = "standard"  # half-away-from-zero rounding, exact F1
    PRINTED = "printed"  # truncation, F1 from the truncated precision and recall


def _to_decimal(value: Fraction) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 50
        return Decimal(value.numerator) / Decimal(value.denominator)


def round3(value, rounding=ROUND_HALF_UP) -> Decimal:
    if isinstance(value, Fraction):
        value = _to_decimal(value)
    return Decimal(value).quantize(Decimal("0.001"), rounding=rounding)


def _row_values(counts: ConfusionCounts, style: TableStyle) -> list[Optional[Decimal]]:
    accuracy, precision, recall = _exact_metrics(counts)
    if style == TableStyle.STANDARD:
        return [None if v is None else round3(v) for v in (accuracy, precision, recall, _harmonic(precision, recall))]

    a, p, r = (None if v is None else round3(v, ROUND_DOWN) for v in (accuracy, precision, recall))
    f1 = _harmonic(p, r)
    return [a, p, r, None if f1 is None else round3(f1, ROUND_DOWN)]


def report_table(rows: Sequence[tuple[str, ConfusionCounts]], style: TableStyle = TableStyle.STANDARD) -> str:
    """Comma-separated `class,tp,fp,fn,tn,accuracy,precision,recall,f1` rows with a header"""
    if not rows:
        raise MetricsError("report needs at least one row")
    records = []
    for name, counts in rows:
        if not name or not name.strip():
            raise MetricsError("class name must not be empty")
        values = [UNDEFINED if v is None else f"{v:.3f}" for v in _row_values(counts, style)]
        records.append([name, counts.tp, counts.fp, counts.fn, counts.tn, *values])
    return pd.DataFrame(records, columns=TABLE_COLUMNS).to_csv(index=False, lineterminator="\n")


# --- attention regions ---

class RegionBands(BaseModel):
    """Fractional anatomical bands of a vertically oriented left-hand radiograph"""
    model_config = ConfigDict(frozen=True)

    phalanges_end: float = 0.45
    metacarpals_end: float = 0.65
    carpals_end: float = 0.82
    forearm_split: float = Field(0.5, gt=0.0, lt=1.0)
    threshold: float = Field(0.5, gt=0.0, lt=1.0)
    min_overlap: float = Field(0.02, gt=0.0, lt=1.0)
    mirror: bool = False

    @model_validator(mode="after")
    def _check_order(self):
        if not 0.0 < self.phalanges_end < self.metacarpals_end < self.carpals_end < 1.0:
            raise ValueError("band boundaries must satisfy 0 < phalanges < metacarpals < carpals < 1")
        return self


def region_masks(bands: RegionBands, height: int, width: int) -> dict[str, np.ndarray]:
    rows = (np.arange(height) / height)[:, None]
    cols = (np.arange(width) / width)[None, :]
    full = np.ones((height, width), dtype=bool)
    left = full & (cols < bands.forearm_split)
    forearm = full & (rows >= bands.carpals_end)
    radius, ulna = forearm & left, forearm & ~left
    if bands.mirror:
        radius, ulna = ulna, radius
    return {
        "phalanges": full & (rows < bands.phalanges_end),
        "metacarpals": full & (rows >= bands.phalanges_end) & (rows < bands.metacarpals_end),
        "carpals": full & (rows >= bands.metacarpals_end) & (rows < bands.carpals_end),
        "radius": radius,
        "ulna": ulna,
    }


def attention_regions(heatmap: Heatmap, bands: RegionBands = RegionBands()) -> frozenset[str]:
    """Regions where the thresholded heatmap covers at least `min_overlap` of the region"""
    hot = heatmap.values >= bands.threshold
    attended = set()
    for name, mask in region_masks(bands, heatmap.height, heatmap.width).items():
        area = int(mask.sum())
        if area and int(np.sum(hot & mask)) >= bands.min_overlap * area:
            attended.add(name)
    return frozenset(attended)


@dataclass
class AttentionHistogram:
    n_images: int = 0
    region_counts: dict[str, int] = field(default_factory=lambda: {name: 0 for name in REGIONS})
    combination_counts: dict[str, int] = field(default_factory=lambda: {name: 0 for name in COMBINATIONS})
    bottom_band: int = 0
    image_regions: list[frozenset[str]] = field(default_factory=list)

    def add(self, regions: frozenset[str]):
        self.n_images += 1
        self.image_regions.append(regions)
        for name in regions:
            self.region_counts[name] += 1
        for name, members in COMBINATIONS.items():
            if members <= regions:
                self.combination_counts[name] += 1
        if regions & BOTTOM_BAND:
            self.bottom_band += 1

    def to_frame(self) -> pd.DataFrame:
        records = [("images", "total", self.n_images)]
        records += [("region", name, count) for name, count in self.region_counts.items()]
        records += [("combination", name, count) for name, count in self.combination_counts.items()]
        records.append(("union", "carpals|radius|ulna", self.bottom_band))
        return pd.DataFrame(records, columns=["kind", "name", "count"])

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, lineterminator="\n")


def aggregate_attention(heatmaps: Iterable[Heatmap], bands: RegionBands = RegionBands()) -> AttentionHistogram:
    """Per-region and per-combination counts of images attending each region"""
    histogram = AttentionHistogram()
    for heatmap in heatmaps:
        histogram.add(attention_regions(heatmap, bands))
    if histogram.n_images == 0:
        raise MetricsError("attention analysis needs at least one heatmap")
    logger.info(f"Attention over {histogram.n_images} images: {histogram.region_counts}, "
                f"bottom band {histogram.bottom_band}")
    return histogram
