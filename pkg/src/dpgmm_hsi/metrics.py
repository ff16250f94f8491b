"""Over-/under-segmentation scores of segments against reference regions."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .hsi_io import GroundTruth
from .segmentation import SegmentMap

__all__ = [
    "RegionScore",
    "EvalReport",
    "pair_metrics",
    "pair_metrics_from_areas",
    "match_segments",
]


def pair_metrics_from_areas(intersection: int, area_r: int, area_s: int) -> tuple[float, float, float]:
    if area_r <= 0 or area_s <= 0:
        raise ValueError("region and segment areas must be positive")
    os_ = 1.0 - intersection / area_r
    us = 1.0 - intersection / area_s
    return os_, us, math.sqrt((os_ * os_ + us * us) / 2.0)


def _as_pixel_set(p) -> set:
    if isinstance(p, np.ndarray) and p.dtype == bool:
        return set(map(tuple, np.argwhere(p).tolist()))
    return {tuple(int(v) for v in q) for q in p}


def pair_metrics(r, s) -> tuple[float, float, float]:
    """``(OS, US, ED)`` for a reference pixel set ``r`` and a segment ``s``.

    Either argument may be a boolean mask or an iterable of ``(row, col)``.
    """
    r, s = _as_pixel_set(r), _as_pixel_set(s)
    if not r or not s:
        raise ValueError("pair_metrics needs non-empty pixel sets")
    return pair_metrics_from_areas(len(r & s), len(r), len(s))


@dataclass(frozen=True)
class RegionScore:
    region_id: int
    class_name: str
    matched_segment_id: int
    intersection: int
    region_area: int
    segment_area: int
    os: float
    us: float
    ed: float


_FIELDS = ("region_id", "class_name", "matched_segment_id", "intersection",
           "region_area", "segment_area", "os", "us", "ed")


def _summary(rows: list[RegionScore]) -> dict:
    out = {"count": len(rows)}
    for key in ("os", "us", "ed"):
        vals = np.array([getattr(r, key) for r in rows])
        out[key] = {"mean": float(vals.mean()), "median": float(np.median(vals))}
    return out


@dataclass
class EvalReport:
    per_region: list[RegionScore]
    unmatched_regions: list[int] = field(default_factory=list)

    @property
    def overall(self) -> dict | None:
        return _summary(self.per_region) if self.per_region else None

    @property
    def per_class(self) -> dict[str, dict]:
        names = sorted({r.class_name for r in self.per_region})
        return {n: _summary([r for r in self.per_region if r.class_name == n]) for n in names}

    def to_dict(self) -> dict:
        return {
            "per_region": [{f: getattr(r, f) for f in _FIELDS} for r in self.per_region],
            "unmatched_regions": list(self.unmatched_regions),
            "aggregates": {"overall": self.overall, "per_class": self.per_class},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_FIELDS)
        for r in self.per_region:
            writer.writerow([getattr(r, f) if not isinstance(getattr(r, f), float)
                             else repr(getattr(r, f)) for f in _FIELDS])
        return buf.getvalue()


def match_segments(gt: GroundTruth, smap: SegmentMap) -> EvalReport:
    """Pair each region with the segment it overlaps most (ties: lower id).

    Regions overlapping no segment are reported as unmatched and left out
    of the aggregates.  A segment may serve several regions.
    """
    if (gt.height, gt.width) != (smap.height, smap.width):
        raise ValueError(
            f"ground truth is {gt.height}x{gt.width}, segments are {smap.height}x{smap.width}")
    n_seg = int(smap.segment_ids.max(initial=0))
    seg_area = np.bincount(smap.segment_ids.ravel(), minlength=n_seg + 1)
    rows, unmatched = [], []
    for reg in gt.regions:
        hit = smap.segment_ids[reg.pixels[:, 0], reg.pixels[:, 1]]
        inter = np.bincount(hit, minlength=n_seg + 1)
        inter[0] = 0
        best = int(np.argmax(inter))
        if inter[best] == 0:
            unmatched.append(reg.region_id)
            continue
        os_, us, ed = pair_metrics_from_areas(int(inter[best]), reg.area, int(seg_area[best]))
        rows.append(RegionScore(reg.region_id, reg.class_name, best, int(inter[best]),
                                reg.area, int(seg_area[best]), os_, us, ed))
    return EvalReport(rows, unmatched)
