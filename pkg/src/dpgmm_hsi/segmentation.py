"""Cluster maps, 4-connected segments and their boundaries."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .hsi_io import HsiCube
from .model import ModelParams, predict

__all__ = [
    "ClusterMap",
    "Segment",
    "SegmentMap",
    "label_components",
    "assign_clusters",
    "connected_components",
    "boundaries",
    "merge_small_segments",
]

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class ClusterMap:
    """Per-pixel cluster ids in ``1..k``; 0 marks background."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise ValueError("cluster labels must be 2-D")
        if labels.min(initial=0) < 0 or labels.max(initial=0) > self.k:
            raise ValueError(f"cluster labels outside 0..{self.k}")
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class Segment:
    segment_id: int
    cluster_id: int
    area: int
    bbox: tuple[int, int, int, int]  # row0, col0, row1, col1 (exclusive)

    def to_dict(self) -> dict:
        return {"segment_id": self.segment_id, "cluster_id": self.cluster_id,
                "area": self.area, "bbox": list(self.bbox)}


@dataclass(frozen=True)
class SegmentMap:
    segment_ids: np.ndarray
    segments: list[Segment] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.segment_ids.shape[0]

    @property
    def width(self) -> int:
        return self.segment_ids.shape[1]

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def cluster_projection(self) -> np.ndarray:
        lut = np.zeros(int(self.segment_ids.max(initial=0)) + 1, dtype=np.int64)
        for seg in self.segments:
            lut[seg.segment_id] = seg.cluster_id
        return lut[self.segment_ids]

    @classmethod
    def from_ids(cls, segment_ids: np.ndarray, cluster_labels: np.ndarray | None = None):
        """Rebuild segment records from an id raster; absent ids are skipped."""
        ids = np.asarray(segment_ids, dtype=np.int64)
        n = int(ids.max(initial=0))
        areas = np.bincount(ids.ravel(), minlength=n + 1)
        slices = ndimage.find_objects(ids)
        segs = []
        for sid in range(1, n + 1):
            sl = slices[sid - 1]
            if sl is None:
                continue
            cid = 0
            if cluster_labels is not None:
                window = cluster_labels[sl][ids[sl] == sid]
                cid = int(window[0])
            bbox = (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)
            segs.append(Segment(sid, cid, int(areas[sid]), bbox))
        return cls(ids, segs)


def label_components(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected components of equal nonzero values.

    Component ids start at 1 and follow raster-scan order of each
    component's first pixel; 0 stays 0.
    """
    labels = np.asarray(labels)
    out = np.zeros(labels.shape, dtype=np.int64)
    offset = 0
    for value in np.unique(labels):
        if value <= 0:
            continue
        comp, n = ndimage.label(labels == value, structure=_FOUR)
        hit = comp > 0
        out[hit] = comp[hit] + offset
        offset += n
    if offset == 0:
        return out, 0
    flat = out.ravel()
    nz = np.flatnonzero(flat)
    ids, first = np.unique(flat[nz], return_index=True)
    lut = np.zeros(offset + 1, dtype=np.int64)
    lut[ids[np.argsort(first, kind="stable")]] = np.arange(1, ids.size + 1)
    return lut[out], int(ids.size)


def assign_clusters(theta: ModelParams, cube: HsiCube, *, weighted: bool = False,
                    threads: int = 1) -> ClusterMap:
    """Label every valid pixel of a standardized cube with its cluster."""
    if cube.bands != theta.d:
        raise ValueError(f"model has {theta.d} bands, cube has {cube.bands}")
    labels = np.zeros((cube.height, cube.width), dtype=np.int64)
    labels[cube.mask] = predict(theta, cube.pixels(), weighted=weighted, threads=threads)
    return ClusterMap(labels, theta.k)


def connected_components(cmap: ClusterMap) -> SegmentMap:
    ids, _ = label_components(cmap.labels)
    return SegmentMap.from_ids(ids, cmap.labels)


def boundaries(smap: SegmentMap) -> np.ndarray:
    """True on segment pixels with a 4-neighbour of another id (image edge counts)."""
    ids = smap.segment_ids
    padded = np.pad(ids, 1, constant_values=0)
    centre = padded[1:-1, 1:-1]
    edge = np.zeros(ids.shape, dtype=bool)
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        edge |= padded[1 + dr:padded.shape[0] - 1 + dr, 1 + dc:padded.shape[1] - 1 + dc] != centre
    return edge & (ids > 0)


def merge_small_segments(cmap: ClusterMap, smap: SegmentMap,
                         min_size: int) -> tuple[ClusterMap, SegmentMap]:
    """Absorb segments smaller than ``min_size`` into their largest 4-neighbour.

    Smallest segments are merged first; a segment with no neighbouring
    segment (isolated by background) is left alone.  Absorbed pixels take
    the cluster id of the receiving segment, and segments are then rebuilt
    from the merged cluster map.
    """
    if min_size <= 1 or smap.n_segments == 0:
        return cmap, smap
    ids = smap.segment_ids
    n = int(ids.max(initial=0))
    parent = np.arange(n + 1)
    area = np.zeros(n + 1, dtype=np.int64)
    cluster = np.zeros(n + 1, dtype=np.int64)
    for seg in smap.segments:
        area[seg.segment_id] = seg.area
        cluster[seg.segment_id] = seg.cluster_id

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    adj: dict[int, set[int]] = {i: set() for i in range(1, n + 1)}
    for a, b in ((ids[:, :-1], ids[:, 1:]), (ids[:-1, :], ids[1:, :])):
        sel = (a != b) & (a > 0) & (b > 0)
        for p, q in set(zip(a[sel].tolist(), b[sel].tolist())):
            adj[p].add(q)
            adj[q].add(p)

    heap = [(int(area[i]), i) for i in range(1, n + 1) if area[i] < min_size]
    heapq.heapify(heap)
    while heap:
        a_size, s = heapq.heappop(heap)
        if find(s) != s or area[s] != a_size or area[s] >= min_size:
            continue
        neigh = {find(t) for t in adj[s]} - {s}
        if not neigh:
            continue
        target = max(neigh, key=lambda t: (area[t], -t))
        parent[s] = target
        area[target] += area[s]
        adj[target] |= adj[s]
        if area[target] < min_size:
            heapq.heappush(heap, (int(area[target]), target))

    roots = np.array([find(i) for i in range(n + 1)])
    new_clusters = np.where(ids > 0, cluster[roots[ids]], 0)
    new_cmap = ClusterMap(new_clusters, cmap.k)
    # recomputed from clusters: two merged pieces of one cluster may now touch
    return new_cmap, connected_components(new_cmap)
