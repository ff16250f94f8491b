"""Synthetic scenes with known mixture parameters and ground truth."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .hsi_io import GroundTruth, HsiCube, Region
from .seeding import make_rng, standard_normals

__all__ = ["SceneSpec", "default_scene_spec", "sample_scene", "sample_gmm", "scene_class_table"]


@dataclass(frozen=True)
class SceneSpec:
    """Rectangular layout of mixture components over an image grid.

    ``layout`` rows are ``(row0, row1, col0, col1, component)`` with half-open
    pixel ranges and 1-based component ids.
    """

    height: int
    width: int
    bands: int
    true_k: int
    means: np.ndarray
    sigmas: np.ndarray
    layout: tuple[tuple[int, int, int, int, int], ...]
    noise_seed: int = 7
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        sigmas = np.asarray(self.sigmas, dtype=np.float64)
        shape = (self.true_k, self.bands)
        if means.shape != shape or sigmas.shape != shape:
            raise ValueError(f"means/sigmas must be {shape}, got {means.shape}, {sigmas.shape}")
        if not np.all(sigmas > 0):
            raise ValueError("sigmas must be positive")
        layout = tuple(tuple(int(v) for v in rect) for rect in self.layout)
        cover = np.zeros((self.height, self.width), dtype=np.int64)
        for r0, r1, c0, c1, comp in layout:
            if not (0 <= r0 < r1 <= self.height and 0 <= c0 < c1 <= self.width):
                raise ValueError(f"rectangle {(r0, r1, c0, c1)} outside the grid")
            if not 1 <= comp <= self.true_k:
                raise ValueError(f"component {comp} outside 1..{self.true_k}")
            cover[r0:r1, c0:c1] += 1
        if not np.all(cover == 1):
            raise ValueError("layout must cover every pixel exactly once")
        wl = (np.linspace(400.0, 1000.0, self.bands) if self.wavelengths is None
              else np.asarray(self.wavelengths, dtype=np.float64))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "wavelengths", wl)

    def to_dict(self) -> dict:
        return {
            "height": self.height, "width": self.width, "bands": self.bands,
            "true_k": self.true_k, "means": self.means.tolist(),
            "sigmas": self.sigmas.tolist(), "layout": [list(r) for r in self.layout],
            "noise_seed": self.noise_seed, "wavelengths": self.wavelengths.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneSpec":
        return cls(doc["height"], doc["width"], doc["bands"], doc["true_k"],
                   np.asarray(doc["means"]), np.asarray(doc["sigmas"]),
                   tuple(tuple(r) for r in doc["layout"]), doc.get("noise_seed", 7),
                   doc.get("wavelengths"))

    @classmethod
    def from_json(cls, path: str) -> "SceneSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_scene_spec(true_k: int = 3, *, height: int = 64, width: int = 64,
                       bands: int = 20, separation: float = 6.0, sigma: float = 1.0,
                       noisy_fraction: float = 0.0, noise_factor: float = 2.0,
                       seed: int = 7) -> SceneSpec:
    """Vertical strips, one per component, with means ``separation`` apart.

    Means are a constant offset plus scaled orthonormal directions, so every
    pair of components is exactly ``separation`` apart.  ``noisy_fraction``
    of the highest bands get their sigma multiplied by ``noise_factor``.
    """
    if true_k > bands:
        raise ValueError("true_k cannot exceed the band count")
    rng = make_rng(seed)
    q, _ = np.linalg.qr(standard_normals(rng, (bands, true_k)))
    means = 10.0 + separation / np.sqrt(2.0) * q.T
    sigmas = np.full((true_k, bands), float(sigma))
    n_noisy = int(round(noisy_fraction * bands))
    if n_noisy:
        sigmas[:, bands - n_noisy:] *= noise_factor
    edges = np.linspace(0, width, true_k + 1).round().astype(int)
    layout = tuple((0, height, int(edges[c]), int(edges[c + 1]), c + 1) for c in range(true_k))
    return SceneSpec(height, width, bands, true_k, means, sigmas, layout, seed)


def scene_class_table(spec: SceneSpec) -> dict[int, str]:
    return {c: f"component_{c}" for c in range(1, spec.true_k + 1)}


def sample_scene(spec: SceneSpec) -> tuple[HsiCube, GroundTruth, np.ndarray]:
    """Draw every pixel from its rectangle's component.

    Returns the cube, ground truth (one region per layout rectangle) and the
    ``(H, W)`` map of true component ids.
    """
    rng = make_rng(spec.noise_seed)
    labels = np.zeros((spec.height, spec.width), dtype=np.int64)
    for r0, r1, c0, c1, comp in spec.layout:
        labels[r0:r1, c0:c1] = comp
    z = standard_normals(rng, (spec.height, spec.width, spec.bands))
    data = spec.means[labels - 1] + spec.sigmas[labels - 1] * z
    mask = np.ones(labels.shape, dtype=bool)
    table = scene_class_table(spec)
    regions = []
    for rid, (r0, r1, c0, c1, comp) in enumerate(spec.layout, start=1):
        rr, cc = np.mgrid[r0:r1, c0:c1]
        regions.append(Region(rid, table[comp], comp,
                              np.column_stack([rr.ravel(), cc.ravel()])))
    gt = GroundTruth(spec.height, spec.width, regions)
    return HsiCube(data, spec.wavelengths, mask), gt, labels


def sample_gmm(pi, means, sigmas, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``n`` pixels from a diagonal mixture; labels are 1-based."""
    pi = np.asarray(pi, dtype=np.float64)
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    sigmas = np.atleast_2d(np.asarray(sigmas, dtype=np.float64))
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError(f"pi is not a simplex: {pi}")
    if means.shape != sigmas.shape or means.shape[0] != pi.size:
        raise ValueError("means, sigmas and pi disagree on the component count")
    if not np.all(sigmas > 0):
        raise ValueError("sigmas must be positive")
    rng = make_rng(seed)
    cum = np.cumsum(pi)
    cum[-1] = 1.0
    comp = np.searchsorted(cum, rng.random(n), side="right")
    comp = np.minimum(comp, pi.size - 1)
    z = standard_normals(rng, (n, means.shape[1]))
    return means[comp] + sigmas[comp] * z, comp + 1
