"""k-means baseline and the inference-time benchmark."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .hsi_io import HsiCube, standardize
from .model import ModelParams, predict
from .seeding import DEFAULT_SEED, dsquared_indices, make_rng
from .trainer import FitConfig, fit

__all__ = [
    "KMeansModel",
    "BenchConfig",
    "BenchResult",
    "kmeans_fit",
    "kmeans_predict",
    "time_median",
    "run_bench",
]

_CHUNK = 4096


@dataclass(frozen=True)
class KMeansModel:
    k: int
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_trace: tuple[float, ...] = ()
    labels: np.ndarray | None = None  # 1-based assignment of the training points


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared distances via |x|^2 - 2 x.c + |c|^2, clipped at 0."""
    c2 = np.einsum("kd,kd->k", c, c)
    out = np.empty((x.shape[0], c.shape[0]))
    for s in range(0, x.shape[0], _CHUNK):
        xs = x[s:s + _CHUNK]
        d2 = np.einsum("nd,nd->n", xs, xs)[:, None] - 2.0 * (xs @ c.T) + c2
        out[s:s + _CHUNK] = np.maximum(d2, 0.0)
    return out


def _assign(x, c):
    d2 = _sq_dists(x, c)
    lab = np.argmin(d2, axis=1)
    return lab, d2[np.arange(x.shape[0]), lab]


def kmeans_fit(x: np.ndarray, k: int, seed: int = DEFAULT_SEED, max_iters: int = 300,
               tol: float = 1e-6) -> KMeansModel:
    """Lloyd iterations from k-means++ seeds.

    Stops when no centroid moves more than ``tol``.  A cluster that loses all
    its points is re-seeded with the point farthest from its centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < k:
        raise ValueError(f"k-means needs at least k={k} points, got {x.shape[0]}")
    rng = make_rng(seed)
    cent = x[dsquared_indices(x, k, rng)].copy()
    trace = []
    it = 0
    for it in range(1, max_iters + 1):
        lab, d2 = _assign(x, cent)
        trace.append(float(d2.sum()))
        counts = np.bincount(lab, minlength=k)
        new = (lab[None, :] == np.arange(k)[:, None]).astype(np.float64) @ x
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2))
            new[j] = x[far]
            counts[j] = 1
            d2[far] = -1.0  # do not reuse for another empty cluster
        new /= counts[:, None]
        shift = np.sqrt(((new - cent) ** 2).sum(axis=1)).max()
        cent = new
        if shift < tol:
            break
    lab, d2 = _assign(x, cent)
    return KMeansModel(k, cent, float(d2.sum()), it, tuple(trace), lab + 1)


def kmeans_predict(model: KMeansModel, x):
    """Nearest centroid (1-based); ties go to the lower index."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != model.centroids.shape[1]:
        raise ValueError(
            f"pixel dimension {arr.shape[1]} does not match centroids ({model.centroids.shape[1]})")
    lab = _assign(arr, model.centroids)[0] + 1
    return int(lab[0]) if single else lab


def time_median(fn, repeats: int = 5) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


@dataclass(frozen=True)
class BenchConfig:
    dataset_name: str = "synthetic"
    k: int = 5
    repeats: int = 5
    seed: int = DEFAULT_SEED
    fit_sample: int = 20000  # pixels used when a DPGMM has to be fitted first
    threads: int = 1


@dataclass
class BenchResult:
    dataset_name: str
    n_pixels: int
    bands: int
    timings: dict[str, dict[str, float]] = field(default_factory=dict)

    def execution_time(self, algorithm: str) -> float:
        """DPGMM counts inference only (training is a one-off); k-means counts fit + predict."""
        t = self.timings[algorithm]
        return t["predict"] if algorithm == "dpgmm" else t["fit"] + t["predict"]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset_name,
            "n_pixels": self.n_pixels,
            "bands": self.bands,
            "timings": self.timings,
            "execution_time": {a: self.execution_time(a) for a in self.timings},
            "throughput_px_per_s": {a: self.n_pixels / max(self.execution_time(a), 1e-12)
                                    for a in self.timings},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def table(self) -> str:
        rows = [(self.dataset_name, a, f"{self.execution_time(a):.3f}") for a in self.timings]
        head = ("Dataset", "Algorithm", "Execution time (s)")
        widths = [max(len(r[i]) for r in rows + [head]) for i in range(3)]
        fmt = "  ".join(f"{{:<{w}}}" if i < 2 else f"{{:>{w}}}" for i, w in enumerate(widths))
        lines = [fmt.format(*head), "  ".join("-" * w for w in widths)]
        lines += [fmt.format(*r) for r in rows]
        return "\n".join(lines)


def run_bench(cube: HsiCube, config: BenchConfig = BenchConfig(),
              model: ModelParams | None = None) -> BenchResult:
    """Time DPGMM inference against k-means fit+predict on the same pixels.

    The cube is standardized before any clock starts.  Without ``model`` a
    DPGMM is first fitted on a random pixel subsample; that fit is reported
    under ``timings["dpgmm"]["fit"]`` but is not part of its execution time.
    """
    std_cube, _ = standardize(cube)
    x = std_cube.pixels()
    n = x.shape[0]
    timings: dict[str, dict[str, float]] = {}
    fit_time = 0.0
    if model is None:
        rng = make_rng(config.seed)
        sub = x if n <= config.fit_sample else x[np.sort(rng.choice(n, config.fit_sample, replace=False))]
        t0 = time.perf_counter()
        model = fit(sub, FitConfig(max_k=config.k, seed=config.seed),
                    threads=config.threads).final_params
        fit_time = time.perf_counter() - t0
    if model.d != cube.bands:
        raise ValueError(f"model has {model.d} bands, cube has {cube.bands}")
    timings["dpgmm"] = {
        "fit": fit_time,
        "predict": time_median(lambda: predict(model, x, threads=config.threads), config.repeats),
    }
    km_fit = []
    km_pred = []
    for _ in range(config.repeats):
        t0 = time.perf_counter()
        km = kmeans_fit(x, config.k, config.seed)
        t1 = time.perf_counter()
        kmeans_predict(km, x)
        km_fit.append(t1 - t0)
        km_pred.append(time.perf_counter() - t1)
    timings["kmeans"] = {"fit": float(np.median(km_fit)), "predict": float(np.median(km_pred))}
    return BenchResult(config.dataset_name, n, cube.bands, timings)
