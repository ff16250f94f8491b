"""Figures and raster images written next to the numeric outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

__all__ = [
    "save_rgb",
    "overlay_boundaries",
    "label_colors",
    "plot_loss_trace",
    "plot_eval",
    "plot_bench",
]

BOUNDARY_RGB = (255, 255, 0)


def save_rgb(rgb: np.ndarray, path: str) -> None:
    """Write an ``(H, W, 3)`` uint8 array as an 8-bit RGB PNG."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) uint8 image")
    Image.fromarray(rgb).save(path, format="PNG")


def overlay_boundaries(rgb: np.ndarray, edges: np.ndarray, color=BOUNDARY_RGB) -> np.ndarray:
    out = np.array(rgb, dtype=np.uint8, copy=True)
    out[np.asarray(edges, dtype=bool)] = color
    return out


def label_colors(labels: np.ndarray, cmap: str = "tab10") -> np.ndarray:
    """Colour an integer label raster; label 0 is black."""
    labels = np.asarray(labels)
    colors = plt.get_cmap(cmap)
    n = colors.N
    table = (np.array([colors(i % n)[:3] for i in range(max(int(labels.max(initial=0)), 1))]) * 255)
    table = np.vstack([[0, 0, 0], np.rint(table)]).astype(np.uint8)
    return table[labels]


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_trace(trace, path: str, stage_starts=(0,)) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(1, len(trace) + 1), trace, lw=1.2, color="k")
    for s in list(stage_starts)[1:]:
        ax.axvline(s + 1, color="0.6", ls="--", lw=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    _finish(fig, path)


def plot_eval(report, path: str) -> None:
    """Grouped bars of mean OS/US/ED per class."""
    per_class = report.per_class
    names = list(per_class) or ["(none)"]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(4, 1.5 * len(names) + 2), 3.5))
    for i, key in enumerate(("os", "us", "ed")):
        vals = [per_class[n][key]["mean"] if n in per_class else 0.0 for n in names]
        ax.bar(x + (i - 1) * 0.25, vals, width=0.25, label=key.upper())
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("mean score (lower is better)")
    ax.legend(frameon=False)
    _finish(fig, path)


def plot_bench(result, path: str) -> None:
    algos = list(result.timings)
    vals = [result.execution_time(a) for a in algos]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.bar(algos, vals, color=["k", "0.6"][:len(algos)] * len(algos))
    ax.set_yscale("log")
    ax.set_ylabel("execution time (s)")
    ax.set_title(result.dataset_name)
    _finish(fig, path)
