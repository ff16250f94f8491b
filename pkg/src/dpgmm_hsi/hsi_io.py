"""Reading, writing, standardizing and rendering hyperspectral cubes.

Cubes are stored in a small subset of the ENVI format: a text ``.hdr``
header next to a raw ``.img`` payload holding little-endian float32 values
in band-interleaved-by-pixel order.  Label rasters (ground truth, cluster
and segment maps) share the header layout with an integer data type and
carry an optional JSON sidecar mapping label values to class names.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HsiCube",
    "BandStats",
    "Region",
    "GroundTruth",
    "CubeFormatError",
    "load_cube",
    "save_cube",
    "standardize",
    "apply_standardization",
    "destandardize",
    "nearest_band",
    "render_pseudocolor",
    "load_label_raster",
    "save_label_raster",
    "load_class_table",
    "load_ground_truth",
    "ground_truth_from_labels",
    "DEFAULT_RGB_NM",
]

DEFAULT_RGB_NM = (670.0, 540.0, 470.0)

# ENVI data type codes supported here
_ENVI_DTYPES = {4: np.dtype("<f4"), 2: np.dtype("<i2"), 3: np.dtype("<i4")}


class CubeFormatError(ValueError):
    """Raised for malformed headers, payloads or inconsistent rasters."""


@dataclass(frozen=True)
class HsiCube:
    """A hyperspectral raster of shape ``(height, width, bands)``.

    ``data`` is C-ordered so that the flat buffer is pixel-major with the
    band index varying fastest (BIP).  ``mask`` is True on valid pixels.
    """

    data: np.ndarray
    wavelengths: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if data.ndim != 3:
            raise CubeFormatError(f"cube data must be 3-D, got shape {data.shape}")
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        if wl.shape != (data.shape[2],):
            raise CubeFormatError(
                f"{wl.size} wavelengths given for {data.shape[2]} bands")
        if not np.all(np.isfinite(wl)):
            raise CubeFormatError("wavelengths must be finite")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise CubeFormatError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[:5]
            raise CubeFormatError(f"non-finite values at (row, col, band) {bad.tolist()}")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != data.shape[:2]:
            raise CubeFormatError(f"mask shape {mask.shape} != {data.shape[:2]}")
        data.setflags(write=False)
        wl.setflags(write=False)
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def pixels(self) -> np.ndarray:
        """Valid spectra as an ``(N, D)`` array in raster-scan order."""
        return self.data[self.mask]


@dataclass(frozen=True)
class BandStats:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray  # bool per band; std forced to 1

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "degenerate": [bool(v) for v in self.degenerate],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BandStats":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64),
                   np.asarray(d["degenerate"], dtype=bool))


@dataclass(frozen=True)
class Region:
    region_id: int
    class_name: str
    label_value: int
    pixels: np.ndarray  # (n, 2) int array of (row, col)

    @property
    def area(self) -> int:
        return int(self.pixels.shape[0])


@dataclass(frozen=True)
class GroundTruth:
    """Labelled reference regions; ``region_map`` holds region ids, 0 = none."""

    height: int
    width: int
    regions: list[Region] = field(default_factory=list)

    @property
    def region_map(self) -> np.ndarray:
        out = np.zeros((self.height, self.width), dtype=np.int64)
        for reg in self.regions:
            out[reg.pixels[:, 0], reg.pixels[:, 1]] = reg.region_id
        return out


# ---------------------------------------------------------------------------
# header parsing

def _raw_path(hdr_path: str) -> str:
    root, ext = os.path.splitext(hdr_path)
    if ext.lower() != ".hdr":
        raise CubeFormatError(f"expected a .hdr header path, got {hdr_path!r}")
    return root + ".img"


def _parse_header(hdr_path: str) -> dict[str, str]:
    try:
        with open(hdr_path, encoding="ascii") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError) as exc:
        raise CubeFormatError(f"cannot read header {hdr_path}: {exc}") from exc
    if not text.lstrip().startswith("ENVI"):
        raise CubeFormatError(f"{hdr_path}: header must start with 'ENVI'")
    fields = {}
    # brace blocks may span several lines
    for m in re.finditer(r"^\s*([^=\n]+?)\s*=\s*(\{[^}]*\}|[^\n]*)", text, re.M):
        fields[m.group(1).strip().lower()] = m.group(2).strip()
    return fields


def _int_field(fields: dict, key: str, hdr_path: str) -> int:
    if key not in fields:
        raise CubeFormatError(f"{hdr_path}: missing header field '{key}'")
    try:
        return int(fields[key])
    except ValueError:
        raise CubeFormatError(f"{hdr_path}: field '{key}' is not an integer: {fields[key]!r}")


def _read_raster(hdr_path: str, allowed_types: tuple[int, ...]) -> tuple[np.ndarray, dict]:
    fields = _parse_header(hdr_path)
    width = _int_field(fields, "samples", hdr_path)
    height = _int_field(fields, "lines", hdr_path)
    bands = _int_field(fields, "bands", hdr_path)
    dtype_code = _int_field(fields, "data type", hdr_path)
    interleave = fields.get("interleave", "").lower()
    if interleave != "bip":
        raise CubeFormatError(
            f"{hdr_path}: only 'interleave = bip' is supported, got {interleave or 'none'!r}")
    if dtype_code not in allowed_types:
        raise CubeFormatError(
            f"{hdr_path}: unsupported 'data type = {dtype_code}', expected one of {allowed_types}")
    if int(fields.get("byte order", "0")) != 0:
        raise CubeFormatError(f"{hdr_path}: only little-endian 'byte order = 0' is supported")
    offset = int(fields.get("header offset", "0"))
    if min(width, height, bands) <= 0:
        raise CubeFormatError(f"{hdr_path}: non-positive dimensions")
    dtype = _ENVI_DTYPES[dtype_code]
    raw = _raw_path(hdr_path)
    with open(raw, "rb") as fh:
        payload = fh.read()
    expected = height * width * bands * dtype.itemsize
    if len(payload) - offset != expected:
        raise CubeFormatError(
            f"{raw}: payload has {len(payload) - offset} bytes, header implies "
            f"{height}x{width}x{bands}x{dtype.itemsize} = {expected}")
    arr = np.frombuffer(payload, dtype=dtype, offset=offset).reshape(height, width, bands)
    return arr, fields


def _write_raster(hdr_path: str, arr: np.ndarray, dtype_code: int,
                  extra: dict[str, str] | None = None) -> None:
    height, width, bands = arr.shape
    lines = [
        "ENVI",
        f"samples = {width}",
        f"lines = {height}",
        f"bands = {bands}",
        "header offset = 0",
        f"data type = {dtype_code}",
        "interleave = bip",
        "byte order = 0",
    ]
    for key, val in (extra or {}).items():
        lines.append(f"{key} = {val}")
    with open(hdr_path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(_raw_path(hdr_path), "wb") as fh:
        fh.write(np.ascontiguousarray(arr, dtype=_ENVI_DTYPES[dtype_code]).tobytes())


# ---------------------------------------------------------------------------
# cubes

def load_cube(path: str) -> HsiCube:
    """Load a float32 BIP cube; all-zero spectra are masked as background."""
    arr, fields = _read_raster(path, (4,))
    if "wavelength" not in fields:
        raise CubeFormatError(f"{path}: missing header field 'wavelength'")
    try:
        wl = np.array([float(v) for v in fields["wavelength"].strip("{} ").split(",")])
    except ValueError as exc:
        raise CubeFormatError(f"{path}: unparseable wavelength list") from exc
    if wl.size != arr.shape[2]:
        raise CubeFormatError(f"{path}: {wl.size} wavelengths for {arr.shape[2]} bands")
    mask = np.any(arr != 0, axis=2)
    return HsiCube(arr.copy(), wl, mask)


def save_cube(cube: HsiCube, path: str) -> None:
    wl = ", ".join(repr(float(w)) for w in cube.wavelengths)
    _write_raster(path, cube.data.reshape(cube.height, cube.width, cube.bands), 4,
                  {"wavelength units": "Nanometers", "wavelength": "{" + wl + "}"})


def standardize(cube: HsiCube) -> tuple[HsiCube, BandStats]:
    """Scale each band to zero mean and unit (population) std over valid pixels."""
    if cube.n_valid < 2:
        raise ValueError(f"standardize needs at least 2 valid pixels, got {cube.n_valid}")
    px = cube.pixels().astype(np.float64)
    mean = px.mean(axis=0)
    std = px.std(axis=0)
    degenerate = ~(std > 0)
    std = np.where(degenerate, 1.0, std)
    stats = BandStats(mean, std, degenerate)
    return apply_standardization(cube, stats), stats


def apply_standardization(cube: HsiCube, stats: BandStats) -> HsiCube:
    if stats.mean.shape != (cube.bands,):
        raise ValueError(f"band stats for {stats.mean.size} bands, cube has {cube.bands}")
    out = (cube.data.astype(np.float64) - stats.mean) / stats.std
    # dead bands carry no information
    out[..., stats.degenerate] = 0.0
    out[~cube.mask] = 0.0
    return HsiCube(out, cube.wavelengths, cube.mask)


def destandardize(values: np.ndarray, stats: BandStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


# ---------------------------------------------------------------------------
# rendering

def nearest_band(wavelengths: np.ndarray, nm: float) -> int:
    """Index of the band closest to ``nm``; ties go to the lower index."""
    wl = np.asarray(wavelengths, dtype=np.float64)
    dist = np.abs(wl - nm)
    idx = int(np.argmin(dist))
    half_range = (wl[-1] - wl[0]) / 2.0
    if dist[idx] > half_range:
        raise ValueError(
            f"{nm} nm is {dist[idx]:g} nm from the nearest band, more than half "
            f"the spectral range ({half_range:g} nm)")
    return idx


def render_pseudocolor(cube: HsiCube, red_nm: float = DEFAULT_RGB_NM[0],
                       green_nm: float = DEFAULT_RGB_NM[1],
                       blue_nm: float = DEFAULT_RGB_NM[2]) -> np.ndarray:
    """Return an ``(H, W, 3)`` uint8 image built from three bands.

    Each channel is min-max stretched over valid pixels; background is black.
    """
    rgb = np.zeros((cube.height, cube.width, 3), dtype=np.uint8)
    if cube.n_valid == 0:
        return rgb
    for c, nm in enumerate((red_nm, green_nm, blue_nm)):
        band = cube.data[..., nearest_band(cube.wavelengths, nm)].astype(np.float64)
        vals = band[cube.mask]
        lo, hi = vals.min(), vals.max()
        scaled = (band - lo) / (hi - lo) if hi > lo else np.zeros_like(band)
        chan = np.rint(np.clip(scaled, 0.0, 1.0) * 255.0).astype(np.uint8)
        chan[~cube.mask] = 0
        rgb[..., c] = chan
    return rgb


# ---------------------------------------------------------------------------
# label rasters

def _sidecar_path(hdr_path: str) -> str:
    return os.path.splitext(hdr_path)[0] + ".classes.json"


def load_label_raster(path: str) -> np.ndarray:
    """Read an integer raster (single band) as an ``(H, W)`` int64 array."""
    arr, _ = _read_raster(path, (2, 3))
    if arr.shape[2] != 1:
        raise CubeFormatError(f"{path}: label rasters must have 1 band, got {arr.shape[2]}")
    return arr[..., 0].astype(np.int64)


def save_label_raster(labels: np.ndarray, path: str,
                      class_table: dict[int, str] | None = None) -> None:
    """Write labels as int16 when they fit, otherwise int32 (data type 3)."""
    labels = np.asarray(labels)
    fits16 = labels.size == 0 or (labels.min() >= -32768 and labels.max() <= 32767)
    _write_raster(path, labels[..., None], 2 if fits16 else 3)
    if class_table is not None:
        with open(_sidecar_path(path), "w") as fh:
            json.dump({str(k): v for k, v in sorted(class_table.items())}, fh, indent=2)


def load_class_table(path: str) -> dict[int, str]:
    side = _sidecar_path(path)
    if not os.path.exists(side):
        raise CubeFormatError(f"missing class table sidecar {side}")
    with open(side) as fh:
        raw = json.load(fh)
    return {int(k): str(v) for k, v in raw.items()}


def ground_truth_from_labels(labels: np.ndarray, class_table: dict[int, str],
                             mask: np.ndarray | None = None) -> GroundTruth:
    """Split a label raster into 4-connected regions of equal nonzero value.

    Region ids follow raster-scan order of each region's first pixel.
    """
    from .segmentation import label_components

    labels = np.asarray(labels, dtype=np.int64)
    missing = sorted(set(np.unique(labels[labels != 0]).tolist()) - set(class_table))
    if missing:
        raise CubeFormatError(f"label values {missing} missing from class table")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != labels.shape:
            raise CubeFormatError(f"label raster {labels.shape} vs cube {mask.shape}")
        bad = np.argwhere((labels != 0) & ~mask)
        if bad.size:
            raise CubeFormatError(
                f"{len(bad)} labelled pixels lie on background, e.g. (row, col) "
                f"{bad[:10].tolist()}")
    comp, n = label_components(labels)
    flat = comp.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(1, n + 2))
    regions = []
    for rid in range(1, n + 1):
        idx = order[bounds[rid - 1]:bounds[rid]]
        rc = np.column_stack(np.unravel_index(idx, labels.shape))
        value = int(labels.flat[idx[0]])
        regions.append(Region(rid, class_table[value], value, rc))
    return GroundTruth(labels.shape[0], labels.shape[1], regions)


def load_ground_truth(path: str, cube: HsiCube | None = None,
                      mask: np.ndarray | None = None) -> GroundTruth:
    labels = load_label_raster(path)
    if cube is not None:
        if labels.shape != (cube.height, cube.width):
            raise CubeFormatError(
                f"{path}: label raster is {labels.shape}, cube is {(cube.height, cube.width)}")
        mask = cube.mask
    return ground_truth_from_labels(labels, load_class_table(path), mask)
