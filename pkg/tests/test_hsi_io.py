import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_cube
from dpgmm_hsi.hsi_io import (
    DEFAULT_RGB_NM,
    CubeFormatError,
    HsiCube,
    destandardize,
    ground_truth_from_labels,
    load_cube,
    load_ground_truth,
    load_label_raster,
    nearest_band,
    render_pseudocolor,
    save_cube,
    save_label_raster,
    standardize,
)


def _write_envi(tmp_path, data, wavelengths, name="c", extra_bytes=0, **over):
    h, w, d = data.shape
    fields = {"samples": w, "lines": h, "bands": d, "interleave": "bip",
              "data type": 4, "byte order": 0}
    fields.update(over)
    hdr = tmp_path / f"{name}.hdr"
    lines = ["ENVI"] + [f"{k} = {v}" for k, v in fields.items()]
    lines.append("wavelength = {" + ", ".join(str(x) for x in wavelengths) + "}")
    hdr.write_text("\n".join(lines) + "\n")
    payload = np.asarray(data, dtype="<f4").tobytes()
    if extra_bytes < 0:
        payload = payload[:extra_bytes]
    (tmp_path / f"{name}.img").write_bytes(payload)
    return str(hdr)


class TestLoadCube:
    def test_background_pixel_masked(self, tmp_path):
        data = np.ones((2, 2, 3), dtype=np.float32)
        data[1, 0] = 0
        cube = load_cube(_write_envi(tmp_path, data, [400, 500, 600]))
        assert cube.n_valid == 3
        assert not cube.mask[1, 0]

    def test_301_bands(self, tmp_path):
        wl = np.arange(400, 1001, 2)
        data = np.random.default_rng(0).random((2, 3, 301)).astype(np.float32) + 0.1
        cube = load_cube(_write_envi(tmp_path, data, wl))
        assert cube.wavelengths.shape == (301,)
        assert cube.wavelengths[0] == 400 and cube.wavelengths[-1] == 1000

    def test_short_payload(self, tmp_path):
        data = np.ones((2, 2, 3), dtype=np.float32)
        with pytest.raises(CubeFormatError, match="byte"):
            load_cube(_write_envi(tmp_path, data, [1, 2, 3], extra_bytes=-4))

    @pytest.mark.parametrize("field,value", [("interleave", "bsq"), ("data type", 5),
                                             ("byte order", 1)])
    def test_rejects_unsupported(self, tmp_path, field, value):
        data = np.ones((2, 2, 3), dtype=np.float32)
        with pytest.raises(CubeFormatError):
            load_cube(_write_envi(tmp_path, data, [1, 2, 3], **{field: value}))

    def test_missing_header_field(self, tmp_path):
        hdr = tmp_path / "bad.hdr"
        hdr.write_text("ENVI\nsamples = 2\nbands = 3\n")
        (tmp_path / "bad.img").write_bytes(b"")
        with pytest.raises(CubeFormatError, match="lines"):
            load_cube(str(hdr))

    def test_non_finite_rejected(self, tmp_path):
        data = np.ones((2, 2, 3), dtype=np.float32)
        data[0, 1, 2] = np.nan
        with pytest.raises(CubeFormatError):
            load_cube(_write_envi(tmp_path, data, [1, 2, 3]))

    def test_wavelengths_must_increase(self):
        with pytest.raises(CubeFormatError):
            HsiCube(np.ones((1, 1, 3)), [400, 400, 500], np.ones((1, 1), bool))

    def test_round_trip_bit_identical(self, tmp_path, small_cube):
        p1 = str(tmp_path / "a.hdr")
        save_cube(small_cube, p1)
        again = load_cube(p1)
        p2 = str(tmp_path / "b.hdr")
        save_cube(again, p2)
        assert (tmp_path / "a.img").read_bytes() == (tmp_path / "b.img").read_bytes()
        np.testing.assert_array_equal(again.wavelengths, small_cube.wavelengths)
        np.testing.assert_array_equal(again.mask, small_cube.mask)


class TestStandardize:
    def test_two_points(self):
        cube = make_cube([[[1.0], [3.0]]])
        out, stats = standardize(cube)
        np.testing.assert_allclose(out.data[0, :, 0], [-1.0, 1.0])
        assert stats.mean[0] == 2.0 and stats.std[0] == 1.0

    def test_constant_band(self):
        cube = make_cube([[[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]])
        out, stats = standardize(cube)
        np.testing.assert_array_equal(out.data[0, :, 0], 0.0)
        assert stats.degenerate.tolist() == [True, False]
        assert stats.std[0] == 1.0

    def test_idempotent(self, small_cube):
        once, _ = standardize(small_cube)
        _, stats = standardize(once)
        np.testing.assert_allclose(stats.mean, 0.0, atol=1e-6)
        np.testing.assert_allclose(stats.std, 1.0, atol=1e-6)

    def test_background_zeroed(self, small_cube):
        out, _ = standardize(small_cube)
        assert np.all(out.data[0, 0] == 0)
        np.testing.assert_allclose(out.pixels().mean(axis=0), 0.0, atol=1e-12)

    def test_too_few_pixels(self):
        cube = make_cube([[[1.0], [0.0]]])
        with pytest.raises(ValueError, match="2 valid"):
            standardize(cube)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, (3, 4, 3),
                      elements=st.floats(0.01, 1e3, allow_nan=False)))
    def test_invertible(self, data):
        cube = make_cube(data)
        out, stats = standardize(cube)
        back = destandardize(out.pixels(), stats)
        keep = ~stats.degenerate
        np.testing.assert_allclose(back[:, keep], cube.pixels()[:, keep], rtol=1e-5)


class TestRender:
    wl = np.arange(400, 1001, 2, dtype=float)

    def test_band_135(self):
        assert nearest_band(self.wl, 670) == 135

    def test_tie_goes_low(self):
        assert nearest_band(self.wl, 671) == 135

    def test_defaults(self):
        assert DEFAULT_RGB_NM == (670.0, 540.0, 470.0)

    def test_too_far(self):
        with pytest.raises(ValueError, match="half"):
            nearest_band(self.wl, 2000)

    def test_stretch_and_black_background(self, small_cube):
        rgb = render_pseudocolor(small_cube)
        assert rgb.dtype == np.uint8 and rgb.shape == (4, 5, 3)
        assert np.all(rgb[0, 0] == 0)
        valid = rgb[small_cube.mask]
        assert valid.min(axis=0).tolist() == [0, 0, 0]
        assert valid.max(axis=0).tolist() == [255, 255, 255]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_other_bands_irrelevant(self, seed):
        rng = np.random.default_rng(seed)
        wl = np.linspace(400, 1000, 31)
        data = rng.uniform(0.1, 1, (5, 5, 31))
        used = {nearest_band(wl, nm) for nm in DEFAULT_RGB_NM}
        other = rng.uniform(0.1, 1, data.shape)
        for b in used:
            other[..., b] = data[..., b]
        a = render_pseudocolor(make_cube(data, wl))
        b = render_pseudocolor(make_cube(other, wl))
        np.testing.assert_array_equal(a, b)


class TestGroundTruth:
    table = {1: "road", 2: "roof"}

    def test_empty(self):
        gt = ground_truth_from_labels(np.zeros((3, 3), int), self.table)
        assert gt.regions == []

    def test_two_blobs_same_class(self):
        lab = np.zeros((4, 4), int)
        lab[0, 0] = lab[0, 1] = 1
        lab[3, 3] = 1
        gt = ground_truth_from_labels(lab, self.table)
        assert [r.class_name for r in gt.regions] == ["road", "road"]
        assert [r.area for r in gt.regions] == [2, 1]

    def test_blob_on_background(self):
        lab = np.zeros((3, 3), int)
        lab[1, 1] = lab[1, 2] = 2
        mask = np.ones((3, 3), bool)
        mask[1, 2] = False
        with pytest.raises(CubeFormatError, match=r"\[1, 2\]"):
            ground_truth_from_labels(lab, self.table, mask)

    def test_missing_class(self):
        with pytest.raises(CubeFormatError, match="missing"):
            ground_truth_from_labels(np.full((2, 2), 7), self.table)

    def test_file_round_trip(self, tmp_path, small_cube):
        lab = np.zeros((4, 5), int)
        lab[1:3, 1:4] = 2
        lab[3, 0] = 1
        p = str(tmp_path / "gt.hdr")
        save_label_raster(lab, p, self.table)
        np.testing.assert_array_equal(load_label_raster(p), lab)
        assert json.loads((tmp_path / "gt.classes.json").read_text()) == {"1": "road", "2": "roof"}
        gt = load_ground_truth(p, small_cube)
        assert len(gt.regions) == 2
        np.testing.assert_array_equal(gt.region_map > 0, lab > 0)

    def test_dimension_mismatch(self, tmp_path, small_cube):
        p = str(tmp_path / "gt.hdr")
        save_label_raster(np.zeros((3, 3), int), p, self.table)
        with pytest.raises(CubeFormatError, match="cube"):
            load_ground_truth(p, small_cube)

    def test_large_ids_use_int32(self, tmp_path):
        lab = np.array([[0, 40000]])
        p = tmp_path / "big.hdr"
        save_label_raster(lab, str(p))
        assert "data type = 3" in p.read_text()
        np.testing.assert_array_equal(load_label_raster(str(p)), lab)
