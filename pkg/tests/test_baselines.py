import json

import numpy as np
import pytest

from conftest import make_cube
from dpgmm_hsi.baselines import BenchConfig, BenchResult, kmeans_fit, kmeans_predict, run_bench
from dpgmm_hsi.model import ModelParams
from dpgmm_hsi.synth import default_scene_spec, sample_gmm, sample_scene


@pytest.fixture(scope="module")
def two_clouds():
    x, lab = sample_gmm([0.5, 0.5], [[-5.0], [5.0]], [[0.5], [0.5]], 1000, 31)
    return x, lab


class TestKMeans:
    def test_two_clouds(self, two_clouds):
        km = kmeans_fit(two_clouds[0], 2, seed=1)
        np.testing.assert_allclose(np.sort(km.centroids[:, 0]), [-5, 5], atol=0.1)

    def test_k1_is_mean(self):
        x = np.random.default_rng(2).standard_normal((40, 3))
        km = kmeans_fit(x, 1)
        np.testing.assert_allclose(km.centroids[0], x.mean(axis=0), rtol=0, atol=1e-15)

    def test_deterministic(self):
        x = np.random.default_rng(3).standard_normal((200, 2))
        a, b = kmeans_fit(x, 4, seed=5), kmeans_fit(x, 4, seed=5)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_inertia_non_increasing(self):
        x = np.random.default_rng(4).standard_normal((500, 3))
        km = kmeans_fit(x, 6, seed=0)
        assert np.all(np.diff(km.inertia_trace) <= 1e-9)
        assert km.inertia <= km.inertia_trace[-1] + 1e-9

    def test_predict_reproduces_fit(self):
        x = np.random.default_rng(5).standard_normal((300, 2))
        km = kmeans_fit(x, 3, seed=0)
        np.testing.assert_array_equal(kmeans_predict(km, x), km.labels)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            kmeans_fit(np.zeros((2, 1)), 3)

    def test_duplicate_points_fill_all_clusters(self):
        x = np.array([[0.0], [0.0], [0.0], [1.0]])
        km = kmeans_fit(x, 3, seed=0)
        assert np.all(np.isfinite(km.centroids))


class TestKMeansPredict:
    km = kmeans_fit(np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]]), 3, seed=0)

    def test_at_centroid(self):
        assert kmeans_predict(self.km, self.km.centroids[1]) == 2

    def test_equidistant_low(self):
        c = self.km.centroids
        mid = (c[0] + c[1]) / 2
        assert kmeans_predict(self.km, mid) == min(1, 2)

    def test_scale_invariant(self):
        x = np.random.default_rng(0).standard_normal((100, 2)) * 3
        scaled = type(self.km)(3, self.km.centroids * 2.5, 0.0)
        np.testing.assert_array_equal(kmeans_predict(self.km, x), kmeans_predict(scaled, x * 2.5))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kmeans_predict(self.km, [1.0, 2.0, 3.0])


class TestBench:
    def test_accounting(self):
        cube, _, _ = sample_scene(default_scene_spec(height=16, width=16))
        data = np.array(cube.data)
        data[0, :3] = 0
        cube = make_cube(data, cube.wavelengths)
        model = ModelParams([0.5, 0.5], np.zeros((2, 20)), np.ones((2, 20)), [1.0, 1.0])
        res = run_bench(cube, BenchConfig(k=3, repeats=2), model)
        assert res.n_pixels == cube.n_valid == 253
        assert res.execution_time("dpgmm") == res.timings["dpgmm"]["predict"]
        km = res.timings["kmeans"]
        assert res.execution_time("kmeans") == km["fit"] + km["predict"]
        assert all(v >= 0 for t in res.timings.values() for v in t.values())
        doc = json.loads(res.to_json())
        assert doc["n_pixels"] == 253 and set(doc["execution_time"]) == {"dpgmm", "kmeans"}

    def test_table_columns(self):
        res = BenchResult("toy", 10, 2, {"dpgmm": {"fit": 0.0, "predict": 0.5},
                                         "kmeans": {"fit": 1.0, "predict": 0.25}})
        head, rule, *rows = res.table().splitlines()
        assert head.split("  ")[0].strip() == "Dataset"
        assert "Algorithm" in head and head.rstrip().endswith("Execution time (s)")
        assert rows[1].split()[:2] == ["toy", "kmeans"] and rows[1].endswith("1.250")

    def test_band_mismatch(self):
        cube, _, _ = sample_scene(default_scene_spec(height=8, width=8))
        model = ModelParams([1.0], np.zeros((1, 3)), np.ones((1, 3)), [1.0])
        with pytest.raises(ValueError, match="bands"):
            run_bench(cube, BenchConfig(repeats=1), model)
