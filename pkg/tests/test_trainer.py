import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from dpgmm_hsi.model import ModelParams, UnconstrainedParams, loss_gradient, predict
from dpgmm_hsi.synth import sample_gmm
from dpgmm_hsi.trainer import (
    FitConfig,
    FitDivergedError,
    collapse_component,
    effective_components,
    fit,
    init_params,
    prune_model,
)


def params_with_pi(pi):
    k = len(pi)
    return ModelParams(pi, np.zeros((k, 1)), np.ones((k, 1)), np.ones(k))


def smoothed(trace, beta=0.9):
    out, s = [], trace[0]
    for v in trace:
        s = beta * s + (1 - beta) * v
        out.append(s)
    return np.array(out)


class TestInit:
    def test_single_component(self):
        x = np.random.default_rng(0).standard_normal((20, 3))
        u = init_params(x, 1, seed=5)
        assert any(np.array_equal(u.mu[0], row) for row in x)
        assert u.pi_logits.tolist() == [0.0]
        assert np.all(u.log_sigma2 == 0) and np.all(u.log_alpha == 0)

    def test_deterministic(self):
        x = np.random.default_rng(1).standard_normal((50, 4))
        a, b = init_params(x, 4, 9), init_params(x, 4, 9)
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())

    def test_exhausts_points(self):
        x = np.array([[0.0, 0.0], [5.0, 1.0], [-2.0, 3.0]])
        u = init_params(x, 3, 0)
        assert sorted(map(tuple, u.mu.tolist())) == sorted(map(tuple, x.tolist()))

    def test_too_few_pixels(self):
        with pytest.raises(ValueError):
            init_params(np.zeros((2, 1)), 3)


class TestEffectiveComponents:
    def test_threshold(self):
        theta = params_with_pi([0.6, 0.39, 0.01])
        assert effective_components(theta, 0.02) == [1, 2]
        assert effective_components(theta, 0.005) == [1, 2, 3]

    def test_ties_by_index(self):
        assert effective_components(params_with_pi([0.2] * 5), 0.01) == [1, 2, 3, 4, 5]

    def test_descending(self):
        assert effective_components(params_with_pi([0.1, 0.5, 0.4]), 0.05) == [2, 3, 1]

    def test_prune_keeps_order_and_renormalises(self):
        pruned = prune_model(params_with_pi([0.3, 0.005, 0.695]), 0.01)
        assert pruned.k == 2
        np.testing.assert_allclose(pruned.pi, [0.3 / 0.995, 0.695 / 0.995])


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(max_k=0), dict(learning_rate=0.0),
                                    dict(prune_threshold=0.2), dict(prune_threshold=0.0),
                                    dict(lr_decay=1.5), dict(patience=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            FitConfig(**kw)

    def test_defaults(self):
        cfg = FitConfig()
        assert (cfg.max_k, cfg.max_epochs, cfg.learning_rate, cfg.rel_tol, cfg.patience,
                cfg.prune_threshold) == (5, 500, 0.05, 1e-6, 10, 1e-2)


def test_collapse_zeroes_weight():
    u = UnconstrainedParams(np.array([0.5, -0.2, 1.0]), np.ones((3, 2)), np.zeros((3, 2)),
                            np.zeros(3))
    from dpgmm_hsi.model import constrain
    theta = constrain(collapse_component(u, 1))
    assert theta.pi[1] == 0.0
    np.testing.assert_array_equal(theta.mu[1], 0.0)
    np.testing.assert_allclose(theta.sigma2[1], 0.5)


@pytest.fixture(scope="module")
def three_blobs():
    means = np.zeros((3, 4))
    means[0, 0], means[1, 1], means[2, 2] = 6.0, 6.0, 6.0
    means -= means.mean(axis=0)
    x, lab = sample_gmm([0.3, 0.3, 0.4], means, np.ones((3, 4)), 3000, seed=21)
    return x, lab, means


class TestFit:
    def test_deterministic(self, three_blobs):
        x = three_blobs[0][:600]
        cfg = FitConfig(max_epochs=60, seed=3)
        a = fit(x, cfg).to_dict(include_wall_time=False)
        b = fit(x, cfg).to_dict(include_wall_time=False)
        assert a == b

    def test_threads_do_not_change_result(self, three_blobs):
        x = three_blobs[0]
        cfg = FitConfig(max_epochs=40, prune_search=False)
        a = fit(x, cfg, threads=1)
        b = fit(x, cfg, threads=3)
        assert a.loss_trace == b.loss_trace
        np.testing.assert_array_equal(a.raw_params.mu, b.raw_params.mu)

    def test_one_component(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((5000, 3))
        rep = fit(x, FitConfig(seed=1))
        assert rep.effective_k == 1
        assert np.abs(rep.final_params.mu[0]).max() < 0.1
        assert rep.loss_trace[-1] <= rep.loss_trace[0]

    def test_three_components(self, three_blobs):
        x, lab, means = three_blobs
        rep = fit(x, FitConfig())
        assert rep.effective_k == 3
        assert rep.final_params.k == 3
        assert adjusted_rand_score(lab, predict(rep.final_params, x)) >= 0.95
        for m in means:
            assert np.abs(rep.final_params.mu - m).max(axis=1).min() < 0.15
        assert rep.loss_trace[-1] <= rep.loss_trace[0]
        for s, e in zip(rep.stage_starts, rep.stage_starts[1:] + [len(rep.loss_trace)]):
            sm = smoothed(rep.loss_trace[s:e])
            assert np.all(sm[50:] <= sm[:-50])

    def test_prior_pull(self):
        x = np.random.default_rng(0).standard_normal((10, 2)) * 3
        cfg = FitConfig(max_k=2, prune_threshold=0.1, max_epochs=3000, rel_tol=1e-12,
                        patience=50)
        rep = fit(x, cfg, prior_only=True)
        np.testing.assert_allclose(rep.raw_params.sigma2, 0.5, atol=1e-2)
        np.testing.assert_allclose(rep.raw_params.mu, 0.0, atol=1e-2)

    def test_minibatch_equal_to_full(self, three_blobs):
        x = three_blobs[0][:400]
        base = dict(max_epochs=5, prune_search=False)
        full = fit(x, FitConfig(batch_size=0, **base))
        mb = fit(x, FitConfig(batch_size=len(x), **base))
        assert full.loss_trace == mb.loss_trace
        # one-step gradients agree when the "batch" is the whole set in sorted order
        u = init_params(x, 5, 42)
        order = np.sort(np.random.default_rng(0).permutation(len(x)))
        np.testing.assert_array_equal(loss_gradient(u, x).to_vector(),
                                      loss_gradient(u, x[order], len(x) / len(x)).to_vector())

    def test_minibatch_runs(self, three_blobs):
        x, lab, _ = three_blobs
        rep = fit(x, FitConfig(batch_size=500, max_epochs=150))
        assert rep.loss_trace[-1] < rep.loss_trace[0]
        assert adjusted_rand_score(lab, predict(rep.final_params, x)) > 0.9

    def test_divergence_reported(self, three_blobs):
        with pytest.raises(FitDivergedError, match=r"epoch 1 \(non-finite log_"):
            fit(three_blobs[0][:100], FitConfig(max_epochs=5, learning_rate=1e5))

    def test_verbose_records(self, three_blobs, capsys):
        fit(three_blobs[0][:200], FitConfig(max_epochs=3, prune_search=False), verbose=True)
        lines = capsys.readouterr().err.strip().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("epoch=1 loss=") and "effective_k=" in lines[0]

    def test_too_few_pixels(self):
        with pytest.raises(ValueError, match="max_k"):
            fit(np.zeros((3, 2)), FitConfig(max_k=5))
