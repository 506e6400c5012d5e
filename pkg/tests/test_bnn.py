from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, flatten_dim, parameter_count
from pffpclass.bnn import (
    BayesianCNN,
    NetworkArch,
    TrainConfig,
    draw_noise,
    elbo_loss,
    forward_sample,
    init_network,
    inverse_softplus,
    kl_divergence,
    predict_mc,
    softplus,
    train,
)
from pffpclass.errors import Diverged


def zero_network(arch=NetworkArch()):
    net = init_network(arch, 0)
    return BayesianCNN(
        arch,
        {k: np.zeros_like(v) for k, v in net.mu.items()},
        {k: np.full_like(v, -np.inf) for k, v in net.rho.items()},
    )


def frozen_sd(net):
    """Same means, zero posterior deviation."""
    return BayesianCNN(net.arch, net.mu, {k: np.full_like(v, -np.inf) for k, v in net.rho.items()})


def toy_embedding(n=120, seed=0):
    """Two classes separated along a fixed direction in the 211-bin space."""
    rng = np.random.default_rng(seed)
    direction = np.sin(np.linspace(0, 3 * np.pi, 211))
    y = np.repeat([1, 2], n // 2)
    X = rng.normal(0, 0.5, (n, 211)) + np.where(y == 1, 1.0, -1.0)[:, None] * direction
    return X, y


class TestInit:
    def test_seeded(self):
        a, b = init_network(seed=3), init_network(seed=3)
        for k in a.mu:
            assert np.array_equal(a.mu[k], b.mu[k]) and np.array_equal(a.rho[k], b.rho[k])

    def test_parameter_count(self):
        arch = NetworkArch()
        assert arch.flatten_dim == flatten_dim() == 832
        assert arch.n_parameters() == parameter_count(832) == 56244
        net = init_network(arch)
        assert sum(v.size for v in net.mu.values()) == parameter_count(arch.flatten_dim)

    def test_initial_deviation(self):
        net = init_network(seed=1)
        for s in net.sigma().values():
            assert np.max(np.abs(s - 0.05)) < 1e-9

    def test_softplus_inverse(self):
        for y in (1e-4, 0.05, 0.3, 2.0):
            assert softplus(inverse_softplus(y)) == pytest.approx(y, rel=1e-12)


class TestForward:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 20.0))
    def test_outputs_are_probabilities(self, seed, scale):
        rng = np.random.default_rng(seed)
        p = forward_sample(init_network(seed=seed % 7), rng.normal(0, scale, 211), rng)
        assert p.shape == (4,)
        assert abs(p.sum() - 1.0) < 1e-9 and np.all(p > 0)

    def test_zero_network_is_uniform(self):
        x = np.random.default_rng(0).normal(size=211)
        np.testing.assert_array_equal(forward_sample(zero_network(), x, np.random.default_rng(0)), [0.25] * 4)

    def test_fixed_seed(self):
        net, x = init_network(seed=2), np.random.default_rng(1).normal(size=211)
        a = forward_sample(net, x, np.random.default_rng(42))
        b = forward_sample(net, x, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_batch_matches_single_rows(self):
        net = init_network(seed=2)
        X = np.random.default_rng(1).normal(size=(3, 211))
        batch = forward_sample(net, X, np.random.default_rng(5))
        for i in range(3):
            np.testing.assert_allclose(forward_sample(net, X[i], np.random.default_rng(5)), batch[i], atol=1e-14)


class TestElbo:
    def test_kl_zero_at_prior(self):
        net = init_network(seed=0)
        prior_sd = np.sqrt(0.1)
        at_prior = BayesianCNN(
            net.arch,
            {k: np.zeros_like(v) for k, v in net.mu.items()},
            {k: np.full_like(v, inverse_softplus(prior_sd)) for k, v in net.rho.items()},
        )
        assert abs(kl_divergence(at_prior, 0.1)) < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.floats(-6.0, 1.0), st.floats(0.01, 2.0))
    def test_kl_non_negative(self, seed, rho, prior_var):
        net = init_network(seed=seed)
        net = BayesianCNN(net.arch, net.mu, {k: np.full_like(v, rho) for k, v in net.rho.items()})
        assert kl_divergence(net, prior_var) >= 0.0

    def test_finite_difference_gradients(self):
        arch = NetworkArch()
        net = init_network(arch, seed=4)
        rng = np.random.default_rng(9)
        x, y = rng.normal(size=(1, 211)), np.array([3])
        eps = draw_noise(net, rng)
        kw = dict(kl_weight=1e-3, prior_variance=0.1, eps=eps)
        res = elbo_loss(net, x, y, **kw)

        def loss():
            return elbo_loss(net, x, y, **kw).loss

        worst = 0.0
        for group, grads in (("mu", res.grad_mu), ("rho", res.grad_rho)):
            params = net.mu if group == "mu" else net.rho
            for key, g in grads.items():
                flat_idx = rng.choice(g.size, size=min(g.size, 12), replace=False)
                for f in flat_idx:
                    idx = np.unravel_index(f, g.shape)
                    num = central_difference(loss, params[key], idx)
                    denom = max(abs(num), abs(g[idx]), 1e-6)
                    worst = max(worst, abs(num - g[idx]) / denom)
        assert worst < 1e-4


class TestTrain:
    def test_zero_epochs(self):
        net = init_network(seed=0)
        X, y = toy_embedding(20)
        out, hist = train(net, X, y, config=TrainConfig(max_epochs=0))
        assert len(hist) == 0
        for k in net.mu:
            assert np.array_equal(out.mu[k], net.mu[k]) and np.array_equal(out.rho[k], net.rho[k])

    def test_toy_embedding_is_learned(self):
        X, y = toy_embedding()
        net, hist = train(init_network(seed=1), X, y, config=TrainConfig(max_epochs=200, seed=1))
        assert len(hist) <= 200
        ce = min(h["train_nll"] for h in hist.epochs)
        assert ce < 0.1

    def test_history_and_early_stopping(self):
        X, y = toy_embedding(80, seed=2)
        Xv, yv = toy_embedding(40, seed=3)
        cfg = TrainConfig(max_epochs=40, patience=3, seed=0)
        net, hist = train(init_network(seed=0), X, y, Xv, yv, cfg)
        assert 1 <= len(hist) <= 40
        assert all("val_loss" in h for h in hist.epochs)
        best = min(h["val_loss"] for h in hist.epochs)
        assert hist.epochs[hist.best_epoch]["val_loss"] == best

    def test_deterministic_given_seed(self):
        X, y = toy_embedding(40)
        cfg = TrainConfig(max_epochs=3, seed=5)
        a, _ = train(init_network(seed=0), X, y, config=cfg)
        b, _ = train(init_network(seed=0), X, y, config=cfg)
        for k in a.mu:
            assert np.array_equal(a.mu[k], b.mu[k])

    def test_divergence_is_reported(self):
        X, y = toy_embedding(20)
        X[0, 0] = np.nan
        with pytest.raises(Diverged):
            train(init_network(seed=0), X, y, config=TrainConfig(max_epochs=2))


class TestPredictMC:
    def test_single_draw_is_forward_sample(self):
        net, x = init_network(seed=3), np.random.default_rng(0).normal(size=211)
        a = predict_mc(net, x, 1, np.random.default_rng(8))
        b = forward_sample(net, x, np.random.default_rng(8))
        np.testing.assert_array_equal(a[0], b)

    def test_zero_deviation_rows_identical(self):
        net = frozen_sd(init_network(seed=3))
        out = predict_mc(net, np.random.default_rng(0).normal(size=211), 10, np.random.default_rng(1))
        assert np.all(out == out[0])

    def test_row_sums(self):
        out = predict_mc(init_network(seed=5), np.random.default_rng(0).normal(size=211), 50, np.random.default_rng(2))
        assert out.shape == (50, 4)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-9

    def test_standard_error_scales_with_root_n(self, trained, synthetic_table):
        bundle, _ = trained
        x = bundle.scaler.scale_bins(synthetic_table.bins)
        net = bundle.network
        # pick the row whose likelihood varies most between draws
        spread = predict_mc(net, x, 20, np.random.default_rng(0)).std(axis=0).max(axis=1)
        row = x[int(np.argmax(spread))]
        # one pool of draws, averaged in disjoint chunks of n
        pool = predict_mc(net, row, 120 * 60, np.random.default_rng(3))
        se = {n: pool.reshape(-1, n, 4).mean(axis=1).std(axis=0) for n in (30, 120)}
        k = int(np.argmax(se[30]))
        assert se[30][k] / se[120][k] == pytest.approx(2.0, abs=0.5)


def test_arch_shapes_consistent():
    arch = replace(NetworkArch(), input_length=100)
    net = init_network(arch, 0)
    p = forward_sample(net, np.zeros(100), np.random.default_rng(0))
    assert p.shape == (4,)
