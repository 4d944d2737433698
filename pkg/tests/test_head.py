"""Fusion classification head: forward semantics, dropout statistics, and
exact gradients.

Oracles: closed-form expectations for the inverted row dropout, a NumPy
re-computation of the forward pipeline, and central finite differences for
every parameter tensor plus the input embedding.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intentdesk import head as hd

CONFIG = hd.HeadConfig(
    text_dim=6,
    num_classes=10,
    intents_embed_dim=4,
    projection_dim=7,
    num_residual_layers=2,
    intents_embedding_dropout=0.9,
    residual_dropout=0.1,
    use_intents_feature=True,
)


def make(seed=0, **overrides):
    cfg = hd.HeadConfig(**{**CONFIG.__dict__, **overrides})
    return cfg, hd.init_params(cfg, seed)


def random_mask(rng, n=10, min_on=1):
    m = rng.random(n) < 0.4
    while m.sum() < min_on:
        m[rng.integers(n)] = True
    return m


class TestConfig:
    def test_aggregated_dim(self):
        assert CONFIG.aggregated_dim == 10
        cfg_sum, _ = make(aggregator="sum", text_dim=4, intents_embed_dim=4)
        assert cfg_sum.aggregated_dim == 4

    def test_sum_mean_require_matching_dims(self):
        with pytest.raises(ValueError):
            make(aggregator="sum")  # text_dim 6 != intents 4
        with pytest.raises(ValueError):
            make(aggregator="mean")

    def test_unknown_aggregator_rejected(self):
        with pytest.raises(ValueError):
            make(aggregator="max")

    def test_dropout_range(self):
        with pytest.raises(ValueError):
            make(intents_embedding_dropout=1.0)
        with pytest.raises(ValueError):
            make(residual_dropout=-0.1)


class TestInit:
    def test_shapes(self):
        _, p = make()
        assert p.intent_embeddings.shape == (10, 4)
        assert p.proj_w.shape == (7, 10)
        assert p.proj_b.shape == (7,)
        assert len(p.residual_w) == 2 and p.residual_w[0].shape == (7, 7)
        assert p.cls_w.shape == (10, 7)

    def test_biases_zero_weights_glorot_bounded(self):
        _, p = make()
        assert not p.proj_b.any() and not p.cls_b.any()
        assert all(not b.any() for b in p.residual_b)
        limit = np.sqrt(6.0 / (7 + 10))
        assert np.abs(p.proj_w).max() <= limit

    def test_named_covers_all_tensors(self):
        _, p = make()
        names = set(p.named())
        assert {"intent_embeddings", "proj_w", "proj_b", "cls_w", "cls_b",
                "residual_w0", "residual_b0", "residual_w1", "residual_b1"} == names


class TestIntentsFeature:
    def test_eval_is_mean_of_relevant_rows(self, rng):
        cfg, p = make()
        mask = random_mask(rng, min_on=2)
        v, w = hd.intents_feature(mask, p, cfg, train=False, rng=None)
        assert np.allclose(v[0], p.intent_embeddings[mask].mean(axis=0))
        assert np.allclose(w.sum(), 1.0)

    def test_empty_mask_gives_zero(self):
        cfg, p = make()
        v, _ = hd.intents_feature(np.zeros(10, bool), p, cfg, train=False, rng=None)
        assert not v.any()

    def test_disabled_feature_gives_zero(self, rng):
        cfg, p = make(use_intents_feature=False)
        mask = random_mask(rng)
        v, w = hd.intents_feature(mask, p, cfg, train=True, rng=rng)
        assert not v.any() and not w.any()

    def test_inverted_dropout_unbiased(self):
        """Monte-Carlo mean of the train-mode feature equals the eval feature
        within 2% relative error over 10^5 samples."""
        cfg, p = make(intents_embedding_dropout=0.9)
        rng = np.random.default_rng(3)
        mask = np.zeros(10, bool)
        mask[[1, 4, 6, 9]] = True
        eval_v, _ = hd.intents_feature(mask, p, cfg, train=False, rng=None)
        n = 100_000
        masks = np.tile(mask, (n, 1))
        train_v, _ = hd.intents_feature(masks, p, cfg, train=True, rng=rng)
        mc = train_v.mean(axis=0)
        assert np.linalg.norm(mc - eval_v[0]) <= 0.02 * max(np.linalg.norm(eval_v[0]), 1e-12)

    def test_all_dropped_rows_zero_feature_and_gradient(self):
        cfg, p = make(intents_embedding_dropout=0.9)

        class AllDropRng:
            def random(self, shape):
                return np.ones(shape)  # 1.0 >= keep threshold => drop everything

        mask = np.ones(10, bool)
        e = np.zeros(6)
        logits, cache = hd.forward(e, mask, p, cfg, train=True, rng=AllDropRng())
        assert not cache.pool_weights.any()
        d = np.random.default_rng(0).normal(size=10)
        grads = hd.backward(cache, d, p, cfg)
        assert not grads.params.intent_embeddings.any()


class TestForward:
    def test_single_and_batch_agree(self, rng):
        cfg, p = make()
        e = rng.normal(size=6)
        mask = random_mask(rng)
        single, _ = hd.forward(e, mask, p, cfg)
        batch, _ = hd.forward(np.stack([e, e]), np.stack([mask, mask]), p, cfg)
        assert single.shape == (10,)
        assert np.allclose(batch[0], single) and np.allclose(batch[1], single)

    def test_manual_pipeline_oracle(self, rng):
        """Re-compute concat -> projection -> residual -> classifier by hand."""
        cfg, p = make(num_residual_layers=1)
        e = rng.normal(size=6)
        mask = random_mask(rng, min_on=2)
        got, _ = hd.forward(e, mask, p, cfg)

        v = p.intent_embeddings[mask].mean(axis=0)
        z = np.concatenate([e, v])
        x = p.proj_w @ z + p.proj_b
        x = x + np.tanh(p.residual_w[0] @ x + p.residual_b[0])
        want = p.cls_w @ x + p.cls_b
        assert np.allclose(got, want)

    def test_shape_mismatch_raises(self, rng):
        cfg, p = make()
        with pytest.raises(ValueError):
            hd.forward(np.zeros(5), np.ones(10, bool), p, cfg)
        with pytest.raises(ValueError):
            hd.forward(np.zeros(6), np.ones(9, bool), p, cfg)

    def test_train_without_rng_raises(self):
        cfg, p = make()
        with pytest.raises(ValueError):
            hd.forward(np.zeros(6), np.ones(10, bool), p, cfg, train=True)

    def test_eval_deterministic(self, rng):
        cfg, p = make()
        e = rng.normal(size=6)
        mask = random_mask(rng)
        a, _ = hd.forward(e, mask, p, cfg)
        b, _ = hd.forward(e, mask, p, cfg)
        assert np.array_equal(a, b)


class TestBackward:
    @pytest.mark.parametrize("train", [False, True])
    def test_finite_differences_all_tensors(self, train):
        cfg, p = make(seed=5)
        rng = np.random.default_rng(11)
        e = rng.normal(size=6)
        mask = random_mask(rng, min_on=3)
        gold = 4

        class FrozenRng:
            """Replays one pre-sampled uniform stream so dropout masks are
            identical across the repeated forwards of finite differencing."""

            def __init__(self):
                self.base = np.random.default_rng(99)
                self.draws = []
                self.i = 0

            def random(self, shape):
                if self.i >= len(self.draws):
                    self.draws.append(self.base.random(shape))
                out = self.draws[self.i]
                self.i += 1
                return out

            def reset(self):
                self.i = 0

        frozen = FrozenRng()

        def loss_of(params):
            frozen.reset()
            logits, cache = hd.forward(
                e, mask, params, cfg, train=train, rng=frozen if train else None
            )
            m = logits.max()
            return float(-(logits[gold] - m - np.log(np.exp(logits - m).sum()))), cache, logits

        loss, cache, logits = loss_of(p)
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        dlogits = probs.copy()
        dlogits[gold] -= 1.0
        grads = hd.backward(cache, dlogits, p, cfg)

        eps = 1e-6
        named = p.named()
        gnamed = grads.params.named()
        rng2 = np.random.default_rng(0)
        for name, theta in named.items():
            flat = theta.reshape(-1)
            idx = rng2.choice(flat.size, size=min(12, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                up, _, _ = loss_of(p)
                flat[i] = orig - eps
                down, _, _ = loss_of(p)
                flat[i] = orig
                num = (up - down) / (2 * eps)
                an = gnamed[name].reshape(-1)[i]
                assert abs(num - an) < 1e-7, f"{name}[{i}]: {num} vs {an}"

        # input-embedding gradient
        de = grads.d_embedding.reshape(-1)
        for i in range(6):
            orig = e[i]
            e[i] = orig + eps
            up, _, _ = loss_of(p)
            e[i] = orig - eps
            down, _, _ = loss_of(p)
            e[i] = orig
            num = (up - down) / (2 * eps)
            assert abs(num - de[i]) < 1e-7

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_batch_gradient_is_sum_of_singles(self, seed):
        cfg, p = make()
        rng = np.random.default_rng(seed)
        E = rng.normal(size=(3, 6))
        M = np.stack([random_mask(rng) for _ in range(3)])
        D = rng.normal(size=(3, 10))

        _, cache = hd.forward(E, M, p, cfg)
        batch_grads = hd.backward(cache, D, p, cfg)

        want = hd.zero_grads(cfg).named()
        for i in range(3):
            _, c = hd.forward(E[i], M[i], p, cfg)
            g = hd.backward(c, D[i], p, cfg)
            for name, arr in g.params.named().items():
                want[name] += arr
        for name, arr in batch_grads.params.named().items():
            assert np.allclose(arr, want[name]), name
