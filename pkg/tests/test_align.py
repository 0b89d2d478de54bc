"""Channel statistics, alignment transform, Gram matrices, and losses."""

import numpy as np
import pytest

from dualalign.align import (adain, channel_stats, content_loss, gram,
                             stats_arrays, style_loss)
from dualalign.gradcheck import grad_check
from dualalign.tensor import Tensor


def _feat(rng, n=2, c=3, h=4, w=4, scale=1.0, dtype=np.float64):
    return Tensor((scale * rng.standard_normal((n, c, h, w))).astype(dtype))


class TestChannelStats:
    def test_constant_channel(self):
        f = Tensor(np.full((1, 1, 2, 2), 7.0, dtype=np.float64))
        s = channel_stats(f, eps=1e-5)
        assert s.mean.item() == pytest.approx(7.0)
        assert s.std.item() == pytest.approx(np.sqrt(1e-5))

    def test_hand_arithmetic(self):
        f = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
        s = channel_stats(f, eps=0.0)
        assert s.mean.item() == pytest.approx(2.5)
        assert s.std.item() == pytest.approx(np.sqrt(1.25))

    def test_zero_tensor(self):
        s = channel_stats(Tensor(np.zeros((1, 2, 3, 3))), eps=1e-5)
        np.testing.assert_allclose(s.mean.data, 0.0)
        np.testing.assert_allclose(s.std.data, np.sqrt(1e-5))

    def test_per_item_per_channel(self):
        rng = np.random.default_rng(0)
        f = _feat(rng, n=3, c=4, h=5, w=6)
        s = channel_stats(f)
        assert s.mean.data.shape == (3, 4, 1, 1)
        np.testing.assert_allclose(s.mean.data[:, :, 0, 0], f.data.mean(axis=(2, 3)))


class TestAdain:
    def test_identity(self):
        f = _feat(np.random.default_rng(1))
        np.testing.assert_allclose(adain(f, f).data, f.data, atol=1e-6)

    def test_constant_source_becomes_target_mean(self):
        rng = np.random.default_rng(2)
        src = Tensor(np.tile(rng.standard_normal((1, 3, 1, 1)), (1, 1, 4, 4)))
        tgt = _feat(rng, n=1)
        out = adain(src, tgt)
        mu_t = tgt.data.mean(axis=(2, 3), keepdims=True)
        np.testing.assert_allclose(out.data, np.broadcast_to(mu_t, out.data.shape),
                                   atol=1e-7)

    def test_scalar_example(self):
        # source channel [0, 2], target [10, 14] with eps -> 0 maps onto the target
        src = Tensor(np.array([0.0, 2.0]).reshape(1, 1, 1, 2))
        tgt = Tensor(np.array([10.0, 14.0]).reshape(1, 1, 1, 2))
        np.testing.assert_allclose(adain(src, tgt, eps=1e-12).data.ravel(),
                                   [10.0, 14.0], atol=1e-5)

    def test_statistics_matching(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            c = int(rng.integers(1, 9))
            hs, ws = (int(rng.integers(4, 17)) for _ in range(2))
            ht, wt = (int(rng.integers(4, 17)) for _ in range(2))
            src = Tensor(rng.standard_normal((2, c, hs, ws)) + rng.normal(0, 3))
            tgt = Tensor(2.0 * rng.standard_normal((2, c, ht, wt)) - 1.0)
            out = adain(src, tgt, eps=1e-5)
            mu_o, sd_o = stats_arrays(out.data, eps=1e-5)
            mu_t, sd_t = stats_arrays(tgt.data, eps=1e-5)
            np.testing.assert_allclose(mu_o, mu_t, atol=1e-5)
            np.testing.assert_allclose(sd_o, sd_t, rtol=1e-3)

    def test_idempotence(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            src = _feat(rng, scale=2.0, h=8, w=8)
            tgt = _feat(rng, scale=2.0, h=8, w=8)
            once = adain(src, tgt)
            twice = adain(once, tgt)
            np.testing.assert_allclose(twice.data, once.data, atol=1e-5)

    def test_commutes_with_spatial_permutation(self):
        rng = np.random.default_rng(5)
        src = _feat(rng, n=1, h=4, w=5)
        tgt = _feat(rng, n=1, h=6, w=3)
        perm = rng.permutation(20)
        out = adain(src, tgt).data.reshape(1, 3, 20)[:, :, perm]
        src_perm = Tensor(src.data.reshape(1, 3, 20)[:, :, perm].reshape(1, 3, 4, 5))
        out_perm = adain(src_perm, tgt).data.reshape(1, 3, 20)
        np.testing.assert_allclose(out_perm, out, atol=1e-12)

    def test_target_batch_broadcast(self):
        rng = np.random.default_rng(6)
        src = _feat(rng, n=3)
        tgt = _feat(rng, n=1)
        out = adain(src, tgt)
        assert out.data.shape == src.data.shape

    def test_channel_mismatch_names_counts(self):
        with pytest.raises(ValueError, match="3.*5"):
            adain(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((1, 5, 2, 2))))

    def test_batch_mismatch(self):
        with pytest.raises(ValueError, match="batch"):
            adain(Tensor(np.zeros((3, 2, 2, 2))), Tensor(np.zeros((2, 2, 2, 2))))

    @pytest.mark.parametrize("seed", range(10))
    def test_grad_both_arguments(self, seed):
        # min_grad skips coordinates where the random projection cancels the
        # gradient below finite-difference resolution
        rng = np.random.default_rng(seed)
        src = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
        tgt = Tensor(rng.standard_normal((2, 3, 5, 5)), requires_grad=True)
        assert grad_check(adain, [src, tgt], seed=seed, min_grad=1e-5) < 1e-4


class TestGram:
    def test_zero_tensor(self):
        g = gram(Tensor(np.zeros((1, 3, 2, 2))), normalized=False)
        np.testing.assert_array_equal(g.values.data, np.zeros((1, 3, 3)))

    def test_single_channel_sum(self):
        f = Tensor(np.ones((1, 1, 2, 2)))
        assert gram(f, normalized=False).values.data[0, 0, 0] == 4.0
        assert gram(f, normalized=True).values.data[0, 0, 0] == 1.0

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(7)
        f = _feat(rng)
        g1 = gram(f, normalized=True).values.data
        g2 = gram(Tensor(3.0 * f.data), normalized=True).values.data
        np.testing.assert_allclose(g2, 9.0 * g1, rtol=1e-5)

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            g = gram(_feat(rng, c=5, h=6, w=3)).values.data[0]
            np.testing.assert_allclose(g, g.T, atol=1e-6)
            eigs = np.linalg.eigvalsh(g)
            assert eigs.min() >= -1e-6 * np.trace(g)

    def test_spatial_permutation_invariance(self):
        rng = np.random.default_rng(9)
        f = _feat(rng, n=1, c=4, h=3, w=5)
        perm = rng.permutation(15)
        f_perm = Tensor(f.data.reshape(1, 4, 15)[:, :, perm].reshape(1, 4, 3, 5))
        np.testing.assert_allclose(gram(f_perm).values.data, gram(f).values.data,
                                   atol=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_grad(self, seed):
        rng = np.random.default_rng(seed)
        f = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
        assert grad_check(lambda t: gram(t).values, [f], seed=seed, min_grad=1e-5) < 1e-4


class TestLosses:
    def test_content_identity_is_zero(self):
        f = _feat(np.random.default_rng(10))
        assert content_loss(f, f).item() == 0.0

    def test_content_constant_offset(self):
        f = _feat(np.random.default_rng(11))
        g = Tensor(f.data + 2.0)
        assert content_loss(f, g).item() == pytest.approx(4.0, rel=1e-6)

    def test_content_hand_value(self):
        a = Tensor(np.array([1.0, 2.0]).reshape(1, 1, 1, 2))
        b = Tensor(np.zeros((1, 1, 1, 2)))
        assert content_loss(a, b).item() == pytest.approx(2.5)

    def test_content_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            content_loss(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 3))))

    def test_content_target_gets_no_gradient(self):
        from dualalign.tensor import Tape
        rng = np.random.default_rng(12)
        a = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        with Tape() as tape:
            tape.backward(content_loss(a, b))
        assert a.grad is not None
        assert b.grad is None

    def test_style_identity_is_zero(self):
        rng = np.random.default_rng(13)
        feats = [_feat(rng, c=c) for c in (2, 3, 4, 5)]
        assert style_loss(feats, feats).item() == 0.0

    def test_style_additivity_single_layer(self):
        rng = np.random.default_rng(14)
        base = [_feat(rng, c=c) for c in (2, 3, 4, 5)]
        bumped = list(base)
        bumped[2] = Tensor(base[2].data + 1.0)
        total = style_loss(bumped, base).item()
        solo = style_loss([base[0], base[1], bumped[2], base[3]], base).item()
        assert total == pytest.approx(solo, rel=1e-6)

    def test_style_hand_value(self):
        # grams [[1]] vs [[3]] on one layer, zeros elsewhere -> (3-1)^2 = 4
        ones = Tensor(np.ones((1, 1, 1, 1)))
        sqrt3 = Tensor(np.full((1, 1, 1, 1), np.sqrt(3.0)))
        zero = Tensor(np.zeros((1, 1, 1, 1)))
        loss = style_loss([ones, zero, zero, zero], [sqrt3, zero, zero, zero])
        assert loss.item() == pytest.approx(4.0, rel=1e-6)

    def test_style_wrong_layer_count(self):
        f = _feat(np.random.default_rng(15))
        with pytest.raises(ValueError, match="4 feature layers"):
            style_loss([f, f, f], [f, f, f])

    def test_style_channel_mismatch(self):
        rng = np.random.default_rng(16)
        a = [_feat(rng, c=3) for _ in range(4)]
        b = [_feat(rng, c=3) for _ in range(4)]
        b[1] = _feat(rng, c=4)
        with pytest.raises(ValueError, match="channel mismatch"):
            style_loss(a, b)

    def test_losses_nonnegative(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            a, b = _feat(rng), _feat(rng)
            assert content_loss(a, b).item() >= 0.0
            feats_a = [_feat(rng, c=c) for c in (2, 3, 4, 5)]
            feats_b = [_feat(rng, c=c) for c in (2, 3, 4, 5)]
            assert style_loss(feats_a, feats_b).item() >= 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_loss_grads(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((1, 3, 4, 4)))
        assert grad_check(lambda t: content_loss(t, b), [a], seed=seed) < 1e-4
        target = [Tensor(rng.standard_normal((1, 2, 3, 3))) for _ in range(4)]
        synth = [Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
                 for _ in range(4)]
        err = grad_check(lambda *fs: style_loss(list(fs), target), synth, seed=seed)
        assert err < 1e-4
