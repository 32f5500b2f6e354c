import logging

import numpy as np
import pytest

from sapa_upsample.errors import InapplicableError
from sapa_upsample.models import LinearMap, NormFn, SapaConfig, SimilarityFn, Variant
from sapa_upsample.services.kernels import (
    NormStats,
    generate_kernel_map,
    mutual_similarity,
    normalize_backward,
    normalize_weights,
    softmax_backward,
)
from sapa_upsample.services.sapa import window_coord_field


class TestMutualSimilarity:
    def test_orthogonal(self):
        scores = mutual_similarity([1.0, 0.0], [[0.0, 2.0], [0.0, -1.0]])
        np.testing.assert_array_equal(scores, [0.0, 0.0])

    def test_self_similarity(self):
        y = np.array([2.0, 0.0])
        np.testing.assert_array_equal(mutual_similarity(y, [y, y, y]), [4.0, 4.0, 4.0])

    def test_embedded_identity_reduces_to_inner(self, rng):
        y = rng.standard_normal(5)
        points = rng.standard_normal((7, 5))
        eye = LinearMap.identity(5)
        np.testing.assert_allclose(
            mutual_similarity(y, points, SimilarityFn.EMBEDDED, eye, eye),
            mutual_similarity(y, points),
        )

    def test_inner_needs_equal_channels(self):
        with pytest.raises(InapplicableError, match="channels"):
            mutual_similarity([1.0, 2.0, 3.0], [[1.0, 2.0]])


class TestNormalizeWeights:
    @pytest.mark.parametrize("h", [NormFn.EXP, NormFn.RELU, NormFn.SIGMOID, NormFn.SOFTPLUS])
    def test_equal_scores_are_uniform(self, h):
        np.testing.assert_allclose(normalize_weights(np.full(6, 0.7), h), np.full(6, 1 / 6))

    def test_exp_matches_softmax(self):
        v = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(normalize_weights(v), np.exp(v) / np.exp(v).sum())

    def test_exp_weights_ignore_score_shift(self, rng):
        scores = rng.standard_normal((3, 9))
        shifted = scores + rng.uniform(-20.0, 20.0, size=(3, 1))
        np.testing.assert_allclose(normalize_weights(shifted, axis=1), normalize_weights(scores, axis=1), rtol=1e-10)

    def test_relu_zero_denominator_falls_back(self, caplog):
        stats = NormStats()
        with caplog.at_level(logging.WARNING):
            w = normalize_weights(np.array([-1.0, -2.0, -3.0]), NormFn.RELU, stats=stats)
        np.testing.assert_allclose(w, [1 / 3] * 3)
        assert stats.fallbacks == 1
        assert "uniform" in caplog.text

    def test_none_passes_scores_through(self):
        v = np.array([0.5, -2.0])
        np.testing.assert_array_equal(normalize_weights(v, NormFn.NONE), v)

    @pytest.mark.parametrize("h", [NormFn.EXP, NormFn.SIGMOID, NormFn.SOFTPLUS, NormFn.RELU])
    def test_sum_to_one_and_non_negative(self, rng, h):
        scores = rng.standard_normal((4, 9)) + (2.0 if h is NormFn.RELU else 0.0)
        w = normalize_weights(scores, h, axis=1)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(w >= 0)


class TestNormalizeBackward:
    def test_uniform_softmax_has_zero_gradient(self):
        w = np.full(4, 0.25)
        np.testing.assert_allclose(softmax_backward(w, np.ones(4)), 0.0, atol=1e-15)

    def test_saturated_softmax_is_flat(self):
        w = normalize_weights(np.array([40.0, 0.0, 0.0]))
        assert np.abs(softmax_backward(w, np.array([1.0, -2.0, 0.5]))).max() < 1e-12

    @pytest.mark.parametrize("h", list(NormFn))
    def test_matches_finite_differences(self, rng, h):
        scores = rng.standard_normal(5) + (1.5 if h is NormFn.RELU else 0.0)
        u = rng.standard_normal(5)
        grad = normalize_backward(scores, normalize_weights(scores, h), u, h)
        step = 1e-5
        for i in range(5):
            sp, sm = scores.copy(), scores.copy()
            sp[i] += step
            sm[i] -= step
            numeric = (np.sum(normalize_weights(sp, h) * u) - np.sum(normalize_weights(sm, h) * u)) / (2 * step)
            assert grad[i] == pytest.approx(numeric, rel=1e-6, abs=1e-9)


class TestGenerateKernelMap:
    def _coords(self, cfg, h, w):
        return window_coord_field(1, h, w, cfg)

    def test_constant_decoder_gives_uniform_kernels(self, rng):
        cfg = SapaConfig(variant=Variant.I, kernel_size=3)
        decoder = np.full((1, 4, 5, 5), 2.0)
        encoder = rng.standard_normal((1, 4, 10, 10))
        kmap = generate_kernel_map(decoder, encoder, self._coords(cfg, 5, 5), cfg)
        np.testing.assert_allclose(kmap.weights, 1 / 9, atol=1e-12)

    def test_single_point_kernel_is_one(self, rng):
        cfg = SapaConfig(variant=Variant.I, kernel_size=1)
        decoder = rng.standard_normal((1, 2, 3, 3))
        encoder = rng.standard_normal((1, 2, 6, 6))
        kmap = generate_kernel_map(decoder, encoder, self._coords(cfg, 3, 3), cfg)
        np.testing.assert_array_equal(kmap.weights, 1.0)

    def test_detail_window_favors_matching_cluster(self):
        a, b = np.array([3.0, 0.0]), np.array([0.0, 3.0])
        decoder = np.empty((1, 2, 6, 6))
        decoder[0, :, :, :3] = a[:, None, None]
        decoder[0, :, :, 3:] = b[:, None, None]
        encoder = np.broadcast_to(a[None, :, None, None], (1, 2, 12, 12)).copy()
        cfg = SapaConfig(variant=Variant.I, kernel_size=3)
        kmap = generate_kernel_map(decoder, encoder, self._coords(cfg, 6, 6), cfg)
        # output column 5 maps to low-res column 2; window columns 1..3
        w = kmap.at(6, 5)
        on_a = [p for p in range(9) if p % 3 != 2]
        assert w[on_a].sum() > 0.99
        scores = np.array([9.0 if p in on_a else 0.0 for p in range(9)])
        np.testing.assert_allclose(w, np.exp(scores) / np.exp(scores).sum())

    def test_channel_mismatch_for_inner(self, rng):
        cfg = SapaConfig(variant=Variant.I, kernel_size=3)
        with pytest.raises(InapplicableError, match="channel"):
            generate_kernel_map(
                rng.standard_normal((1, 3, 2, 2)), rng.standard_normal((1, 4, 4, 4)), self._coords(cfg, 2, 2), cfg
            )


def brute_force_kernels(decoder, encoder, k, groups, mx=None, my=None):
    """Loop over every output position, clamping the window to the map."""
    n, c, h, w = decoder.shape
    cg = c // groups
    out = np.empty((n, groups, k * k, 2 * h, 2 * w))
    r = k // 2
    for b in range(n):
        for g in range(groups):
            for i in range(2 * h):
                for j in range(2 * w):
                    y = encoder[b, :, i, j]
                    scores = []
                    for dy in range(-r, r + 1):
                        for dx in range(-r, r + 1):
                            x = decoder[b, :, min(max(i // 2 + dy, 0), h - 1), min(max(j // 2 + dx, 0), w - 1)]
                            if mx is None:
                                scores.append(x[g * cg:(g + 1) * cg] @ y[g * cg:(g + 1) * cg])
                            else:
                                scores.append((mx[g].weights @ x) @ (my[g].weights @ y))
                    e = np.exp(np.array(scores) - max(scores))
                    out[b, g, :, i, j] = e / e.sum()
    return out


class TestKernelMapAgainstLoops:
    @pytest.mark.parametrize("seed", range(3))
    def test_inner_similarity(self, seed):
        rng = np.random.default_rng(seed)
        cfg = SapaConfig(variant=Variant.I, kernel_size=3, groups=2)
        decoder = rng.standard_normal((1, 4, 8, 8))
        encoder = rng.standard_normal((1, 4, 16, 16))
        kmap = generate_kernel_map(decoder, encoder, window_coord_field(1, 8, 8, cfg), cfg)
        np.testing.assert_allclose(kmap.weights, brute_force_kernels(decoder, encoder, 3, 2), rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_embedded_similarity(self, seed):
        rng = np.random.default_rng(seed)
        cfg = SapaConfig(variant=Variant.B, kernel_size=3, groups=2, embed_dim=3)
        decoder = rng.standard_normal((1, 4, 8, 8))
        encoder = rng.standard_normal((1, 6, 16, 16))
        mx = [LinearMap(rng.standard_normal((3, 4))) for _ in range(2)]
        my = [LinearMap(rng.standard_normal((3, 6))) for _ in range(2)]
        kmap = generate_kernel_map(decoder, encoder, window_coord_field(1, 8, 8, cfg), cfg, mx, my)
        expected = brute_force_kernels(decoder, encoder, 3, 2, mx, my)
        np.testing.assert_allclose(kmap.weights, expected, rtol=1e-9, atol=1e-12)
