"""Attention, key projection, resizing and heatmap aggregation."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovam.errors import (
    ConfigurationError,
    DimensionMismatchError,
    EmptySelectionError,
    NumericInputError,
)
from ovam.heatmaps import (
    MEAN_OVER_SLICES,
    RAW_SUM,
    SelectionConfig,
    attention_matrix,
    compute_ovam,
    export_heatmap,
    heatmap_stats,
    heatmap_to_rgb,
    project_attribution_keys,
    resize_bilinear,
    synthesis_heatmaps,
)

from oracles import attention_oracle, bilinear_oracle, ovam_oracle, project_oracle


class TestProjectKeys:
    def test_identity_weights_reshape_tokens(self):
        embed = 6
        weights = np.eye(embed).reshape(1, embed, embed)  # 1 head, head_dim = embed
        rows = np.arange(12, dtype=float).reshape(2, embed)
        out = project_attribution_keys(rows, weights)
        np.testing.assert_array_equal(out, rows.reshape(2, 1, embed))

    def test_toy_weights_match_matmul_oracle(self, backend, trace0):
        rows = backend.encode_text("dog").tokens
        w = trace0.key_weights["cross_r1"]
        np.testing.assert_allclose(project_attribution_keys(rows, w),
                                   project_oracle(rows, w), atol=1e-6)

    def test_zero_weights_zero_keys(self):
        rows = np.ones((3, 4))
        out = project_attribution_keys(rows, np.zeros((2, 5, 4)))
        np.testing.assert_array_equal(out, 0.0)

    def test_width_mismatch_names_both_widths(self):
        with pytest.raises(DimensionMismatchError) as err:
            project_attribution_keys(np.ones((2, 7)), np.zeros((2, 5, 4)))
        assert "7" in str(err.value) and "4" in str(err.value)


class TestAttentionMatrix:
    def test_zero_logits_uniform(self):
        attn = attention_matrix(np.zeros((4, 2, 3)), np.zeros((3, 2, 3)))
        np.testing.assert_allclose(attn, 1.0 / 3.0)

    def test_two_token_scalar_case(self):
        q = np.array([[[1.0, 0.0]]])
        k = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
        attn = attention_matrix(q, k, head_dim=2)
        logits = [1.0 / math.sqrt(2), 0.0]
        m = max(logits)
        exps = [math.exp(v - m) for v in logits]
        expected = [e / sum(exps) for e in exps]
        np.testing.assert_allclose(attn[0, 0], expected, atol=1e-9)

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(11)
        q = rng.normal(size=(10, 2, 4))
        k = rng.normal(size=(5, 2, 4))
        np.testing.assert_allclose(attention_matrix(q, k),
                                   attention_oracle(q, k, 4), atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(scale=3.0, size=(6, 2, 3))
        k = rng.normal(scale=3.0, size=(4, 2, 3))
        attn = attention_matrix(q, k)
        np.testing.assert_allclose(attn.sum(axis=2), 1.0, atol=1e-6)
        assert attn.min() >= 0.0

    def test_huge_logits_stay_finite(self):
        q = np.full((2, 1, 3), 1e4)
        k = np.stack([np.full((1, 3), 1e4), np.full((1, 3), -1e4)])
        attn = attention_matrix(q, k)
        assert np.isfinite(attn).all()

    def test_nan_input_rejected(self):
        q = np.zeros((2, 1, 3))
        k = np.zeros((2, 1, 3))
        k[0, 0, 0] = np.nan
        with pytest.raises(NumericInputError):
            attention_matrix(q, k)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            attention_matrix(np.zeros((2, 1, 3)), np.zeros((2, 2, 3)))


class TestResize:
    def test_identity_when_target_equals_source(self):
        m = np.arange(16, dtype=float).reshape(4, 4)
        np.testing.assert_array_equal(resize_bilinear(m, (4, 4)), m)

    @given(st.floats(-100, 100), st.integers(1, 7), st.integers(1, 7),
           st.integers(1, 9), st.integers(1, 9))
    @settings(max_examples=30, deadline=None)
    def test_constant_maps_stay_constant(self, c, h, w, out_h, out_w):
        m = np.full((h, w), c)
        np.testing.assert_allclose(resize_bilinear(m, (out_w, out_h)), c,
                                   atol=1e-12)

    def test_2x2_to_3x3_matches_closed_form(self):
        m = np.array([[0.0, 1.0], [2.0, 3.0]])
        out = resize_bilinear(m, (3, 3))
        np.testing.assert_allclose(out, bilinear_oracle(m, 3, 3), atol=1e-6)
        # corner alignment: corners copy exactly, center averages all four
        np.testing.assert_allclose(
            out, [[0.0, 0.5, 1.0], [1.0, 1.5, 2.0], [2.0, 2.5, 3.0]])

    def test_random_resizes_match_oracle(self):
        rng = np.random.default_rng(5)
        for src, dst in [((3, 5), (7, 4)), ((8, 8), (3, 3)), ((1, 4), (5, 5))]:
            m = rng.normal(size=src)
            np.testing.assert_allclose(resize_bilinear(m, dst[::-1]),
                                       bilinear_oracle(m, *dst), atol=1e-12)

    def test_zero_target_rejected(self):
        with pytest.raises(ValueError):
            resize_bilinear(np.ones((2, 2)), (0, 3))


class TestComputeOvam:
    def test_single_slice_equals_lone_resized_slice(self, trace0, tokens_dog):
        sel = SelectionConfig(blocks=("cross_r2",), timestep_mode="single",
                              timestep_pivot=2, heads=(1,))
        heat = compute_ovam(trace0, tokens_dog, sel)
        assert heat.slice_count == 1
        keys = project_attribution_keys(tokens_dog.tokens,
                                        trace0.key_weights["cross_r2"])
        attn = attention_matrix(trace0.queries[("cross_r2", 2)], keys, 8)
        grid = attn.reshape(4, 4, 2, tokens_dog.n_tokens)
        for k in range(tokens_dog.n_tokens):
            expected = resize_bilinear(grid[:, :, 1, k], (8, 8))
            np.testing.assert_array_equal(heat.maps[k], expected)

    def test_full_selection_matches_bruteforce_oracle(self, trace0, tokens_dog):
        heat = compute_ovam(trace0, tokens_dog)
        expected, slices = ovam_oracle(trace0, tokens_dog.tokens, 8, 8)
        assert heat.slice_count == slices == 12
        np.testing.assert_allclose(heat.maps, expected, atol=1e-5)

    def test_equivalence_with_synthesis_aggregation(self, backend, trace0):
        tokens = backend.encode_text(trace0.prompt_text)
        direct = synthesis_heatmaps(trace0, backend)
        ours = compute_ovam(trace0, tokens)
        np.testing.assert_array_equal(direct.maps, ours.maps)

    def test_linearity_over_timestep_partition(self, trace0, tokens_dog):
        full = compute_ovam(trace0, tokens_dog, SelectionConfig())
        parts = [
            compute_ovam(trace0, tokens_dog,
                         SelectionConfig(timestep_mode="single", timestep_pivot=t))
            for t in trace0.timesteps
        ]
        np.testing.assert_allclose(full.maps, sum(p.maps for p in parts),
                                   atol=1e-6)
        assert full.slice_count == sum(p.slice_count for p in parts)

    def test_non_negative_and_bounded(self, trace0, tokens_dog):
        raw = compute_ovam(trace0, tokens_dog, normalization=RAW_SUM)
        assert raw.maps.min() >= 0.0
        assert raw.maps.max() <= raw.slice_count
        mean = compute_ovam(trace0, tokens_dog, normalization=MEAN_OVER_SLICES)
        assert mean.maps.max() <= 1.0
        np.testing.assert_allclose(mean.maps * mean.slice_count, raw.maps,
                                   atol=1e-9)

    def test_permuting_tokens_permutes_channels(self, trace0, backend):
        tokens = backend.encode_text("dog cat")
        perm = [2, 0, 3, 1]
        from ovam.trace import TokenEmbeddingMatrix
        permuted = TokenEmbeddingMatrix(
            tokens.tokens[perm], tuple(tokens.token_labels[i] for i in perm))
        a = compute_ovam(trace0, tokens)
        b = compute_ovam(trace0, permuted)
        # softmax denominators sum in permuted order; only rounding differs
        np.testing.assert_allclose(b.maps, a.maps[perm], rtol=0, atol=1e-12)

    def test_output_size_resizes_channels(self, trace0, tokens_dog):
        heat = compute_ovam(trace0, tokens_dog,
                            SelectionConfig(output_size=(16, 12)))
        assert heat.maps.shape == (tokens_dog.n_tokens, 12, 16)

    def test_early_late_selections(self, trace0, tokens_dog):
        early = SelectionConfig(timestep_mode="early", timestep_pivot=2)
        late = SelectionConfig(timestep_mode="late", timestep_pivot=2)
        assert early.resolve_timesteps(trace0) == (1, 2)
        assert late.resolve_timesteps(trace0) == (2, 3)

    def test_empty_selection_rejected(self, trace0, tokens_dog):
        sel = SelectionConfig(timestep_mode="single", timestep_pivot=99)
        with pytest.raises(EmptySelectionError):
            compute_ovam(trace0, tokens_dog, sel)

    def test_unknown_block_rejected(self, trace0, tokens_dog):
        with pytest.raises(ConfigurationError):
            compute_ovam(trace0, tokens_dog, SelectionConfig(blocks=("nope",)))

    def test_embed_width_mismatch_rejected(self, trace0):
        from ovam.trace import TokenEmbeddingMatrix
        bad = TokenEmbeddingMatrix(np.ones((1, 7)), ("x",))
        with pytest.raises(DimensionMismatchError):
            compute_ovam(trace0, bad)


class TestExport:
    def test_stats(self):
        m = np.array([[0.0, 0.5], [1.0, 0.25]])
        stats = heatmap_stats(m, tau=0.4)
        assert stats["max"] == 1.0
        assert stats["area_at_tau"] == 0.5  # 0.5 and 1.0 clear 0.4
        assert heatmap_stats(np.zeros((2, 2)), 0.4) == {"max": 0.0,
                                                        "area_at_tau": 0.0}

    def test_false_color_is_monotone_in_intensity(self):
        ramp = np.linspace(0, 1, 16).reshape(1, 16)
        rgb = heatmap_to_rgb(ramp)
        assert rgb.shape == (1, 16, 3)
        total = rgb.astype(int).sum(axis=2)[0]
        assert (np.diff(total) >= 0).all()

    def test_export_writes_three_files(self, tmp_path, trace0, tokens_dog):
        heat = compute_ovam(trace0, tokens_dog)
        paths = export_heatmap(heat, 5, tmp_path / "dog")
        raster = np.frombuffer(
            (tmp_path / "dog.f32").read_bytes(), dtype="<f4").reshape(8, 8)
        np.testing.assert_allclose(raster, heat.channel(5), atol=1e-6)
        assert (tmp_path / "dog.png").is_file()
        import json
        meta = json.loads((tmp_path / "dog.json").read_text())
        assert meta["token_label"] == "dog"
        assert meta["width"] == 8 and meta["height"] == 8
