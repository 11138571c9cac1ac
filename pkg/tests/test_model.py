import math

import numpy as np
import pytest

from tbformer import nn
from tbformer import numerics as nx
from tbformer.ahfm import hierarchical_fuse, init_ahfm, init_tap, position_attention_fuse
from tbformer.config import ConfigError, ModelConfig
from tbformer.decoder import decode_full, init_decoder
from tbformer.extractor import branch_forward, extract, init_branch, patch_embed, patchify, tokens_to_map
from tbformer.model import COMPONENTS, bce_loss, forward, init_params, predict
from tbformer.numerics import ShapeError, Tensor


def leaves(params):
    return nx.leaves_from(params, requires_grad=False)


def random_image(seed, h, w):
    return np.random.default_rng(seed).uniform(size=(3, h, w))


class TestConfig:
    def test_paper_geometry(self):
        cfg = ModelConfig.paper()
        assert cfg.num_patches == 1024
        assert cfg.taps == (4, 8, 12)

    def test_toy_geometry(self):
        cfg = ModelConfig.toy()
        assert (cfg.H, cfg.W, cfg.patch, cfg.dim, cfg.depth, cfg.heads) == (32, 32, 16, 16, 3, 2)
        assert cfg.num_patches == 4
        assert cfg.taps == (1, 2, 3)

    @pytest.mark.parametrize(
        "bad",
        [dict(H=33), dict(depth=4), dict(dim=20, heads=3), dict(dim=12, heads=2), dict(variant="x"), dict(bayar_kernel=4)],
    )
    def test_invalid_configs(self, bad):
        with pytest.raises(ConfigError):
            ModelConfig(**bad)


class TestExtractor:
    def test_patchify_order(self):
        img = np.arange(3 * 4 * 4, dtype=float).reshape(3, 4, 4)
        rows = patchify(Tensor(img), 2).data
        assert rows.shape == (4, 12)
        # second patch is grid (0, 1): pixels (0..1, 2..3); first entry is channel 0 at (0, 2)
        np.testing.assert_array_equal(rows[1, :3], img[:, 0, 2])
        np.testing.assert_array_equal(rows[2, :3], img[:, 2, 0])

    def test_zero_embedding(self):
        cfg = ModelConfig.toy()
        p = {k: np.zeros_like(v) for k, v in init_branch(np.random.default_rng(0), cfg).items()}
        out = patch_embed(Tensor(np.zeros((3, 32, 32))), leaves(p), cfg)
        assert out.shape == (4, 16)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_shape_mismatch(self):
        cfg = ModelConfig.toy()
        p = leaves(init_branch(np.random.default_rng(0), cfg))
        with pytest.raises(ShapeError):
            patch_embed(Tensor(np.zeros((3, 32, 48))), p, cfg)

    def test_taps_follow_thirds_of_depth(self):
        cfg = ModelConfig.toy(depth=6)
        p = leaves(init_branch(np.random.default_rng(1), cfg))
        tokens = patch_embed(Tensor(random_image(0, 32, 32)), p, cfg)
        taps = branch_forward(tokens, p, cfg)
        x = tokens
        seen = []
        for i in range(6):
            x = nn.transformer_layer(x, nn.scoped(p, f"layers.{i}."), cfg.heads)
            seen.append(x.data)
        for tap, layer in zip(taps, (2, 4, 6)):
            np.testing.assert_array_equal(tap.data, seen[layer - 1])

    def test_unshared_branches_differ(self):
        cfg = ModelConfig.toy()
        img = Tensor(random_image(0, 32, 32))
        a = extract(img, leaves(init_branch(np.random.default_rng(1), cfg)), cfg)
        b = extract(img, leaves(init_branch(np.random.default_rng(2), cfg)), cfg)
        for ta, tb in zip(a, b):
            assert not np.array_equal(ta.data, tb.data)

    def test_permutation_equivariance_without_positions(self):
        cfg = ModelConfig(H=32, W=32, patch=8, dim=16, depth=3, heads=2)
        p = init_branch(np.random.default_rng(3), cfg)
        p["pos"] = np.zeros_like(p["pos"])
        tokens = patch_embed(Tensor(random_image(3, 32, 32)), leaves(p), cfg).data
        perm = np.random.default_rng(4).permutation(cfg.num_patches)
        base = branch_forward(Tensor(tokens), leaves(p), cfg)
        shuffled = branch_forward(Tensor(tokens[perm]), leaves(p), cfg)
        for t0, t1 in zip(base, shuffled):
            np.testing.assert_allclose(t1.data, t0.data[perm], rtol=1e-10, atol=1e-12)

    def test_tokens_to_map_roundtrip(self):
        t = np.arange(6 * 8, dtype=float).reshape(6, 8)
        fmap = tokens_to_map(Tensor(t), (2, 3))
        assert fmap.shape == (8, 2, 3)
        assert fmap.data[5, 1, 2] == t[5, 5]
        with pytest.raises(ShapeError):
            tokens_to_map(Tensor(t), (2, 2))


def tap_inputs(seed, n, dim):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((n, dim))), Tensor(rng.standard_normal((n, dim)))


def tap_params(seed, dim, alpha=0.0):
    p = init_tap(np.random.default_rng(seed), dim)
    p["alpha"] = np.array([alpha])
    return p


class TestAHFM:
    def test_zero_alpha_is_conv_of_merged(self):
        t_rgb, t_noise = tap_inputs(0, 6, 16)
        p = tap_params(0, 16, alpha=0.0)
        out = position_attention_fuse(t_rgb, t_noise, leaves(p), (2, 3)).data
        stacked = nx.concat([tokens_to_map(t_rgb, (2, 3)), tokens_to_map(t_noise, (2, 3))], axis=0)
        merged = nn.conv2d(stacked, nn.scoped(leaves(p), "merge."))
        expect = nn.conv2d(merged, nn.scoped(leaves(p), "fuse.")).data
        np.testing.assert_array_equal(out, expect)

    def test_zero_alpha_ignores_query_key(self):
        t_rgb, t_noise = tap_inputs(1, 6, 16)
        p = tap_params(1, 16, alpha=0.0)
        base = position_attention_fuse(t_rgb, t_noise, leaves(p), (3, 2)).data
        rng = np.random.default_rng(9)
        for name in ("query.weight", "query.bias", "key.weight", "key.bias"):
            q = dict(p)
            q[name] = p[name] + rng.standard_normal(p[name].shape)
            out = position_attention_fuse(t_rgb, t_noise, leaves(q), (3, 2)).data
            assert out.tobytes() == base.tobytes()

    def test_single_position_attention(self):
        t_rgb, t_noise = tap_inputs(2, 1, 16)
        _, attn = position_attention_fuse(t_rgb, t_noise, leaves(tap_params(2, 16, 0.7)), (1, 1), True)
        np.testing.assert_array_equal(attn.data, [[1.0]])

    def test_attention_rows_sum_to_one(self):
        t_rgb, t_noise = tap_inputs(3, 12, 16)
        p = tap_params(3, 16, 0.5)
        p["query.weight"] = p["query.weight"] * 20
        _, attn = position_attention_fuse(t_rgb, t_noise, leaves(p), (3, 4), True)
        assert attn.shape == (12, 12)
        np.testing.assert_allclose(attn.data.sum(axis=1), 1.0, atol=1e-6)

    def test_attention_matches_direct_formula(self):
        t_rgb, t_noise = tap_inputs(4, 6, 16)
        p = tap_params(4, 16, 0.9)
        out = position_attention_fuse(t_rgb, t_noise, leaves(p), (2, 3)).data
        stacked = np.concatenate([t_rgb.data.T.reshape(16, 2, 3), t_noise.data.T.reshape(16, 2, 3)])
        conv = lambda x, name: nn.conv2d(Tensor(x), nn.scoped(leaves(p), name + ".")).data
        merged = conv(stacked, "merge")
        q, k, v = (conv(merged, n).reshape(-1, 6) for n in ("query", "key", "value"))
        s = q.T @ k
        a = np.exp(s - s.max(axis=1, keepdims=True))
        a /= a.sum(axis=1, keepdims=True)
        expect = conv(0.9 * (v @ a).reshape(16, 2, 3) + merged, "fuse")
        np.testing.assert_allclose(out, expect, rtol=1e-11, atol=1e-13)

    def test_grid_must_match(self):
        t_rgb, t_noise = tap_inputs(0, 6, 16)
        with pytest.raises(ShapeError):
            position_attention_fuse(t_rgb, t_noise, leaves(tap_params(0, 16)), (2, 2))

    def test_hierarchical_fuse(self):
        cfg = ModelConfig.toy()
        p = init_ahfm(np.random.default_rng(0), cfg)
        p["final.bias"] = np.zeros_like(p["final.bias"])
        zero = Tensor(np.zeros((16, 2, 2)))
        np.testing.assert_array_equal(hierarchical_fuse(zero, zero, zero, leaves(p)).data, 0.0)
        rng = np.random.default_rng(1)
        zs = [Tensor(rng.standard_normal((16, 2, 2))) for _ in range(3)]
        a = hierarchical_fuse(*zs, leaves(p))
        b = hierarchical_fuse(zs[2], zs[0], zs[1], leaves(p))
        assert a.shape == (16, 2, 2)
        np.testing.assert_allclose(a.data, b.data, rtol=1e-13, atol=1e-14)
        with pytest.raises(ShapeError):
            hierarchical_fuse(zs[0], zs[1], Tensor(np.zeros((16, 2, 3))), leaves(p))

    def test_alpha_starts_at_zero(self):
        p = init_ahfm(np.random.default_rng(0), ModelConfig.toy())
        for tap in ("early", "mid", "late"):
            assert p[f"{tap}.alpha"].tolist() == [0.0]


class TestDecoder:
    def setup_method(self):
        self.cfg = ModelConfig(H=32, W=32, patch=8, dim=16, depth=3, heads=2)
        self.p = init_decoder(np.random.default_rng(0), self.cfg)
        self.z = Tensor(np.random.default_rng(1).standard_normal((16, 4, 4)))

    def test_scores_are_cosines(self):
        out = decode_full(self.z, leaves(self.p), self.cfg)
        assert np.all(np.abs(out.logits.data) <= 1.0 + 1e-12)
        np.testing.assert_allclose(np.linalg.norm(out.patch_unit.data, axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(np.linalg.norm(out.class_unit.data, axis=1), 1.0, atol=1e-6)

    def test_class_probabilities_sum_to_one(self):
        out = decode_full(self.z, leaves(self.p), self.cfg)
        assert out.mask.shape == (2, 32, 32)
        np.testing.assert_allclose(out.mask.data.sum(axis=0), 1.0, atol=1e-6)

    def test_identical_class_rows_give_half(self):
        p = dict(self.p)
        p["cls_emb"] = np.tile(p["cls_emb"][:1], (2, 1))
        out = decode_full(self.z, leaves(p), self.cfg)
        np.testing.assert_allclose(out.mask.data, 0.5, atol=1e-12)

    def test_wrong_input_shape(self):
        with pytest.raises(ShapeError):
            decode_full(Tensor(np.zeros((16, 2, 2))), leaves(self.p), self.cfg)



class TestModel:
    @pytest.mark.parametrize("variant", sorted(COMPONENTS))
    def test_output_shape_and_normalization(self, variant):
        cfg = ModelConfig(H=32, W=32, patch=16, dim=16, depth=3, heads=2, variant=variant)
        mask = forward(random_image(0, 32, 32), leaves(init_params(cfg)), cfg)
        assert mask.shape == (2, 32, 32)
        np.testing.assert_allclose(mask.data.sum(axis=0), 1.0, atol=1e-6)

    def test_variant_components(self):
        for variant, comps in COMPONENTS.items():
            params = init_params(ModelConfig.toy(variant=variant))
            assert {k.split(".")[0] for k in params} == set(comps)
            assert all(v.dtype == np.float32 for v in params.values())

    def test_branch_weights_shared_across_variants(self):
        a = init_params(ModelConfig.toy(variant="rgb_only", seed=3))
        b = init_params(ModelConfig.toy(variant="full_ahfm", seed=3))
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()

    def test_rgb_only_ignores_noise_branch(self):
        cfg = ModelConfig.toy(variant="rgb_only")
        params = init_params(cfg)
        extra = {k.replace("rgb.", "noise.", 1): v * 3 for k, v in params.items() if k.startswith("rgb.")}
        img = random_image(1, 32, 32)
        a = forward(img, leaves(params), cfg).data
        b = forward(img, leaves({**params, **extra}), cfg).data
        assert a.tobytes() == b.tobytes()

    def test_variant_mismatch(self):
        params = init_params(ModelConfig.toy(variant="rgb_only"))
        with pytest.raises(ConfigError):
            forward(random_image(0, 32, 32), leaves(params), ModelConfig.toy(variant="full_ahfm"))

    def test_input_validation(self):
        cfg = ModelConfig.toy()
        p = leaves(init_params(cfg))
        with pytest.raises(ShapeError):
            forward(np.zeros((3, 32, 16)), p, cfg)
        with pytest.raises(ValueError):
            forward(np.full((3, 32, 32), 1.5), p, cfg)

    def test_untrained_predictions_near_uniform(self):
        cfg = ModelConfig()
        prob = predict(random_image(2, 64, 64), init_params(cfg), cfg)
        assert prob.shape == (64, 64)
        assert np.all(np.abs(prob - 0.5) < 0.4)

    def test_init_is_deterministic(self):
        a, b = init_params(ModelConfig.toy(seed=5)), init_params(ModelConfig.toy(seed=5))
        c = init_params(ModelConfig.toy(seed=6))
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
        assert any(a[k].tobytes() != c[k].tobytes() for k in a)


class TestLoss:
    def test_perfect_prediction(self):
        gt = np.array([[0.0, 1.0], [1.0, 0.0]])
        mask = Tensor(np.stack([1 - gt, gt]))
        assert bce_loss(mask, gt).item() < 1e-5

    def test_uniform_prediction(self):
        gt = np.random.default_rng(0).integers(0, 2, (4, 5)).astype(float)
        assert bce_loss(Tensor(np.full((2, 4, 5), 0.5)), gt).item() == pytest.approx(math.log(2), abs=1e-6)

    def test_single_pixel(self):
        loss = bce_loss(Tensor([[[0.75]], [[0.25]]]), np.array([[1.0]]))
        assert loss.item() == pytest.approx(1.3863, abs=1e-4)
        assert loss.item() == pytest.approx(-math.log(0.25), abs=1e-12)

    def test_forged_weight(self):
        gt = np.array([[1.0, 0.0]])
        mask = Tensor(np.array([[[0.6, 0.7]], [[0.4, 0.3]]]))
        expect = -(2.0 * math.log(0.4) + math.log(0.7)) / 2
        assert bce_loss(mask, gt, forged_weight=2.0).item() == pytest.approx(expect, rel=1e-12)

    def test_non_binary_gt(self):
        with pytest.raises(ValueError, match="binary"):
            bce_loss(Tensor(np.full((2, 1, 2), 0.5)), np.array([[0.5, 1.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_loss(Tensor(np.full((2, 2, 2), 0.5)), np.zeros((2, 3)))


class TestGradients:
    @pytest.mark.parametrize("variant", ["rgb_only", "rgb_noise_concat"])
    def test_small_variants(self, variant):
        cfg = ModelConfig.toy(variant=variant)
        params = {k: v.astype(np.float64) for k, v in init_params(cfg).items()}
        img = random_image(3, 32, 32)
        gt = np.zeros((32, 32))
        gt[4:20, 10:30] = 1.0
        rep = nx.grad_check(
            lambda p: bce_loss(forward(img, p, cfg, strict=False), gt), params, eps=1e-4, max_entries=4
        )
        assert rep.passed(1e-3), rep.format(5)
