import numpy as np
import pytest

from artikit.netcore import (
    AttentionParams,
    CondInput,
    Denoiser,
    DenoiserConfig,
    GLOBAL,
    PART,
    PartEmbeddingTable,
    Tensor,
    attach_part_identity,
    attention,
    build_mask_embedding_map,
    finite_diff_gradcheck,
    global_attention,
    load_params,
    save_params,
    within_part_attention,
)
from artikit.sparsegrid import TokenSequence


def make_seq(rng, lengths, dim):
    L = sum(lengths)
    part_ids = np.concatenate([np.full(n, i) for i, n in enumerate(lengths)])
    coords = rng.integers(0, 8, size=(L, 3))
    return TokenSequence(rng.normal(size=(L, dim)), coords, part_ids)


class TestAttention:
    def test_identical_value_rows(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(4, 8))
        k = rng.normal(size=(6, 8))
        v = np.tile(rng.normal(size=(1, 8)), (6, 1))
        out = attention(q, k, v)
        np.testing.assert_allclose(out, np.tile(v[0], (4, 1)), atol=1e-12)

    def test_single_key(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(3, 8))
        k = rng.normal(size=(1, 8))
        v = rng.normal(size=(1, 8))
        np.testing.assert_allclose(attention(q, k, v), np.tile(v, (3, 1)), atol=1e-15)

    def test_two_by_two_hand_softmax(self):
        # Oracle: scalar softmax computed by hand.
        q = k = np.eye(2) * 10.0
        v = np.array([[1.0, 2.0], [3.0, 4.0]])
        s = 100.0 / np.sqrt(2.0)
        w = np.exp(s) / (np.exp(s) + np.exp(0.0))
        expected = np.array([w * v[0] + (1 - w) * v[1],
                             (1 - w) * v[0] + w * v[1]])
        np.testing.assert_allclose(attention(q, k, v), expected, atol=1e-12)

    def test_row_stochastic_weights(self):
        rng = np.random.default_rng(2)
        q = rng.normal(size=(5, 4))
        k = rng.normal(size=(7, 4))
        v = np.ones((7, 3))
        np.testing.assert_allclose(attention(q, k, v), np.ones((5, 3)), atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            attention(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)))


class TestWithinPartAttention:
    def test_single_part_equals_global(self):
        rng = np.random.default_rng(3)
        params = AttentionParams(16, 4, rng)
        seq = make_seq(rng, [10], 16)
        a = within_part_attention(seq, params)
        b = global_attention(seq, params)
        np.testing.assert_array_equal(a.tokens, b.tokens)

    def test_exact_isolation(self):
        rng = np.random.default_rng(4)
        params = AttentionParams(16, 2, rng)
        seq = make_seq(rng, [4, 5, 3], 16)
        out = within_part_attention(seq, params)
        bumped = seq.tokens.copy()
        bumped[4:9] += 10.0  # perturb every part-1 token
        out2 = within_part_attention(seq.with_tokens(bumped), params)
        np.testing.assert_array_equal(out.tokens[0:4], out2.tokens[0:4])
        np.testing.assert_array_equal(out.tokens[9:12], out2.tokens[9:12])
        assert not np.array_equal(out.tokens[4:9], out2.tokens[4:9])

    def test_single_token_parts(self):
        rng = np.random.default_rng(5)
        params = AttentionParams(8, 1, rng)
        seq = make_seq(rng, [1, 1], 8)
        out = within_part_attention(seq, params)
        # softmax over one element is 1: each token attends to itself only,
        # so the attention term is exactly (x Wv) Wo per row
        wv = params.params["blk.wv"].data
        wo = params.params["blk.wo"].data
        for sl in (slice(0, 1), slice(1, 2)):
            h = seq.tokens[sl] + (seq.tokens[sl] @ wv) @ wo
            w1, b1 = params.params["blk.ffn_in.w"].data, params.params["blk.ffn_in.b"].data
            w2, b2 = params.params["blk.ffn_out.w"].data, params.params["blk.ffn_out.b"].data
            h = h + (Tensor(h @ w1 + b1).gelu().data @ w2 + b2)
            np.testing.assert_allclose(out.tokens[sl], h, rtol=0, atol=1e-12)

    def test_token_order_equivariance_within_part(self):
        rng = np.random.default_rng(6)
        params = AttentionParams(16, 4, rng)
        seq = make_seq(rng, [6, 4], 16)
        perm = np.concatenate([rng.permutation(6), 6 + rng.permutation(4)])
        permuted = TokenSequence(seq.tokens[perm], seq.coords[perm], seq.part_ids)
        out = within_part_attention(seq, params)
        out_p = within_part_attention(permuted, params)
        np.testing.assert_allclose(out_p.tokens, out.tokens[perm], atol=1e-12)


class TestPartIdentity:
    def test_stage2_zero_table_is_identity(self):
        rng = np.random.default_rng(7)
        seq = make_seq(rng, [3, 2], 8)
        table = PartEmbeddingTable(4, 8, table=np.zeros((4, 8)))
        out = attach_part_identity(seq, table, stage=2)
        np.testing.assert_array_equal(out.tokens, seq.tokens)

    def test_stage1_concat_grows_dim(self):
        rng = np.random.default_rng(8)
        seq = make_seq(rng, [3], 8)
        table = PartEmbeddingTable(4, 4, rng)
        out = attach_part_identity(seq, table, stage=1)
        assert out.dim == 12

    def test_same_part_same_row(self):
        rng = np.random.default_rng(9)
        seq = make_seq(rng, [2], 8)
        table = PartEmbeddingTable(4, 8, rng)
        out = attach_part_identity(seq, table, stage=2)
        # both tokens shifted by the same table row (lookup by part id)
        np.testing.assert_array_equal(out.tokens,
                                      seq.tokens + table.table.data[seq.part_ids])

    def test_index_out_of_table(self):
        rng = np.random.default_rng(10)
        seq = make_seq(rng, [1, 1, 1], 8)
        table = PartEmbeddingTable(2, 8, rng)
        with pytest.raises(ValueError, match="table size"):
            attach_part_identity(seq, table, stage=2)


class TestMaskEmbedding:
    def test_constant_zero_mask(self):
        table = PartEmbeddingTable(4, 6, np.random.default_rng(0))
        out = build_mask_embedding_map(np.zeros((4, 4), dtype=int), table, (4, 4))
        np.testing.assert_allclose(out, np.broadcast_to(table.table.data[0], (4, 4, 6)))

    def test_halves_no_downsample(self):
        table = PartEmbeddingTable(4, 6, np.random.default_rng(1))
        mask = np.zeros((2, 4), dtype=int)
        mask[:, 2:] = 1
        out = build_mask_embedding_map(mask, table, (2, 4))
        np.testing.assert_allclose(out[:, :2], np.broadcast_to(table.table.data[0], (2, 2, 6)))
        np.testing.assert_allclose(out[:, 2:], np.broadcast_to(table.table.data[1], (2, 2, 6)))

    def test_average_pool_arithmetic(self):
        # Oracle: (E[0] + E[0] + E[1] + E[1]) / 4 averaged by hand.
        table = PartEmbeddingTable(4, 6, np.random.default_rng(2))
        mask = np.array([[0, 0], [1, 1]])
        out = build_mask_embedding_map(mask, table, (1, 1))
        expected = (table.table.data[0] + table.table.data[1]) / 2.0
        np.testing.assert_allclose(out[0, 0], expected, atol=1e-15)

    def test_mask_value_out_of_range(self):
        table = PartEmbeddingTable(2, 6, np.random.default_rng(3))
        with pytest.raises(ValueError, match="outside"):
            build_mask_embedding_map(np.full((2, 2), 5), table, (2, 2))


def tiny_cfg(**kw):
    base = dict(depth=2, width=16, heads=2, token_dim=6, cond_dim=8, part_embed_dim=4,
                max_parts=4, stage=2, posenc_dim=12, grid_resolution=8, cond_shape=(2, 2))
    base.update(kw)
    return DenoiserConfig(**base)


def tiny_cond(rng, cfg):
    feats = rng.normal(size=(*cfg.cond_shape, cfg.cond_dim))
    mask = rng.integers(0, 2, size=(4, 4))
    return CondInput(feats, mask)


class TestDenoiser:
    def test_shape_contract(self):
        rng = np.random.default_rng(11)
        cfg = tiny_cfg()
        model = Denoiser(cfg, seed=0)
        seq = make_seq(rng, [4, 3], cfg.token_dim)
        v, feats = model.forward(seq, 0.3, tiny_cond(rng, cfg))
        assert v.tokens.shape == seq.tokens.shape
        np.testing.assert_array_equal(v.coords, seq.coords)
        assert feats[0].shape == (4, cfg.width)
        assert feats[1].shape == (3, cfg.width)

    def test_zero_weights_zero_velocity(self):
        rng = np.random.default_rng(12)
        cfg = tiny_cfg()
        model = Denoiser(cfg, seed=0)
        model.zero_all()
        seq = make_seq(rng, [4, 3], cfg.token_dim)
        v, _ = model.forward(seq, 0.7, tiny_cond(rng, cfg))
        np.testing.assert_array_equal(v.tokens, np.zeros_like(seq.tokens))

    def test_part_only_schedule_isolates(self):
        rng = np.random.default_rng(13)
        cfg = tiny_cfg()
        model = Denoiser(cfg, seed=1)
        model.params["out_proj.w"].data = rng.normal(size=(cfg.width, cfg.token_dim))
        seq = make_seq(rng, [4, 3], cfg.token_dim)
        cond = tiny_cond(rng, cfg)
        schedule = [PART] * cfg.depth
        v1, f1 = model.forward(seq, 0.5, cond, schedule=schedule)
        bumped = seq.tokens.copy()
        bumped[4:] += 5.0
        v2, f2 = model.forward(seq.with_tokens(bumped), 0.5, cond, schedule=schedule)
        np.testing.assert_array_equal(v1.tokens[:4], v2.tokens[:4])
        np.testing.assert_array_equal(f1[0], f2[0])

    def test_global_layer_leaks_cross_part(self):
        rng = np.random.default_rng(14)
        cfg = tiny_cfg()
        model = Denoiser(cfg, seed=1)
        model.params["out_proj.w"].data = rng.normal(size=(cfg.width, cfg.token_dim))
        seq = make_seq(rng, [4, 3], cfg.token_dim)
        cond = tiny_cond(rng, cfg)
        v1, _ = model.forward(seq, 0.5, cond)
        bumped = seq.tokens.copy()
        bumped[4:] += 5.0
        v2, _ = model.forward(seq.with_tokens(bumped), 0.5, cond)
        assert not np.array_equal(v1.tokens[:4], v2.tokens[:4])

    def test_single_part_interleaved_equals_all_global(self):
        rng = np.random.default_rng(15)
        cfg = tiny_cfg()
        model = Denoiser(cfg, seed=2)
        seq = make_seq(rng, [6], cfg.token_dim)
        cond = tiny_cond(rng, cfg)
        v1, _ = model.forward(seq, 0.2, cond)
        v2, _ = model.forward(seq, 0.2, cond, schedule=[GLOBAL] * cfg.depth)
        np.testing.assert_array_equal(v1.tokens, v2.tokens)

    def test_uncond_branch_runs(self):
        rng = np.random.default_rng(16)
        cfg = tiny_cfg()
        model = Denoiser(cfg, seed=3)
        seq = make_seq(rng, [4], cfg.token_dim)
        v, _ = model.forward(seq, 0.5, None)
        assert np.all(np.isfinite(v.tokens))

    def test_checkpoint_roundtrip(self, tmp_path):
        rng = np.random.default_rng(17)
        cfg = tiny_cfg()
        model = Denoiser(cfg, seed=4)
        path = str(tmp_path / "ckpt.npz")
        save_params(path, model.state_dict())
        clone = Denoiser(cfg, seed=99)
        clone.load_state(load_params(path))
        seq = make_seq(rng, [3, 2], cfg.token_dim)
        cond = tiny_cond(rng, cfg)
        v1, _ = model.forward(seq, 0.4, cond)
        v2, _ = clone.forward(seq, 0.4, cond)
        np.testing.assert_array_equal(v1.tokens, v2.tokens)


class TestGradcheck:
    def test_linear_quadratic_loss(self):
        rng = np.random.default_rng(20)
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        x = rng.normal(size=(5, 4))
        y = rng.normal(size=(5, 3))

        def loss():
            pred = Tensor(x) @ w + b
            diff = pred - Tensor(y)
            return (diff * diff).sum()

        report = finite_diff_gradcheck(loss, {"w": w, "b": b}, eps=1e-5)
        assert report.max_rel_err < 1e-7

    def test_attention_block(self):
        rng = np.random.default_rng(21)
        params = AttentionParams(8, 2, rng)
        x = rng.normal(size=(5, 8))
        target = rng.normal(size=(5, 8))

        def loss():
            xt = Tensor(x)
            h = xt + params.self_attention(params.ln_attn(xt))
            diff = h - Tensor(target)
            return (diff * diff).sum()

        keys = [k for k in params.params if "ffn" not in k and "ln_ffn" not in k]
        report = finite_diff_gradcheck(loss, {k: params.params[k] for k in keys}, eps=1e-5)
        assert report.max_rel_err < 1e-4

    def test_ffn_block(self):
        rng = np.random.default_rng(22)
        params = AttentionParams(8, 2, rng)
        x = rng.normal(size=(5, 8))

        def loss():
            h = params.ffn(params.ln_ffn(Tensor(x)))
            return (h * h).sum()

        keys = [k for k in params.params if "ffn" in k]
        report = finite_diff_gradcheck(loss, {k: params.params[k] for k in keys}, eps=1e-5)
        assert report.max_rel_err < 1e-4

    def test_full_denoiser(self):
        rng = np.random.default_rng(23)
        cfg = tiny_cfg()
        model = Denoiser(cfg, seed=5)
        seq = make_seq(rng, [3, 3], cfg.token_dim)
        cond = tiny_cond(rng, cfg)
        target = rng.normal(size=seq.tokens.shape)

        def loss():
            v, _ = model.forward_tensors(Tensor(seq.tokens), seq.coords, seq.part_ids, 0.37, cond)
            diff = v - Tensor(target)
            return (diff * diff).sum()

        report = finite_diff_gradcheck(loss, model.params, eps=1e-5, max_entries_per_param=40)
        assert report.max_rel_err < 1e-3
