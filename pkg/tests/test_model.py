import numpy as np
import pytest
import torch

from demux.model import (
    BaselineConfig,
    BaselineModel,
    DemuxModel,
    ModelConfig,
    ModelConfigError,
    MultiHeadSelfAttention,
    MultiScaleCNN,
    ResidualConvBlock,
    RightPadMaxPool,
    build_model,
    load_checkpoint,
    pooled_length,
    rope_rotate,
    save_checkpoint,
    sinusoidal_table,
    toy_config,
)

torch.manual_seed(0)


class TestRope:
    def test_position_zero_identity(self):
        x = torch.randn(1, 5, 8, dtype=torch.float64)
        out = rope_rotate(x, torch.zeros(5))
        assert torch.allclose(out, x)

    def test_norm_preserved(self):
        x = torch.randn(2, 7, 16, dtype=torch.float64)
        out = rope_rotate(x, torch.arange(7))
        assert torch.allclose(out.norm(dim=-1), x.norm(dim=-1))

    def test_explicit_2d_rotation(self):
        # d_h = 2: single subspace rotated by exactly angle m
        x = torch.tensor([[[1.0, 0.0]]], dtype=torch.float64)
        m = 0.7
        out = rope_rotate(x, torch.tensor([m], dtype=torch.float64))
        assert out[0, 0, 0].item() == pytest.approx(np.cos(m))
        assert out[0, 0, 1].item() == pytest.approx(np.sin(m))

    def run_invariance(self, dtype, tol, n_tuples):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(n_tuples):
            d_h = int(rng.choice([4, 8, 16]))
            q = torch.tensor(rng.standard_normal(d_h), dtype=dtype)
            k = torch.tensor(rng.standard_normal(d_h), dtype=dtype)
            m, n = rng.integers(0, 500, size=2)
            shift = int(rng.integers(0, 300))
            pos = torch.tensor([float(m), float(n)], dtype=dtype)
            pos_shift = pos + shift
            qk = rope_rotate(torch.stack([q, k])[None], pos)[0]
            qk2 = rope_rotate(torch.stack([q, k])[None], pos_shift)[0]
            scale = 1.0 / np.sqrt(d_h)
            a = float(qk[0] @ qk[1]) * scale
            b = float(qk2[0] @ qk2[1]) * scale
            worst = max(worst, abs(a - b))
        assert worst < tol, worst

    def test_relative_offset_invariance_f64(self):
        self.run_invariance(torch.float64, 1e-10, 200)

    def test_relative_offset_invariance_f32(self):
        self.run_invariance(torch.float32, 1e-5, 200)

    def test_odd_dim_rejected(self):
        with pytest.raises(ModelConfigError):
            rope_rotate(torch.randn(1, 2, 3), torch.arange(2))


def test_sinusoidal_table_values():
    t = sinusoidal_table(4, 6, dtype=torch.float64)
    assert t.shape == (4, 6)
    assert torch.allclose(t[0, 0::2], torch.zeros(3, dtype=torch.float64))
    assert torch.allclose(t[0, 1::2], torch.ones(3, dtype=torch.float64))
    assert t[2, 0].item() == pytest.approx(np.sin(2.0))


class TestAttention:
    def test_two_token_oracle(self):
        """Hand-computed softmax attention on a 2-token, 2-dim example."""
        attn = MultiHeadSelfAttention(dim=2, heads=1, rope=False)
        with torch.no_grad():
            for lin in (attn.w_q, attn.w_k, attn.w_v, attn.w_o):
                lin.weight.copy_(torch.eye(2))
                if lin.bias is not None:
                    lin.bias.zero_()
        x = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]])
        out = attn(x)
        # scores/sqrt(2): row 0 -> [1,0]/sqrt2; softmax weights
        s = 1.0 / np.sqrt(2.0)
        w = np.exp(s) / (np.exp(s) + 1.0)
        expect0 = np.array([w, 1.0 - w])
        assert out[0, 0].detach().numpy() == pytest.approx(expect0, abs=1e-6)
        assert out[0, 1].detach().numpy() == pytest.approx(expect0[::-1], abs=1e-6)

    def test_rope_attention_shift_invariant(self):
        attn = MultiHeadSelfAttention(dim=8, heads=2, rope=True).double()
        x = torch.randn(1, 6, 8, dtype=torch.float64)
        a = attn(x, torch.arange(6))
        b = attn(x, torch.arange(6) + 123)
        assert torch.allclose(a, b, atol=1e-10)


class TestConvPieces:
    def test_residual_block_identity_shortcut(self):
        blk = ResidualConvBlock(4, 4, 3)
        assert isinstance(blk.shortcut, torch.nn.Identity)
        blk2 = ResidualConvBlock(4, 8, 3)
        assert isinstance(blk2.shortcut, torch.nn.Conv1d)
        assert blk2.shortcut.kernel_size == (1,)

    def test_residual_block_oracle(self):
        """With conv weights zeroed, the block reduces to BN bias + shortcut."""
        blk = ResidualConvBlock(2, 2, 3).eval()
        with torch.no_grad():
            blk.conv.weight.zero_()
            blk.conv.bias.zero_()
        x = torch.randn(1, 2, 5)
        assert torch.allclose(blk(x), blk.bn(torch.zeros_like(x)) + x, atol=1e-6)

    def test_length_preserved(self):
        blk = ResidualConvBlock(3, 6, 7)
        assert blk(torch.randn(2, 3, 11)).shape == (2, 6, 11)

    def test_even_kernel_rejected(self):
        with pytest.raises(ModelConfigError):
            ResidualConvBlock(2, 2, 4)

    def test_rightpad_maxpool_lengths(self):
        pool = RightPadMaxPool(8, 4)
        for n in (1, 3, 4, 5, 8, 9, 100, 257):
            out = pool(torch.randn(1, 2, n))
            assert out.shape[-1] == -(-n // 4), n

    def test_rightpad_maxpool_oracle(self):
        pool = RightPadMaxPool(3, 2)
        x = torch.tensor([[[5.0, 1.0, 2.0, 4.0, 3.0]]])
        # windows over right-zero-padded [5,1,2,4,3,0]: max of [5,1,2],[2,4,3],[3,0,0]
        assert pool(x).squeeze().tolist() == [5.0, 4.0, 3.0]

    def test_pad_is_zero_not_neg_inf(self):
        pool = RightPadMaxPool(3, 2)
        x = torch.tensor([[[-5.0, -1.0, -2.0]]])
        # second window is [-2, 0, 0] -> 0 under zero padding
        assert pool(x).squeeze().tolist() == [-1.0, 0.0]


class TestBackbone:
    def test_shapes_and_pooled_length(self):
        cfg = toy_config(classes=3)
        net = MultiScaleCNN(cfg)
        for L in (1, 7, 64, 130):
            out = net(torch.randn(2, L, 8))
            assert out.shape == (2, pooled_length(L, cfg), cfg.fuse_out)

    def test_pooled_length_formula(self):
        cfg = toy_config(classes=2)  # 2 stages, stride 2
        assert pooled_length(64, cfg) == 16
        assert pooled_length(65, cfg) == 17
        assert pooled_length(1, cfg) == 1

    def test_full_scale_channel_counts(self):
        cfg = ModelConfig(classes=10)
        net = MultiScaleCNN(cfg)
        assert len(net.branches) == 3
        assert net.fuse.in_channels == 3 * 256
        assert net.fuse.out_channels == 256


class TestDemuxModel:
    def test_forward_shapes_and_range(self):
        cfg = toy_config(classes=5)
        m = build_model(cfg, seed=1).eval()
        y = m(torch.randn(3, 40, 8))
        assert y.shape == (3, 5)
        assert ((y > 0) & (y < 1)).all()

    def test_build_deterministic(self):
        cfg = toy_config(classes=4)
        a = build_model(cfg, seed=9)
        b = build_model(cfg, seed=9)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and torch.equal(pa, pb)

    def test_raw_input_variant(self):
        cfg = toy_config(classes=4, raw_input=True)
        m = build_model(cfg, seed=1).eval()
        x = torch.tensor(np.random.default_rng(0).choice([-1.0, 1.0], size=(2, 50, 1)), dtype=torch.float32)
        assert m(x).shape == (2, 4)

    def test_positional_variants(self):
        for kind in ("rope", "none", "sinusoidal", "learnable"):
            cfg = toy_config(classes=3, positional=kind)
            m = build_model(cfg, seed=1).eval()
            assert m(torch.randn(1, 30, 8)).shape == (1, 3)

    def test_aggregation_variants(self):
        for kind, kw in (("upproj_mean", {}), ("mean", {}), ("flatten", {"input_length": 32})):
            cfg = toy_config(classes=3, aggregation=kind, **kw)
            m = build_model(cfg, seed=1).eval()
            assert m(torch.randn(1, 32, 8)).shape == (1, 3)

    def test_no_transformer_variant(self):
        cfg = toy_config(classes=3, stage1_layers=0, stage2_layers=0)
        m = build_model(cfg, seed=1).eval()
        assert len(m.stage1) == 0 and len(m.stage2) == 0
        assert m(torch.randn(1, 30, 8)).shape == (1, 3)

    def test_config_validation(self):
        with pytest.raises(ModelConfigError):
            toy_config(classes=0)
        with pytest.raises(ModelConfigError):
            toy_config(classes=2, branch_kernels=(4,))
        with pytest.raises(ModelConfigError):
            toy_config(classes=2, fuse_out=50, stage1_heads=4)  # not divisible
        with pytest.raises(ModelConfigError):
            toy_config(classes=2, positional="bogus")
        with pytest.raises(ModelConfigError):
            toy_config(classes=2, aggregation="flatten")  # missing input_length


class TestPermutation:
    def test_rope_stage_is_order_sensitive(self):
        cfg = toy_config(classes=3, branch_kernels=(1,), positional="rope")
        m = build_model(cfg, seed=3).eval()
        x = torch.randn(1, 24, 8)
        perm = torch.randperm(24, generator=torch.Generator().manual_seed(1))
        a = m(x)
        b = m(x[:, perm, :])
        assert not torch.allclose(a, b, atol=1e-5)

    def test_no_transformer_mean_pool_is_order_insensitive_in_positions(self):
        # width-1 convs + no encoder + mean pooling: permuting rows permutes
        # the sequence axis only, so the pooled logits are unchanged as long
        # as pooling windows are too (use stride-1 pool of width 1)
        cfg = toy_config(
            classes=3,
            branch_kernels=(1,),
            stage1_layers=0,
            stage2_layers=0,
            pool_kernel=1,
            pool_stride=1,
            aggregation="mean",
        )
        m = build_model(cfg, seed=3).eval()
        x = torch.randn(1, 24, 8)
        perm = torch.randperm(24, generator=torch.Generator().manual_seed(1))
        assert torch.allclose(m(x), m(x[:, perm, :]), atol=1e-5)


class TestBaseline:
    def test_forward(self):
        m = BaselineModel(BaselineConfig(classes=4, input_channels=1)).eval()
        assert m(torch.randn(2, 64, 1)).shape == (2, 4)

    def test_channel_mismatch(self):
        m = BaselineModel(BaselineConfig(classes=4, input_channels=8))
        with pytest.raises(ModelConfigError):
            m(torch.randn(1, 10, 1))


class TestCheckpoint:
    def roundtrip(self, model, x, tmp_path):
        path = tmp_path / "m.dmxc"
        save_checkpoint(model, path, extra={"note": "t"})
        back, extra = load_checkpoint(path)
        assert extra == {"note": "t"}
        model.eval()
        assert torch.allclose(model(x), back(x), atol=0)
        return path

    def test_demux_roundtrip(self, tmp_path):
        cfg = toy_config(classes=3)
        m = build_model(cfg, seed=2).eval()
        path = self.roundtrip(m, torch.randn(1, 25, 8), tmp_path)
        assert path.read_bytes()[:4] == b"DMXC"

    def test_baseline_roundtrip(self, tmp_path):
        m = BaselineModel(BaselineConfig(classes=2, input_channels=1)).eval()
        self.roundtrip(m, torch.randn(1, 30, 1), tmp_path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dmxc"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(ModelConfigError):
            load_checkpoint(path)
