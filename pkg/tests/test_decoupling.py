import math

import numpy as np
import pytest
import torch

from mlrpl.decoupling import SemanticDecoupling

from conftest import TINY, TinySetup


def make_head(n_ch=5, d=4, d_j=6, d_t=8, seed=0):
    return SemanticDecoupling(n_ch, d, joint_dim=d_j, text_dim=d_t, seed=seed).double()


class TestFuseBilinear:
    def test_zero_semantics_zero_bias_gives_zero(self):
        head = make_head()
        with torch.no_grad():
            head.b.zero_()
        f = torch.randn(1, 4, 5, dtype=torch.double)
        x = torch.zeros(2, 4, dtype=torch.double)
        out = head.fuse_bilinear(f, x)
        torch.testing.assert_close(out, torch.zeros_like(out), rtol=0, atol=0)

    def test_zero_features_give_bias(self):
        head = make_head()
        f = torch.zeros(1, 3, 5, dtype=torch.double)
        x = torch.randn(2, 4, dtype=torch.double)
        out = head.fuse_bilinear(f, x)
        expected = head.b.expand_as(out)
        torch.testing.assert_close(out, expected)

    def test_matches_scalar_oracle(self):
        head = make_head()
        gen = torch.Generator().manual_seed(42)
        f = torch.randn(3, 5, generator=gen, dtype=torch.double)  # 3 positions
        x = torch.randn(2, 4, generator=gen, dtype=torch.double)
        with torch.no_grad():
            out = head.fuse_bilinear(f, x).numpy()
        U, V, P, b = (t.detach().numpy() for t in (head.U, head.V, head.P, head.b))
        for c in range(2):
            for p in range(3):
                u = np.array([sum(U[k, a] * f[p, k].item() for k in range(5)) for a in range(6)])
                v = np.array([sum(V[k, a] * x[c, k].item() for k in range(4)) for a in range(6)])
                joint = np.tanh(u * v)
                ref = np.array([sum(P[k, a] * joint[k] for k in range(6)) for a in range(6)]) + b
                np.testing.assert_allclose(out[c, p], ref, atol=1e-10)


class TestAttentionLogits:
    def test_constant_map_with_zero_weights(self):
        head = make_head()
        with torch.no_grad():
            head.att.weight.zero_()
            head.att.bias.fill_(1.75)
        fused = torch.randn(3, 4, 6, dtype=torch.double)
        logits = head.attention_logits(fused)
        torch.testing.assert_close(logits, torch.full((3, 4), 1.75, dtype=torch.double))

    def test_single_position_shape(self):
        head = make_head()
        fused = torch.randn(3, 1, 6, dtype=torch.double)
        assert head.attention_logits(fused).shape == (3, 1)

    def test_matches_scalar_oracle(self):
        head = make_head()
        fused = torch.randn(2, 4, 6, dtype=torch.double)
        with torch.no_grad():
            logits = head.attention_logits(fused).numpy()
        w = head.att.weight.detach().numpy()[0]
        b = head.att.bias.item()
        for c in range(2):
            for p in range(4):
                ref = sum(w[k] * fused[c, p, k].item() for k in range(6)) + b
                assert abs(logits[c, p] - ref) < 1e-10


class TestNormalizeAttention:
    def test_uniform_logits(self):
        att = SemanticDecoupling.normalize_attention(torch.zeros(1, 4))
        torch.testing.assert_close(att, torch.full((1, 4), 0.25))

    def test_two_position_ratio(self):
        logits = torch.tensor([[0.0, math.log(3.0)]], dtype=torch.double)
        att = SemanticDecoupling.normalize_attention(logits)
        torch.testing.assert_close(att, torch.tensor([[0.25, 0.75]], dtype=torch.double))

    def test_extreme_logits_stable(self):
        att = SemanticDecoupling.normalize_attention(torch.tensor([[20.0, 0.0]], dtype=torch.double))
        assert abs(att[0, 0].item() - 1.0) < 1e-8
        assert abs(att[0, 1].item() - 2.061e-9) < 1e-11
        assert torch.isfinite(att).all()

    def test_sums_to_one_nonnegative(self):
        logits = torch.randn(8, 49, dtype=torch.double) * 30
        att = SemanticDecoupling.normalize_attention(logits)
        assert (att >= 0).all()
        torch.testing.assert_close(att.sum(dim=-1), torch.ones(8, dtype=torch.double))


class TestAttentionPool:
    def test_one_hot_selects_position(self):
        flat = torch.randn(4, 5, dtype=torch.double)  # 4 positions
        att = torch.zeros(2, 4, dtype=torch.double)
        att[:, 2] = 1.0
        pooled = SemanticDecoupling.attention_pool(flat, att)
        torch.testing.assert_close(pooled[0], flat[2])
        torch.testing.assert_close(pooled[1], flat[2])

    def test_uniform_gives_spatial_mean(self):
        flat = torch.randn(4, 5, dtype=torch.double)
        att = torch.full((1, 4), 0.25, dtype=torch.double)
        pooled = SemanticDecoupling.attention_pool(flat, att)
        torch.testing.assert_close(pooled[0], flat.mean(dim=0))

    def test_matches_double_loop(self):
        flat = torch.randn(6, 5, dtype=torch.double)
        logits = torch.randn(3, 6, dtype=torch.double)
        att = SemanticDecoupling.normalize_attention(logits)
        pooled = SemanticDecoupling.attention_pool(flat, att).numpy()
        for c in range(3):
            ref = np.zeros(5)
            for p in range(6):
                for k in range(5):
                    ref[k] += att[c, p].item() * flat[p, k].item()
            np.testing.assert_allclose(pooled[c], ref, atol=1e-10)


class TestDecouple:
    def test_category_independence(self, tiny):
        base = tiny.decoupling(tiny.fmap, tiny.semantics)
        bumped_sem = tiny.semantics.clone()
        bumped_sem[1] += 0.5
        bumped = tiny.decoupling(tiny.fmap, bumped_sem)
        torch.testing.assert_close(base[0], bumped[0], rtol=0, atol=0)
        torch.testing.assert_close(base[2], bumped[2], rtol=0, atol=0)
        assert not torch.equal(base[1], bumped[1])

    def test_single_category(self, tiny):
        full = tiny.decoupling(tiny.fmap, tiny.semantics)
        single = tiny.decoupling(tiny.fmap, tiny.semantics[:1])
        torch.testing.assert_close(single[0], full[0], rtol=1e-14, atol=1e-14)

    def test_duplicate_semantics_identical_outputs(self, tiny):
        sem = tiny.semantics.clone()
        sem[2] = sem[0]
        out = tiny.decoupling(tiny.fmap, sem)
        torch.testing.assert_close(out[0], out[2], rtol=0, atol=0)

    def test_semantic_jacobian_zero_across_categories(self, tiny):
        sem = tiny.semantics.clone().requires_grad_(True)
        out = tiny.decoupling(tiny.fmap, sem)
        grad = torch.autograd.grad(out[0].sum(), sem)[0]
        assert grad[1].abs().max() == 0
        assert grad[2].abs().max() == 0
        assert grad[0].abs().max() > 0

    def test_batched_matches_single(self, tiny):
        batch = tiny.fmap.unsqueeze(0).repeat(3, 1, 1, 1)
        out = tiny.decoupling(batch, tiny.semantics)
        single = tiny.decoupling(tiny.fmap, tiny.semantics)
        for i in range(3):
            torch.testing.assert_close(out[i], single, rtol=1e-14, atol=1e-14)

    def test_attention_shape(self, tiny):
        _, att = tiny.decoupling(tiny.fmap, tiny.semantics, return_attention=True)
        assert att.shape == (TINY["C"], TINY["H"], TINY["W"])

    def test_channel_mismatch_rejected(self, tiny):
        with pytest.raises(ValueError, match="channels"):
            tiny.decoupling(torch.randn(7, 2, 2, dtype=torch.double), tiny.semantics)
