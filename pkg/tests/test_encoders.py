import numpy as np
import pytest
import torch

from mlrpl.encoders import (
    PretrainedVisualEncoder,
    SyntheticTextEncoder,
    SyntheticVisualEncoder,
    WordEmbeddings,
    encoder_checksum,
)


class TestSyntheticVisualEncoder:
    def test_output_shape(self):
        enc = SyntheticVisualEncoder(input_size=56)
        fmap = enc.encode(torch.rand(2, 3, 56, 56))
        assert fmap.shape == (2, 64, 7, 7)

    def test_deterministic(self):
        enc = SyntheticVisualEncoder()
        img = torch.rand(1, 3, 56, 56)
        torch.testing.assert_close(enc.encode(img), enc.encode(img), rtol=0, atol=0)

    def test_rejects_wrong_size(self):
        enc = SyntheticVisualEncoder(input_size=56)
        with pytest.raises(ValueError, match="expected 56x56"):
            enc.encode(torch.rand(1, 3, 64, 64))

    def test_frozen(self):
        enc = SyntheticVisualEncoder()
        assert all(not p.requires_grad for p in enc.parameters())

    def test_same_seed_same_weights(self):
        a = encoder_checksum(SyntheticVisualEncoder(seed=3))
        b = encoder_checksum(SyntheticVisualEncoder(seed=3))
        assert a == b


class TestSyntheticTextEncoder:
    def test_output_dim(self):
        enc = SyntheticTextEncoder(dim=512)
        out = enc.encode(torch.randn(4, 17, 512))
        assert out.shape == (4, 512)

    def test_deterministic(self):
        enc = SyntheticTextEncoder(dim=32)
        tokens = torch.randn(3, 5, 32)
        torch.testing.assert_close(enc.encode(tokens), enc.encode(tokens), rtol=0, atol=0)

    def test_dimension_mismatch(self):
        enc = SyntheticTextEncoder(dim=32)
        with pytest.raises(ValueError, match="dimension"):
            enc.encode(torch.randn(3, 5, 16))

    def test_sensitivity_to_tokens(self):
        # non-degenerate Jacobian: perturbing one token changes the embedding
        enc = SyntheticTextEncoder(dim=16).double()
        tokens = torch.randn(3, 16, dtype=torch.double)
        base = enc.encode(tokens)
        bumped = tokens.clone()
        bumped[1, 4] += 1e-3
        delta = (enc.encode(bumped) - base).abs().max().item()
        assert delta > 0

    def test_gradient_flows_to_tokens(self):
        enc = SyntheticTextEncoder(dim=16)
        tokens = torch.randn(3, 16, requires_grad=True)
        enc.encode(tokens).sum().backward()
        assert tokens.grad is not None and tokens.grad.abs().sum() > 0

    def test_token_embedding_nonzero_and_deterministic(self):
        enc = SyntheticTextEncoder(dim=16)
        a = enc.token_embedding("horse")
        b = enc.token_embedding("horse")
        torch.testing.assert_close(a, b, rtol=0, atol=0)
        assert a.norm() > 0

    def test_multiword_uses_first_token(self):
        enc = SyntheticTextEncoder(dim=16)
        torch.testing.assert_close(
            enc.token_embedding("traffic light"), enc.token_embedding("traffic"),
            rtol=0, atol=0,
        )


class TestWordEmbeddings:
    def test_reads_standard_format(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("traffic 1.0 2.0 3.0\nlight 3.0 4.0 5.0\n")
        emb = WordEmbeddings(path)
        np.testing.assert_allclose(emb.get("traffic"), [1.0, 2.0, 3.0])

    def test_multiword_mean(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("traffic 1.0 2.0 3.0\nlight 3.0 4.0 5.0\n")
        emb = WordEmbeddings(path)
        np.testing.assert_allclose(emb.get("traffic light"), [2.0, 3.0, 4.0])

    def test_oov_deterministic(self):
        emb = WordEmbeddings(dim=50)
        np.testing.assert_array_equal(emb.get("zzyzx"), emb.get("zzyzx"))

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            WordEmbeddings("/nonexistent/glove.txt")

    def test_default_dim(self):
        assert WordEmbeddings().get("anything").shape == (300,)


class TestPretrainedVisualEncoder:
    def test_missing_weights_error(self, monkeypatch):
        monkeypatch.delenv("MLRPL_WEIGHTS", raising=False)
        with pytest.raises(FileNotFoundError, match="weights unavailable"):
            PretrainedVisualEncoder()

    @pytest.mark.slow
    def test_feature_grid_at_448(self, tmp_path):
        # stride-32 backbone + extra 2x2/s2 pooling: 448 -> 14 -> 7
        from torchvision.models import resnet101

        weights = tmp_path / "rn101.pt"
        torch.save(resnet101().state_dict(), weights)
        enc = PretrainedVisualEncoder(weights_path=weights)
        fmap = enc.encode(torch.rand(1, 3, 448, 448))
        assert fmap.shape == (1, 2048, 7, 7)
        with pytest.raises(ValueError, match="expected 448x448"):
            enc.encode(torch.rand(1, 3, 224, 224))
