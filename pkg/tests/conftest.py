import numpy as np
import pytest
import torch

from mlrpl.decoupling import SemanticDecoupling
from mlrpl.encoders import SyntheticTextEncoder
from mlrpl.prompts import PromptBank

# tiny double-precision instance used by the gradient and pipeline-oracle suites
TINY = dict(C=3, N_CH=5, W=2, H=2, D=4, M=2, D_J=6, D_T=8, TAU=0.5)


class TinySetup:
    """Decoupling head + text encoder + prompts on a hand-sized problem."""

    def __init__(self, seed=0):
        t = TINY
        self.decoupling = SemanticDecoupling(
            t["N_CH"], t["D"], joint_dim=t["D_J"], text_dim=t["D_T"], seed=seed
        ).double()
        self.text_encoder = SyntheticTextEncoder(dim=t["D_T"], seed=seed + 1).double()
        self.prompts = PromptBank(
            [f"tiny{i}" for i in range(t["C"])], t["M"], t["D_T"], self.text_encoder,
            seed=seed + 2,
        ).double()
        gen = torch.Generator().manual_seed(seed + 3)
        self.fmap = torch.randn(t["N_CH"], t["H"], t["W"], generator=gen, dtype=torch.double)
        self.semantics = torch.randn(t["C"], t["D"], generator=gen, dtype=torch.double)
        self.labels = torch.tensor([[1, -1, 1]])
        self.temperature = t["TAU"]


@pytest.fixture
def tiny():
    return TinySetup()


def max_relative_gradient_error(loss_fn, params, step=1e-5):
    """Central finite differences against autograd; returns the worst relative error."""
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.view(-1)
        gflat = g.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            fd = (up - down) / (2 * step)
            a = gflat[i].item()
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    return worst


def pipeline_oracle(fmap, semantics, decoupling, prompts, text_encoder, temperature):
    """Scalar-loop numpy reimplementation of the full forward pass.

    Kept deliberately independent of the torch path: explicit loops over
    categories, positions and vector components.
    """
    f = fmap.detach().numpy()  # (N_ch, H, W)
    x = semantics.detach().numpy()  # (C, D)
    U = decoupling.U.detach().numpy()
    V = decoupling.V.detach().numpy()
    P = decoupling.P.detach().numpy()
    b = decoupling.b.detach().numpy()
    att_w = decoupling.att.weight.detach().numpy()[0]
    att_b = decoupling.att.bias.detach().numpy()[0]
    proj_w = decoupling.proj.weight.detach().numpy()
    proj_b = decoupling.proj.bias.detach().numpy()
    n_ch, h, w = f.shape
    c_num = x.shape[0]

    logits = np.zeros((c_num, h, w))
    fused_all = np.zeros((c_num, h, w, P.shape[1]))
    for c in range(c_num):
        for i in range(h):
            for j in range(w):
                u = np.array([sum(U[k, a] * f[k, i, j] for k in range(n_ch))
                              for a in range(U.shape[1])])
                v = np.array([sum(V[k, a] * x[c, k] for k in range(x.shape[1]))
                              for a in range(V.shape[1])])
                joint = np.tanh(u * v)
                fused = np.array([sum(P[k, a] * joint[k] for k in range(P.shape[0]))
                                  for a in range(P.shape[1])]) + b
                fused_all[c, i, j] = fused
                logits[c, i, j] = sum(att_w[k] * fused[k] for k in range(len(fused))) + att_b

    attention = np.zeros_like(logits)
    for c in range(c_num):
        e = np.exp(logits[c] - logits[c].max())
        attention[c] = e / e.sum()

    vfeats = np.zeros((c_num, proj_w.shape[0]))
    for c in range(c_num):
        pooled = np.zeros(n_ch)
        for i in range(h):
            for j in range(w):
                for k in range(n_ch):
                    pooled[k] += attention[c, i, j] * f[k, i, j]
        for a in range(proj_w.shape[0]):
            vfeats[c, a] = sum(proj_w[a, k] * pooled[k] for k in range(n_ch)) + proj_b[a]

    tokens = prompts.tokens.detach().numpy()
    cls = prompts.cls_embeddings.detach().numpy()
    enc_w = text_encoder.weight.detach().numpy()
    enc_b = text_encoder.bias.detach().numpy()
    tfeats = np.zeros((c_num, enc_w.shape[0]))
    for c in range(c_num):
        seq = np.concatenate([tokens[c], cls[c : c + 1]])
        pooled = seq.mean(axis=0)
        for a in range(enc_w.shape[0]):
            tfeats[c, a] = np.tanh(sum(enc_w[a, k] * pooled[k] for k in range(len(pooled)))
                                   + enc_b[a])

    sims = np.zeros(c_num)
    for c in range(c_num):
        dot = sum(vfeats[c, k] * tfeats[c, k] for k in range(vfeats.shape[1]))
        nv = np.sqrt(sum(vv * vv for vv in vfeats[c]))
        nt = np.sqrt(sum(tt * tt for tt in tfeats[c]))
        sims[c] = dot / (nv * nt)
    e = np.exp(sims / temperature - (sims / temperature).max())
    scores = e / e.sum()
    return {"attention": attention, "vfeats": vfeats, "tfeats": tfeats, "scores": scores}
