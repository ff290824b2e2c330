import math

import numpy as np
import pytest
import torch

from freqphys.crl import CrlLayer, CrossAttention, layer_norm
from freqphys.pfd import pbf_mask, pfd_forward
from freqphys.training import grad_check


def randomize(module, rng, scale=0.5):
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.tensor(rng.normal(scale=scale, size=tuple(p.shape))))
    return module


def ln_oracle(row, gain, bias, eps=1e-5):
    mu = sum(row) / len(row)
    var = sum((r - mu) ** 2 for r in row) / len(row)
    return [(r - mu) / math.sqrt(var + eps) * g + b for r, g, b in zip(row, gain, bias)]


def attention_oracle(a, b, P, heads):
    """Explicit loops over rows, heads and features for one (S, D) pair."""
    S, D = a.shape
    dh = D // heads
    mat = lambda x, w: [[sum(x[s][i] * w[i][j] for i in range(D)) for j in range(len(w[0]))] for s in range(S)]
    wq, wk, wv = (P[n].tolist() for n in ("wq", "wk", "wv"))
    q, k, v = mat(a.tolist(), wq), mat(a.tolist(), wk), mat(b.tolist(), wv)
    att = [[0.0] * D for _ in range(S)]
    for h in range(heads):
        cols = range(h * dh, (h + 1) * dh)
        for s in range(S):
            scores = [sum(q[s][c] * k[r][c] for c in cols) / math.sqrt(D) for r in range(S)]
            mx = max(scores)
            ex = [math.exp(x - mx) for x in scores]
            tot = sum(ex)
            for c in cols:
                att[s][c] = sum(ex[r] / tot * v[r][c] for r in range(S))
    z1 = [ln_oracle([att[s][j] + b[s][j] for j in range(D)], P["norm1_gain"], P["norm1_bias"]) for s in range(S)]
    w1, b1, w2, b2 = P["ffn_w1"].tolist(), P["ffn_b1"], P["ffn_w2"].tolist(), P["ffn_b2"]
    out = []
    for s in range(S):
        hid = [max(0.0, sum(z1[s][i] * w1[i][j] for i in range(D)) + b1[j]) for j in range(len(b1))]
        ff = [sum(hid[i] * w2[i][j] for i in range(len(hid))) + b2[j] for j in range(D)]
        out.append(ln_oracle([z1[s][j] + ff[j] for j in range(D)], P["norm2_gain"], P["norm2_bias"]))
    return np.array(out)


def params_np(m):
    return {n: p.detach().numpy() for n, p in m.named_parameters()}


class TestCrossAttention:
    def test_single_key_attends_fully(self, rng):
        m = randomize(CrossAttention(4, heads=2), rng)
        a, b = torch.tensor(rng.normal(size=(1, 4))), torch.tensor(rng.normal(size=(1, 4)))
        w = m.attention_weights(a)
        assert torch.all(w == 1.0)
        np.testing.assert_allclose(m.attend(a, b).detach().numpy(), (b @ m.wv).detach().numpy(), atol=1e-15)

    def test_identical_queries_give_identical_rows(self, rng):
        m = randomize(CrossAttention(4, heads=2), rng)
        a = torch.tensor(np.tile(rng.normal(size=(1, 4)), (5, 1)))
        b = torch.tensor(rng.normal(size=(5, 4)))
        att = m.attend(a, b).detach().numpy()
        np.testing.assert_allclose(att, np.tile(att[:1], (5, 1)), atol=1e-14)

    @pytest.mark.parametrize("S,D,heads", [(2, 2, 1), (3, 4, 2), (4, 8, 4)])
    def test_matches_scalar_oracle(self, rng, S, D, heads):
        m = randomize(CrossAttention(D, heads=heads), rng)
        a, b = rng.normal(size=(S, D)), rng.normal(size=(S, D))
        out = m(torch.tensor(a), torch.tensor(b)).detach().numpy()
        np.testing.assert_allclose(out, attention_oracle(a, b, params_np(m), heads), atol=1e-10)

    def test_shape_mismatch(self):
        m = CrossAttention(4, heads=2)
        with pytest.raises(ValueError):
            m(torch.zeros(3, 4), torch.zeros(2, 4))

    def test_layer_norm_of_zero_is_bias(self):
        bias = torch.tensor([0.1, -0.2, 0.3])
        out = layer_norm(torch.zeros(2, 3), torch.ones(3), bias)
        assert torch.equal(out, bias.expand(2, 3))


class TestCrlLayer:
    def make(self, T=4, N=2, D=4, heads=2, fs=4.0, seed=0):
        return CrlLayer(D, pbf_mask(T, fs), heads=heads, generator=torch.Generator().manual_seed(seed))

    def test_zero_input_zero_output(self):
        layer = self.make(T=16, N=3, D=8, fs=8.0)
        out = layer(torch.zeros(16, 3, 8))
        assert torch.all(out == 0)

    def test_shape_preserved_batched(self, rng):
        layer = self.make(T=16, D=8, heads=4, fs=8.0)
        z = torch.tensor(rng.normal(size=(2, 16, 3, 8)))
        assert layer(z).shape == z.shape

    def test_single_roi_space_stage_is_value_path(self, rng):
        layer = randomize(self.make(T=8, D=4, fs=4.0), rng)
        z = torch.tensor(rng.normal(size=(8, 1, 4)))
        zp = layer.pfd(z, dim=-3)
        sa = layer.space_attn
        expected = layer_norm(z @ sa.wv + z, sa.norm1_gain, sa.norm1_bias)
        np.testing.assert_allclose(
            layer_norm(sa.attend(zp, z) + z, sa.norm1_gain, sa.norm1_bias).detach().numpy(),
            expected.detach().numpy(), atol=1e-14)

    def test_matches_composed_oracle(self, rng):
        T, N, D, heads, fs = 4, 2, 2, 1, 4.0
        layer = self.make(T, N, D, heads, fs)
        randomize(layer.space_attn, rng)
        randomize(layer.time_attn, rng)
        z = rng.normal(size=(T, N, D))
        out = layer(torch.tensor(z)).detach().numpy()
        zp = pfd_forward(z, layer.pfd.band, layer.pfd.psm, layer.pfd.ass).detach().numpy()
        sp, tp = params_np(layer.space_attn), params_np(layer.time_attn)
        zs = np.stack([attention_oracle(zp[t], z[t], sp, heads) for t in range(T)])
        zt = np.stack([attention_oracle(zp[:, n], zs[:, n], tp, heads) for n in range(N)], axis=1)
        np.testing.assert_allclose(out, zt, atol=1e-9)

    def test_roi_permutation_equivariance(self, rng):
        layer = randomize(self.make(T=16, N=4, D=8, heads=4, fs=8.0), rng, scale=0.3)
        z = torch.tensor(rng.normal(size=(16, 4, 8)))
        perm = torch.tensor([2, 0, 3, 1])
        zp = layer.pfd(z, dim=-3)
        stage = layer.space_attn(zp, z)
        stage_perm = layer.space_attn(layer.pfd(z[:, perm], dim=-3), z[:, perm])
        np.testing.assert_allclose(stage_perm.detach().numpy(), stage[:, perm].detach().numpy(), atol=1e-12)
        np.testing.assert_allclose(layer(z[:, perm]).detach().numpy(), layer(z)[:, perm].detach().numpy(),
                                   atol=1e-12)

    def test_deterministic(self, rng):
        layer = self.make(T=16, N=2, D=8, heads=4, fs=8.0)
        z = torch.tensor(rng.normal(size=(16, 2, 8)))
        assert torch.equal(layer(z), layer(z))

    def test_attention_gradients(self, rng):
        T, N, D = 4, 2, 4
        layer = randomize(self.make(T, N, D, heads=2, fs=4.0), rng, scale=0.5)
        z = torch.tensor(rng.normal(size=(T, N, D)))
        w = torch.tensor(rng.normal(size=(T, N, D)))
        params = {n: p for n, p in layer.named_parameters() if "attn" in n}
        res = grad_check(lambda: (layer(z) * w).sum(), params, module=layer)
        assert res.passed(1e-4), res.per_tensor
