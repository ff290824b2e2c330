import numpy as np
import pytest
import torch

from freqphys.errors import ConfigError, FormatError
from freqphys.model import (
    Denoiser,
    ModelConfig,
    count_parameters,
    expected_parameter_count,
    init_params,
    load_checkpoint,
    save_checkpoint,
    timestep_table,
)
from freqphys.training import grad_check, loss, make_optimizer

SMALL = ModelConfig(T=16, N=2, C=2, D=8, L=1, K=10, heads=4, sample_rate=8.0)


def inputs(cfg, rng, batch=None):
    lead = () if batch is None else (batch,)
    x = rng.uniform(-10, 10, size=lead + (cfg.T, cfg.N, cfg.C))
    cp = rng.uniform(-10, 10, size=lead + (cfg.T, cfg.N, cfg.C))
    y = rng.normal(size=lead + (cfg.T,))
    return torch.from_numpy(y), torch.from_numpy(x), torch.from_numpy(cp)


def enumerate_count(C, D, L, heads=4):
    # independent tally from the field list
    n = (C * D + D) * 2  # embed_x, embed_cp
    n += D + D  # embed_y
    n += D * D  # time projection
    per_layer = 2 * D * D + 2 * D + 1  # PSM weights, biases, tau
    for _ in range(2):  # space and time attention
        per_layer += 3 * D * D  # Q, K, V
        per_layer += D * 2 * D + 2 * D + 2 * D * D + D  # FFN
        per_layer += 4 * D  # two layer norms
    return n + L * per_layer + D + 1


class TestInit:
    def test_same_seed_bit_identical(self):
        a, b = init_params(ModelConfig(seed=3)), init_params(ModelConfig(seed=3))
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and torch.equal(pa, pb)

    def test_different_seed_differs(self):
        a, b = init_params(ModelConfig(seed=0)), init_params(ModelConfig(seed=1))
        assert any(not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))

    def test_parameter_count(self):
        m = init_params(ModelConfig(C=3, D=16, L=2, heads=4))
        assert count_parameters(m) == enumerate_count(3, 16, 2) == expected_parameter_count(3, 16, 2)

    def test_biases_zero_and_weight_scale(self):
        m = init_params(ModelConfig(D=32, seed=5))
        for name, p in m.named_parameters():
            if name.endswith(("_b", "bias", "b_re", "b_im", "ffn_b1", "ffn_b2")) or name.endswith("tau"):
                assert torch.all(p == 0), name
        w = m.embed_x_w.detach().numpy()
        ffn = m.layers[0].space_attn.ffn_w1.detach().numpy()
        assert np.std(np.concatenate([w.ravel(), ffn.ravel()])) == pytest.approx(0.02, rel=0.15)

    @pytest.mark.parametrize("kw", [dict(T=4), dict(N=0), dict(D=10, heads=4), dict(T=8, sample_rate=1.0),
                                    dict(beta_start=0.5, beta_end=0.1)])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            Denoiser(ModelConfig(**kw))


class TestForward:
    def test_output_shape_and_normalisation(self, rng):
        m = Denoiser(SMALL)
        y, x, cp = inputs(SMALL, rng)
        out = m(y, x, cp, 5)
        assert out.shape == (SMALL.T,)
        assert abs(out.mean().item()) < 1e-9
        assert abs(out.var(unbiased=False).item() - 1) < 1e-9

    def test_batched_matches_unbatched(self, rng):
        m = Denoiser(SMALL)
        y, x, cp = inputs(SMALL, rng, batch=3)
        k = torch.tensor([1, 4, 10])
        out = m(y, x, cp, k)
        for i in range(3):
            torch.testing.assert_close(out[i], m(y[i], x[i], cp[i], int(k[i])), rtol=1e-12, atol=1e-12)

    def test_deterministic(self, rng):
        m = Denoiser(SMALL)
        y, x, cp = inputs(SMALL, rng)
        assert torch.equal(m(y, x, cp, 3), m(y, x, cp, 3))

    def test_bounded_inputs_finite(self):
        cfg = ModelConfig(seed=2)
        m = Denoiser(cfg)
        for s in range(5):
            y, x, cp = inputs(cfg, np.random.default_rng(s), batch=2)
            assert torch.isfinite(m(10 * torch.tanh(y), x, cp, [1, cfg.K])).all()

    def test_condition_is_live(self, rng):
        m = Denoiser(SMALL)
        y, x, cp = inputs(SMALL, rng)
        delta = (m(y, x, cp, 4) - m(y, x, torch.zeros_like(cp), 4)).abs().max().item()
        assert delta > 0

    def test_timestep_changes_output(self, rng):
        m = Denoiser(SMALL)
        y, x, cp = inputs(SMALL, rng)
        assert not torch.equal(m(y, x, cp, 1), m(y, x, cp, 9))

    def test_roi_permutation_invariance(self, rng):
        m = Denoiser(SMALL)
        y, x, cp = inputs(SMALL, rng)
        perm = [1, 0]
        torch.testing.assert_close(m(y, x, cp, 2), m(y, x[:, perm], cp[:, perm], 2), rtol=1e-10, atol=1e-10)

    @pytest.mark.parametrize("k", [0, 11])
    def test_step_out_of_range(self, rng, k):
        with pytest.raises(ValueError):
            Denoiser(SMALL)(*inputs(SMALL, rng), k)

    def test_shape_mismatch(self, rng):
        y, x, cp = inputs(SMALL, rng)
        with pytest.raises(ValueError):
            Denoiser(SMALL)(y[:-1], x, cp, 1)
        with pytest.raises(ValueError):
            Denoiser(SMALL)(y, x, cp[:, :1], 1)

    def test_timestep_table(self):
        t = timestep_table(10, 8)
        assert t.shape == (11, 8)
        assert torch.equal(t[0], torch.tensor([0.0] * 4 + [1.0] * 4, dtype=torch.float64))


class TestGradient:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_every_parameter_group(self, seed):
        rng = np.random.default_rng(seed)
        # wide random weights so every path (PSM, attention scores) carries gradient
        m = Denoiser(ModelConfig(**{**SMALL.__dict__, "seed": seed}), init_std=0.5)
        y0 = torch.from_numpy(rng.normal(size=SMALL.T))
        y0 = (y0 - y0.mean()) / y0.std(unbiased=False)
        x, cp = torch.from_numpy(rng.normal(size=(2, SMALL.T, SMALL.N, SMALL.C)))
        y_k = torch.from_numpy(rng.normal(size=SMALL.T))
        # raise the thresholds so selection is partial
        with torch.no_grad():
            for s in m.selections():
                s.tau.fill_(1.0)

        def f():
            return loss(m(y_k, x, cp, 3), y0)

        res = grad_check(f, dict(m.named_parameters()), step=1e-5, coords=64, rng=np.random.default_rng(0), module=m)
        assert res.passed(1e-4), res.per_tensor
        assert set(res.per_tensor) == {n for n, _ in m.named_parameters()}
        assert 0 < m.selections()[0].last_pass_fraction < 1


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        m = Denoiser(ModelConfig(seed=4))
        with torch.no_grad():
            for p in m.parameters():
                p.add_(torch.from_numpy(rng.normal(size=tuple(p.shape))))
        path = tmp_path / "m.fqpm"
        save_checkpoint(path, m, step=17)
        m2, opt, step = load_checkpoint(path)
        assert step == 17 and opt is None and m2.config == m.config
        for (n, a), (_, b) in zip(m.named_parameters(), m2.named_parameters()):
            assert torch.equal(a, b), n
        save_checkpoint(tmp_path / "again.fqpm", m2, step=17)
        assert path.read_bytes() == (tmp_path / "again.fqpm").read_bytes()

    def test_optimizer_state_round_trip(self, tmp_path, rng):
        m = Denoiser(SMALL)
        opt = make_optimizer(m.parameters(), 1e-3)
        y, x, cp = inputs(SMALL, rng)
        loss(m(y, x, cp, 2), y).backward()
        opt.step()
        save_checkpoint(tmp_path / "c.fqpm", m, opt, step=1)
        m2, opt2, step = load_checkpoint(tmp_path / "c.fqpm", lambda ps: make_optimizer(ps, 1e-3))
        for p, p2 in zip(m.parameters(), m2.parameters()):
            s, s2 = opt.state[p], opt2.state[p2]
            assert torch.equal(s["exp_avg"], s2["exp_avg"]) and torch.equal(s["exp_avg_sq"], s2["exp_avg_sq"])
            assert float(s["step"]) == float(s2["step"])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.fqpm"
        p.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(FormatError):
            load_checkpoint(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "m.fqpm"
        save_checkpoint(p, Denoiser(SMALL))
        data = p.read_bytes()
        (tmp_path / "t.fqpm").write_bytes(data[:-5])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "t.fqpm")
