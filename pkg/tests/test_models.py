import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import gradcheck as G
from icldyn.dataset import NormalizationStats
from icldyn.errors import LengthNotDivisible, SchemaMismatch, ShapeMismatch
from icldyn.models import (
    ModelConfig,
    build_model,
    encode_context,
    init_params,
    load_checkpoint,
    load_model,
    param_count,
    save_checkpoint,
)

ARCHS = ["RoboMorph", "Diffuser", "CDCNN", "CDT"]

# Counted once with the meta device and pinned (d_u = d_y = 7, N = 400, m = 320).
PAPER_PARAM_COUNTS = {"RoboMorph": 49705735, "Diffuser": 36320398, "CDCNN": 39574919, "CDT": 29889031}
DESK_PARAM_COUNTS = {"RoboMorph": 467842, "Diffuser": 584612, "CDCNN": 650914, "CDT": 309250}


def desk(arch, **kw):
    return ModelConfig.from_preset("desk", arch=arch, **kw)


def inputs(cfg, B=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    u = torch.randn(B, cfg.N, cfg.d_u, generator=g)
    y = torch.randn(B, cfg.N, cfg.d_y, generator=g)
    return u, y


def run(model, cfg, u, y, t=None, y_t=None):
    if cfg.arch == "RoboMorph":
        return model(u[:, : cfg.m], y[:, : cfg.m], u[:, cfg.m :])
    B = u.shape[0]
    t = torch.full((B,), 5) if t is None else t
    if cfg.arch == "Diffuser":
        return model.denoise(torch.cat([u, y], -1) if y_t is None else y_t, t)
    cond = model.condition(u, y[:, : cfg.m])
    return model.denoise(y[:, cfg.m :] if y_t is None else y_t, t, cond)


@pytest.mark.parametrize("arch", ARCHS)
def test_output_shapes(arch):
    cfg = desk(arch)
    model = init_params(cfg, 0)
    u, y = inputs(cfg)
    out = run(model, cfg, u, y)
    expected = (2, cfg.N, cfg.d_u + cfg.d_y) if arch == "Diffuser" else (2, cfg.horizon, cfg.d_y)
    assert out.shape == expected


def test_paper_preset_robomorph_shape():
    cfg = ModelConfig.from_preset("paper", arch="RoboMorph", d_u=7, d_y=7, N=400, m=320)
    assert cfg.blocks == 12 and cfg.heads == 8 and cfg.embed_dim == 384
    assert cfg.base_channels == 128 and cfg.down_steps == 3 and cfg.T == 100
    model = init_params(cfg, 0)
    u, y = inputs(cfg, B=1)
    with torch.no_grad():
        assert run(model, cfg, u, y).shape == (1, 80, 7)


@pytest.mark.parametrize("arch", ARCHS)
def test_pinned_parameter_counts(arch):
    paper = ModelConfig.from_preset("paper", arch=arch, d_u=7, d_y=7, N=400, m=320)
    assert param_count(paper) == PAPER_PARAM_COUNTS[arch]
    assert param_count(desk(arch)) == DESK_PARAM_COUNTS[arch]


@pytest.mark.parametrize("arch", ["Diffuser", "CDCNN", "CDT"])
def test_untrained_denoiser_outputs_zero(arch):
    cfg = desk(arch)
    u, y = inputs(cfg)
    assert torch.all(run(init_params(cfg, 3), cfg, u, y) == 0)


def _perturbed(model, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn(p.shape, generator=g) * 0.05)
    return model


def test_diffuser_step_embedding_is_live():
    cfg = desk("Diffuser")
    model = _perturbed(init_params(cfg, 0))
    u, y = inputs(cfg)
    a = run(model, cfg, u, y, t=torch.tensor([1, 1]))
    b = run(model, cfg, u, y, t=torch.tensor([cfg.T, cfg.T]))
    assert not torch.allclose(a, b)


@pytest.mark.parametrize("arch", ["CDCNN", "CDT"])
def test_context_conditioning_is_live(arch):
    cfg = desk(arch)
    model = _perturbed(init_params(cfg, 0))
    u, y = inputs(cfg)
    u2, y2 = inputs(cfg, seed=1)
    y_t = torch.randn(2, cfg.horizon, cfg.d_y)
    a = run(model, cfg, u, y, y_t=y_t)
    b = run(model, cfg, u2, y2, y_t=y_t)
    assert not torch.allclose(a, b)


def test_cdt_zeroed_cond_tokens_change_output():
    cfg = desk("CDT")
    model = _perturbed(init_params(cfg, 0))
    u, y = inputs(cfg)
    cond = model.condition(u, y[:, : cfg.m])
    y_t, t = torch.randn(2, cfg.horizon, cfg.d_y), torch.tensor([3, 7])
    a = model.denoise(y_t, t, cond)
    cond.cond_tokens = torch.zeros_like(cond.cond_tokens)
    assert not torch.allclose(a, model.denoise(y_t, t, cond))


def test_robomorph_decoder_causality():
    cfg = desk("RoboMorph")
    model = _perturbed(init_params(cfg, 0))
    u, y = inputs(cfg)
    base = run(model, cfg, u, y)
    for i in (0, 5, cfg.horizon - 2):
        u2 = u.clone()
        u2[:, cfg.m + i + 1 :] += 1.0
        out = run(model, cfg, u2, y)
        assert torch.equal(out[:, : i + 1], base[:, : i + 1])
        assert not torch.equal(out[:, i + 1 :], base[:, i + 1 :])


@pytest.mark.parametrize("arch", ARCHS)
def test_batch_permutation_equivariance(arch):
    cfg = desk(arch)
    model = _perturbed(init_params(cfg, 0))
    u, y = inputs(cfg, B=3)
    perm = torch.tensor([2, 0, 1])
    a = run(model, cfg, u, y)[perm]
    b = run(model, cfg, u[perm], y[perm])
    assert torch.allclose(a, b, atol=1e-5)


def test_context_encoding_contract():
    cfg = desk("CDT")
    model = init_params(cfg, 0)
    u, y = inputs(cfg)
    enc = encode_context(model, u, y[:, : cfg.m])
    assert enc.cond_tokens.shape == (2, cfg.N, cfg.embed_dim)
    assert enc.cond_vector.shape == (2, cfg.embed_dim)
    model = _perturbed(model)
    zero = encode_context(model, torch.zeros_like(u), torch.zeros_like(y[:, : cfg.m]))
    # Zero inputs leave the bias pathway plus the context-flag column of the token projection.
    enc = model.encoder
    with torch.no_grad():
        pooled = enc.token.bias + (cfg.m / cfg.N) * enc.token.weight[:, -1]
        expected = enc.fc2(torch.nn.functional.mish(enc.fc1(pooled)))
        assert torch.allclose(zero.cond_vector, expected.expand(2, -1), atol=1e-6)
    enc = encode_context(model, u, y[:, : cfg.m])
    assert torch.equal(enc.cond_vector, encode_context(model, u, y[:, : cfg.m]).cond_vector)


def test_context_pooling_hand_mean():
    cfg = ModelConfig(arch="CDT", d_u=1, d_y=1, N=3, m=2, blocks=1, heads=1, embed_dim=2, base_channels=8, groups=8, preset="custom")
    model = _perturbed(init_params(cfg, 0))
    enc = model.encoder
    u = torch.tensor([[[1.0], [2.0], [3.0]]])
    y = torch.tensor([[[0.5], [-1.0]]])
    W, b = enc.token.weight.detach(), enc.token.bias.detach()
    rows = [[1.0, 0.5, 1.0], [2.0, -1.0, 1.0], [3.0, 0.0, 0.0]]
    tokens = [[sum(W[e, j] * r[j] for j in range(3)) + b[e] for e in range(2)] for r in rows]
    mean = [sum(t[e] for t in tokens) / 3 for e in range(2)]
    with torch.no_grad():
        out = enc(u, y)
    assert torch.allclose(out.cond_tokens[0], torch.tensor(tokens), atol=1e-6)
    pooled = out.cond_tokens.mean(dim=1)[0]
    assert max(abs(float(pooled[e]) - float(mean[e])) for e in range(2)) <= 1e-6


@pytest.mark.parametrize("arch", ["Diffuser", "CDCNN"])
def test_length_not_divisible(arch):
    cfg = ModelConfig(arch=arch, N=30, m=20, preset="custom")
    model = init_params(cfg, 0)
    u, y = inputs(cfg)
    with pytest.raises(LengthNotDivisible):
        run(model, cfg, u, y)


def test_shape_mismatch():
    cfg = desk("RoboMorph")
    model = init_params(cfg, 0)
    with pytest.raises(ShapeMismatch):
        model(torch.zeros(1, 10, 2), torch.zeros(1, 10, 2), torch.zeros(1, 32, 2))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(embed_dim=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(N=10, m=12)
    with pytest.raises(ValueError):
        ModelConfig(arch="GPT")


@settings(max_examples=15, deadline=None)
@given(
    arch=st.sampled_from(ARCHS),
    d_u=st.integers(1, 3), d_y=st.integers(1, 3),
    H=st.sampled_from([4, 8]), m=st.integers(1, 12), heads=st.sampled_from([1, 2]),
    down=st.integers(1, 2), B=st.integers(1, 3),
)
def test_shape_contracts_random_configs(arch, d_u, d_y, H, m, heads, down, B):
    N = m + H
    if arch in ("Diffuser",) and N % (2**down):
        N += (2**down) - N % (2**down)
    cfg = ModelConfig(arch=arch, d_u=d_u, d_y=d_y, N=N, m=N - H, blocks=1, heads=heads, embed_dim=8,
                      base_channels=8, down_steps=down, groups=4, kernel=3, T=10, preset="custom")
    model = init_params(cfg, 0)
    u, y = inputs(cfg, B=B)
    out = run(model, cfg, u, y)
    expected = (B, N, d_u + d_y) if arch == "Diffuser" else (B, H, d_y)
    assert out.shape == expected


def test_same_seed_same_init():
    cfg = desk("CDCNN")
    a, b, c = init_params(cfg, 1), init_params(cfg, 1), init_params(cfg, 2)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert any(not torch.equal(sa[k], sc[k]) for k in sa)


def test_init_distribution():
    model = init_params(desk("RoboMorph"), 0)
    w = model.enc_in.weight.detach()
    assert w.abs().max() <= 0.04 and 0.01 < float(w.std()) < 0.03
    assert torch.all(model.enc_in.bias == 0) and torch.all(model.enc_norm.weight == 1)


@pytest.mark.parametrize("arch", ARCHS)
def test_checkpoint_round_trip(arch, tmp_path):
    cfg = desk(arch)
    model = _perturbed(init_params(cfg, 0))
    stats = NormalizationStats(np.array([0.1, 0.2]), np.array([1.0, 2.0]), np.array([0.3, 0.4]), np.array([3.0, 4.0]))
    path = tmp_path / "m.bin"
    save_checkpoint(model, cfg, stats, path, {"note": "x"})
    params, config, st = load_checkpoint(path)
    sd = model.state_dict()
    assert list(params) == list(sd)
    assert all(params[k].numpy().tobytes() == sd[k].numpy().tobytes() for k in sd)
    assert config["model"] == cfg.model_dump(mode="json") and config["note"] == "x"
    assert st.y_std.tolist() == [3.0, 4.0]
    loaded, cfg2, _, _ = load_model(path)
    assert cfg2 == cfg
    u, y = inputs(cfg)
    model.eval()
    assert torch.equal(run(loaded, cfg, u, y), run(model, cfg, u, y))


def test_checkpoint_arch_mismatch(tmp_path):
    cfg = desk("CDT")
    save_checkpoint(init_params(cfg, 0), cfg, None, tmp_path / "m.bin")
    params, config, _ = load_checkpoint(tmp_path / "m.bin")
    from icldyn.tensor import container

    config["model"]["arch"] = "CDCNN"
    container.save(tmp_path / "bad.bin", params, config, None)
    with pytest.raises(SchemaMismatch):
        load_model(tmp_path / "bad.bin")


@pytest.mark.parametrize("arch", ARCHS)
def test_training_loss_gradients(arch):
    assert max(G.arch_loss_errors(arch, trials=3, seed=5)) <= G.TOL
