import math

import pytest
import torch

from mobllm.backbone import (
    Backbone,
    BackboneConfig,
    CausalSelfAttention,
    assemble_input,
    attention_mask,
    freeze_mask,
    is_trainable,
    rotary,
)


def rotate_ref(x):
    """Loop version of the rotary map for one (T, hd) slice."""
    t, hd = x.shape
    out = torch.empty_like(x)
    for p in range(t):
        for i in range(hd // 2):
            theta = p * 10000.0 ** (-2 * i / hd)
            a, b = x[p, 2 * i], x[p, 2 * i + 1]
            out[p, 2 * i] = a * math.cos(theta) - b * math.sin(theta)
            out[p, 2 * i + 1] = a * math.sin(theta) + b * math.cos(theta)
    return out


def attention_ref(layer, x, valid):
    """Per-head, per-query dense attention with explicit key loops."""
    t, w = x.shape
    h = layer.heads
    hd = w // h
    qkv = x @ layer.qkv.weight.T + layer.qkv.bias
    q, k, v = qkv[:, :w], qkv[:, w:2 * w], qkv[:, 2 * w:]
    heads = []
    for j in range(h):
        sl = slice(j * hd, (j + 1) * hd)
        qh, kh, vh = rotate_ref(q[:, sl]), rotate_ref(k[:, sl]), v[:, sl]
        rows = []
        for i in range(t):
            keys = [m for m in range(i + 1) if valid[m] or m == i]
            logits = torch.stack([qh[i] @ kh[m] / math.sqrt(hd) for m in keys])
            a = torch.softmax(logits, 0)
            rows.append(sum(a[n] * vh[m] for n, m in enumerate(keys)))
        heads.append(torch.stack(rows))
    return torch.cat(heads, 1) @ layer.proj.weight.T + layer.proj.bias


class TestAttention:
    def test_rotary_matches_loops(self):
        x = torch.randn(1, 1, 5, 6, dtype=torch.float64)
        torch.testing.assert_close(rotary(x)[0, 0], rotate_ref(x[0, 0]))

    def test_dense_oracle(self):
        torch.manual_seed(0)
        layer = CausalSelfAttention(8, 2).double()
        x = torch.randn(2, 6, 8, dtype=torch.float64)
        valid = torch.tensor([[0, 0, 1, 1, 1, 1], [1, 1, 1, 1, 1, 1]], dtype=torch.bool)
        out = layer(x, attention_mask(valid))
        for b in range(2):
            torch.testing.assert_close(out[b], attention_ref(layer, x[b], valid[b]))

    def test_mask(self):
        valid = torch.tensor([[False, True, True]])
        m = attention_mask(valid)[0]
        assert m.tolist() == [[True, False, False], [False, True, False], [False, True, True]]


class TestAssembly:
    def test_left_padding_and_boundary(self):
        H = torch.arange(1, 7).float().view(2, 3, 1).repeat(1, 1, 2)
        lengths = torch.tensor([3, 1])
        user = torch.full((2, 2), 9.0)
        prompts = torch.full((2, 4, 2), 7.0)
        x = assemble_input(H, lengths, user, prompts)
        assert x.boundary == 3 and x.include_user
        assert x.tokens[:, :, 0].tolist() == [[1, 2, 3, 9, 7, 7, 7, 7], [0, 0, 4, 9, 7, 7, 7, 7]]
        assert x.valid.tolist()[1] == [False, False, True] + [True] * 5

    def test_without_user(self):
        x = assemble_input(torch.randn(2, 3, 4), torch.tensor([3, 2]), None, torch.randn(2, 6, 4))
        assert x.tokens.shape == (2, 9, 4) and not x.include_user

    def test_zero_length(self):
        with pytest.raises(ValueError):
            assemble_input(torch.randn(1, 2, 4), torch.tensor([0]))


class TestBackbone:
    @pytest.mark.parametrize("variant", ["transformer", "identity"])
    def test_alpha_has_n_rows(self, variant):
        bb = Backbone(BackboneConfig(layers=2, heads=2, width=8, variant=variant))
        x = assemble_input(torch.randn(3, 5, 8), torch.tensor([5, 2, 4]), torch.randn(3, 8), torch.randn(3, 6, 8))
        ab = bb(x)
        assert ab.alpha.shape == (3, 5, 8) and ab.beta.shape == (3, 7, 8)
        assert ab.alpha_mask.sum(1).tolist() == [5, 2, 4]
        assert ab.beta_mask.all()

    def test_identity_passes_through(self):
        bb = Backbone(BackboneConfig(layers=3, heads=2, width=8, variant="identity"))
        x = assemble_input(torch.randn(2, 4, 8), torch.tensor([4, 4]))
        ab = bb(x)
        assert torch.equal(ab.alpha, x.tokens)
        assert len(list(bb.parameters())) == 0

    def test_causal(self):
        torch.manual_seed(0)
        bb = Backbone(BackboneConfig(layers=2, heads=2, width=8)).double()
        x = assemble_input(torch.randn(1, 6, 8, dtype=torch.float64), torch.tensor([6]))
        base = bb(x).alpha
        for j in range(6):
            x2 = assemble_input(x.tokens.clone(), torch.tensor([6]))
            x2.tokens[:, j:] += 1.0
            out = bb(x2).alpha
            assert torch.equal(out[:, :j], base[:, :j])

    def test_padding_does_not_leak(self):
        torch.manual_seed(0)
        bb = Backbone(BackboneConfig(layers=2, heads=2, width=8))
        H = torch.randn(1, 4, 8)
        a = bb(assemble_input(H, torch.tensor([2]), torch.ones(1, 8)))
        H2 = H.clone()
        H2[:, 2:] = 100.0  # right padding beyond length 2
        b = bb(assemble_input(H2, torch.tensor([2]), torch.ones(1, 8)))
        torch.testing.assert_close(a.beta, b.beta)

    def test_width_mismatch(self):
        bb = Backbone(BackboneConfig(layers=1, heads=2, width=8))
        with pytest.raises(ValueError, match="width"):
            bb(assemble_input(torch.randn(1, 2, 4), torch.tensor([2])))

    @pytest.mark.parametrize("kwargs", [
        {"layers": 2, "frozen_layers": 2, "attention_unfrozen": 1},
        {"width": 10, "heads": 4},
        {"width": 6, "heads": 2},
        {"variant": "lstm"},
    ])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            BackboneConfig(**kwargs)


class TestFreeze:
    def test_mask_pattern(self):
        cfg = BackboneConfig(layers=4, heads=2, width=8, frozen_layers=1, attention_unfrozen=2)
        mask = freeze_mask(cfg)
        for name, trainable in mask.items():
            layer = int(name.split(".")[1])
            part = name.split(".")[2]
            if layer == 0:
                assert not trainable
            elif layer == 1:
                assert trainable
            else:
                assert trainable == (part in ("attn", "attn_norm"))
        assert mask == {n: p.requires_grad for n, p in Backbone(cfg).named_parameters()}

    def test_is_trainable_defaults_all(self):
        cfg = BackboneConfig(layers=2, heads=2, width=8)
        assert all(freeze_mask(cfg).values())
        assert is_trainable(cfg, "blocks.1.ffn.0.weight")

    def test_frozen_bitwise_after_steps(self):
        torch.manual_seed(0)
        cfg = BackboneConfig(layers=3, heads=2, width=8, frozen_layers=1, attention_unfrozen=1)
        bb = Backbone(cfg)
        before = {n: p.detach().clone() for n, p in bb.named_parameters()}
        opt = torch.optim.Adam([p for p in bb.parameters() if p.requires_grad], lr=1e-2)
        for _ in range(10):
            x = assemble_input(torch.randn(2, 4, 8), torch.tensor([4, 3]), torch.randn(2, 8))
            loss = bb(x).beta.pow(2).sum()
            opt.zero_grad()
            loss.backward()
            opt.step()
        for n, p in bb.named_parameters():
            if p.requires_grad:
                assert not torch.equal(p, before[n]), n
            else:
                assert torch.equal(p, before[n]), n
