import pytest
import torch
from helpers import fd_gradient_check, float32_gradient_check, trainable

from transnar.fusion import CrossAttention, GatedCrossAttentionBlock, TransNAR, cross_attend, frozen_latents, transnar_forward
from transnar.graphs import to_graph
from transnar.lm import LMConfig, lm_forward, token_loss
from transnar.nar import NAR, NarConfig, NarLatents, collate_graphs
from transnar.tasks import generate_instance
from transnar.text import VOCAB, render_text, tokenize

CFG = LMConfig(width=16, layers=2, heads=2, context=256)


def _pair(seed=0, fusion=True, nar_hidden=16):
    torch.manual_seed(seed)
    model = TransNAR(CFG, fusion=fusion, nar_width=nar_hidden if fusion else None)
    torch.manual_seed(seed + 100)
    nar = NAR(NarConfig(hidden=nar_hidden))
    return model, nar


def test_closed_gates_are_the_identity():
    block = GatedCrossAttentionBlock(16, 2, 16)
    theta = torch.randn(2, 5, 16)
    lat = NarLatents(torch.randn(2, 4, 16), torch.randn(2, 4, 4, 16))
    assert torch.equal(block(theta, lat), theta)
    assert block.attn_gate.item() == 0.0 and block.ffn_gate.item() == 0.0


def test_closed_gate_logits_match_the_bare_lm():
    model, nar = _pair()
    inst = generate_instance("insertion_sort", 4, 0)
    tokens = tokenize(render_text(inst).text)
    fused = transnar_forward(model, nar, tokens, to_graph(inst))
    assert fused.shape == (1, len(tokens), len(VOCAB))
    assert torch.equal(fused, lm_forward(model.lm, tokens))


def test_baseline_is_the_fused_model_minus_fusion():
    fused, _ = _pair(fusion=True)
    base, _ = _pair(fusion=False)
    names_f = set(dict(fused.named_parameters()))
    names_b = set(dict(base.named_parameters()))
    assert names_b < names_f
    assert all(n.startswith("cross.") for n in names_f - names_b)
    sd = fused.state_dict()
    assert all(torch.equal(v, sd[k]) for k, v in base.state_dict().items())


def test_key_permutation_invariance():
    torch.manual_seed(0)
    block = GatedCrossAttentionBlock(16, 2, 16)
    with torch.no_grad():
        block.attn_gate.fill_(0.7)
        block.ffn_gate.fill_(-0.4)
    theta = torch.randn(2, 6, 16)
    node, edge = torch.randn(2, 5, 16), torch.randn(2, 5, 5, 16)
    perm = torch.randperm(5)
    a = cross_attend(theta, node, edge, block)
    b = cross_attend(theta, node[:, perm], edge[:, perm][:, :, perm], block)
    torch.testing.assert_close(a, b, atol=1e-5, rtol=0)


def test_single_node_gets_all_the_attention():
    torch.manual_seed(0)
    attn = CrossAttention(8, 2, 8)
    x, src = torch.randn(1, 3, 8), torch.randn(1, 1, 8)
    out = attn(x, src)
    torch.testing.assert_close(out, attn.v(src).expand(1, 3, 8))


def test_padded_nodes_are_ignored():
    torch.manual_seed(0)
    attn = CrossAttention(8, 2, 8)
    x, src = torch.randn(1, 3, 8), torch.randn(1, 4, 8)
    mask = torch.tensor([[True, True, False, False]])
    junk = src.clone()
    junk[0, 2:] = 50.0
    torch.testing.assert_close(attn(x, src, mask), attn(x, junk, mask))
    torch.testing.assert_close(attn(x, src, mask), attn(x, src[:, :2]))


def test_width_mismatch_needs_an_adapter():
    with pytest.raises(ValueError):
        TransNAR(CFG, fusion=True, nar_width=8)
    model = TransNAR(CFG, fusion=True, nar_width=8, adapter=True)
    nar = NAR(NarConfig(hidden=8))
    inst = generate_instance("task_scheduling", 5, 1)
    out = transnar_forward(model, nar, tokenize(render_text(inst).text), to_graph(inst))
    assert torch.isfinite(out).all()


def test_latents_carry_information_once_gates_open():
    model, nar = _pair()
    with torch.no_grad():
        for b in model.cross:
            b.attn_gate.fill_(0.5)
    inst = generate_instance("insertion_sort", 5, 2)
    tokens = torch.tensor(tokenize(render_text(inst).text))[None]
    g = collate_graphs([to_graph(inst)])
    lat = frozen_latents(nar, g)
    zeros = NarLatents(torch.zeros_like(lat.node), torch.zeros_like(lat.edge))
    assert not torch.allclose(model(tokens, None, lat, g.mask), model(tokens, None, zeros, g.mask))


def test_frozen_latents_carry_no_graph():
    _, nar = _pair()
    g = collate_graphs([to_graph(generate_instance("binary_search", 4, 0))])
    lat = frozen_latents(nar, g)
    assert not lat.node.requires_grad and lat.node.grad_fn is None


def test_no_gradient_reaches_the_nar():
    model, nar = _pair()
    with torch.no_grad():
        for b in model.cross:
            b.attn_gate.fill_(0.5)
    inst = generate_instance("insertion_sort", 4, 0)
    tokens = torch.tensor(tokenize(render_text(inst).text))[None]
    logits = transnar_forward(model, nar, tokens, to_graph(inst))
    token_loss(logits, tokens, torch.ones_like(tokens, dtype=torch.bool)).backward()
    assert all(p.grad is None for p in nar.parameters())
    assert model.cross[0].node.k.weight.grad is not None


def _fused_loss(model, nar, insts, tokens):
    g = collate_graphs([to_graph(i) for i in insts], dtype=next(model.parameters()).dtype)
    lat = frozen_latents(nar, g)
    return token_loss(model(tokens, None, lat, g.mask), tokens, torch.ones_like(tokens, dtype=torch.bool))


def _tiny_fused():
    cfg = LMConfig(width=8, layers=2, heads=2, context=16)
    torch.manual_seed(0)
    model = TransNAR(cfg, fusion=True)
    with torch.no_grad():
        for b in model.cross:
            b.attn_gate.fill_(0.3)
            b.ffn_gate.fill_(-0.2)
    torch.manual_seed(1)
    nar = NAR(NarConfig(hidden=8, algorithms=("insertion_sort",)))
    insts = [generate_instance("insertion_sort", 3, s) for s in range(2)]
    tokens = torch.randint(3, len(VOCAB), (2, 8), generator=torch.Generator().manual_seed(0))
    return model, nar, insts, tokens


def test_cross_attention_gradients_match_finite_differences():
    model, nar, insts, tokens = _tiny_fused()
    model, nar = model.double(), nar.double()
    params = {n: p for n, p in trainable(model).items() if n.startswith("cross.")}
    assert fd_gradient_check(lambda: _fused_loss(model, nar, insts, tokens), params, coords=100) <= 1e-5


def test_cross_attention_gradients_float32():
    model, nar, insts, tokens = _tiny_fused()
    nar64 = NAR(NarConfig(hidden=8, algorithms=("insertion_sort",))).double()
    nar64.load_state_dict({k: v.double() for k, v in nar.state_dict().items()})

    def loss_of(m):
        return _fused_loss(m, nar if next(m.parameters()).dtype == torch.float32 else nar64, insts, tokens)

    assert float32_gradient_check(model, loss_of) <= 1e-3
