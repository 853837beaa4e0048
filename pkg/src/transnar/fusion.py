"""Gated cross-attention from token states to frozen NAR latents."""

from __future__ import annotations

import torch
from torch import nn

from .lm import FeedForward, LanguageModel, LMConfig, attend
from .nar import NAR, GraphBatch, NarLatents, collate_graphs


class CrossAttention(nn.Module):
    """Queries from tokens, keys and values from a set of graph latents."""

    def __init__(self, width: int, heads: int, source_width: int):
        super().__init__()
        self.width, self.heads = width, heads
        self.q = nn.Linear(width, width, bias=False)
        self.k = nn.Linear(source_width, width, bias=False)
        self.v = nn.Linear(source_width, width, bias=False)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.width // self.heads).transpose(1, 2)

    def forward(self, x, source, source_mask=None):
        q, k, v = self._split(self.q(x)), self._split(self.k(source)), self._split(self.v(source))
        allowed = None if source_mask is None else source_mask[:, None, None, :]
        out = attend(q, k, v, allowed)
        b, _, t, _ = out.shape
        return out.transpose(1, 2).reshape(b, t, self.width)


class GatedCrossAttentionBlock(nn.Module):
    """theta + tanh(a) * Combine(node_attn, edge_attn), then + tanh(f) * FFN.

    Both gates start at exactly zero, so a fresh block is the identity.
    """

    def __init__(self, width: int, heads: int, source_width: int, ffn_mult: int = 4):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.node = CrossAttention(width, heads, source_width)
        self.edge = CrossAttention(width, heads, source_width)
        self.combine = nn.Linear(2 * width, width)
        self.attn_gate = nn.Parameter(torch.zeros(()))
        self.ffn_norm = nn.LayerNorm(width)
        self.ffn = FeedForward(width, ffn_mult)
        self.ffn_gate = nn.Parameter(torch.zeros(()))

    def forward(self, theta: torch.Tensor, latents: NarLatents, node_mask: torch.Tensor | None = None):
        q = self.norm(theta)
        nodes, edges = latents
        b, n = nodes.shape[:2]
        flat_edges = edges.reshape(b, n * n, edges.shape[-1])
        edge_mask = None
        if node_mask is not None:
            edge_mask = (node_mask[:, :, None] & node_mask[:, None, :]).reshape(b, n * n)
        mixed = torch.cat([self.node(q, nodes, node_mask), self.edge(q, flat_edges, edge_mask)], dim=-1)
        x = theta + torch.tanh(self.attn_gate) * self.combine(mixed)
        return x + torch.tanh(self.ffn_gate) * self.ffn(self.ffn_norm(x))


def cross_attend(theta, node_latents, edge_latents, block: GatedCrossAttentionBlock, node_mask=None):
    return block(theta, NarLatents(node_latents, edge_latents), node_mask)


class TransNAR(nn.Module):
    """Language model with optional fusion blocks after every transformer block.

    ``fusion=False`` gives the baseline; its parameter names are a strict
    subset of the fused model's (everything outside ``cross.`` / ``adapter``).
    """

    def __init__(self, lm_config: LMConfig, fusion: bool = True, nar_width: int | None = None, adapter: bool = False):
        super().__init__()
        self.lm = LanguageModel(lm_config)
        self.cross = None
        self.adapter = None
        if fusion:
            width = lm_config.width
            nar_width = width if nar_width is None else nar_width
            if nar_width != width:
                if not adapter:
                    raise ValueError(
                        f"NAR width {nar_width} != LM width {width}; enable the linear adapter to bridge them"
                    )
                self.adapter = nn.Linear(nar_width, width, bias=False)
            self.cross = nn.ModuleList(
                GatedCrossAttentionBlock(width, lm_config.heads, width, lm_config.ffn_mult)
                for _ in range(lm_config.layers)
            )
            for block in self.cross:
                for name, p in block.named_parameters():
                    if p.ndim == 2:
                        nn.init.normal_(p, std=lm_config.init_std)
                    elif "gate" not in name and name.endswith("bias"):
                        nn.init.zeros_(p)

    @property
    def fused(self) -> bool:
        return self.cross is not None

    def gates(self) -> list[tuple[float, float]]:
        return [(b.attn_gate.item(), b.ffn_gate.item()) for b in self.cross] if self.fused else []

    def forward(self, tokens, positions=None, latents: NarLatents | None = None, node_mask=None, allowed=None, cache=None):
        hook = None
        if self.fused:
            if latents is None:
                raise ValueError("the fused model needs NAR latents")
            if self.adapter is not None:
                latents = NarLatents(self.adapter(latents.node), self.adapter(latents.edge))

            def hook(i, x):
                return self.cross[i](x, latents, node_mask)

        return self.lm(tokens, positions, allowed=allowed, hook=hook, cache=cache)


def frozen_latents(nar: NAR, batch: GraphBatch) -> NarLatents:
    """Final-step NAR latents with no autograd history."""
    with torch.no_grad():
        _, lat = nar.rollout(batch)
    return NarLatents(lat.node.detach(), lat.edge.detach())


def transnar_forward(model: TransNAR, nar: NAR | None, tokens, graph, positions=None) -> torch.Tensor:
    """Logits for one or more dual inputs (tokens plus graph form of the same instance)."""
    tokens = torch.as_tensor(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None]
    latents = mask = None
    if model.fused:
        graphs = graph if isinstance(graph, (list, tuple)) else [graph]
        batch = collate_graphs(graphs, dtype=next(nar.parameters()).dtype)
        latents = frozen_latents(nar, batch)
        mask = batch.mask
    return model(tokens, positions, latents, mask)
