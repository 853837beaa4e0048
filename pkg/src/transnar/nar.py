"""Graph-based neural algorithmic reasoner.

Per-task encoders map a :class:`GraphSpec` into a shared latent space, a single
gated max-MPNN processor is iterated with shared weights, and per-task heads
decode the final latents. Only the processor is shared between tasks.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .graphs import (
    EDGE_POINTER,
    GRAPH_CATEGORICAL,
    GRAPH_CATEGORICAL_PLUS_ONE,
    NODE_MASK,
    NODE_POINTER,
    GraphSpec,
    decode_head,
    feature_dims,
    head_spec,
    head_target,
    to_graph,
)
from .tasks import ALGORITHMS, AlgorithmId, ProblemInstance, as_algorithm, generate_instance

log = logging.getLogger(__name__)

IGNORE = -100


class TrainingDivergedError(RuntimeError):
    pass


class NarLatents(NamedTuple):
    node: torch.Tensor  # (B, N, k)
    edge: torch.Tensor  # (B, N, N, k)


@dataclass
class NarConfig:
    hidden: int = 128
    algorithms: tuple[str, ...] = tuple(a.value for a in ALGORITHMS)
    gate_bias: float = -3.0
    layer_norm: bool = True


# --------------------------------------------------------------------------
# batching


@dataclass
class GraphBatch:
    algorithm: AlgorithmId
    node: torch.Tensor  # (B, N, l)
    edge: torch.Tensor  # (B, N, N, l_e)
    graph: torch.Tensor  # (B, l_g)
    adjacency: torch.Tensor  # (B, N, N) bool
    mask: torch.Tensor  # (B, N) bool
    sizes: list[int]
    target: torch.Tensor | None = None

    @property
    def num_nodes(self) -> int:
        return self.node.shape[1]

    def permute_nodes(self, perm) -> "GraphBatch":
        perm = torch.as_tensor(perm)
        return GraphBatch(
            self.algorithm,
            self.node[:, perm],
            self.edge[:, perm][:, :, perm],
            self.graph,
            self.adjacency[:, perm][:, :, perm],
            self.mask[:, perm],
            self.sizes,
            None,
        )


def collate_graphs(
    graphs: Sequence[GraphSpec],
    targets: Sequence[np.ndarray] | None = None,
    dtype: torch.dtype = torch.float32,
) -> GraphBatch:
    alg = graphs[0].algorithm
    if any(g.algorithm is not alg for g in graphs):
        raise ValueError("a graph batch must hold a single algorithm")
    b, n = len(graphs), max(g.num_nodes for g in graphs)
    l, le, lg = feature_dims(alg)
    node = np.zeros((b, n, l))
    edge = np.zeros((b, n, n, le))
    graph = np.zeros((b, lg))
    adj = np.zeros((b, n, n), dtype=bool)
    mask = np.zeros((b, n), dtype=bool)
    for i, g in enumerate(graphs):
        m = g.num_nodes
        node[i, :m] = g.node_features
        edge[i, :m, :m] = g.edge_features
        graph[i] = g.graph_features
        adj[i, :m, :m] = g.adjacency > 0
        mask[i, :m] = True
    tgt = None
    if targets is not None:
        _, kind = head_spec(alg)
        shape = {
            NODE_POINTER: (b, n),
            NODE_MASK: (b, n),
            EDGE_POINTER: (b, n, n),
            GRAPH_CATEGORICAL: (b,),
            GRAPH_CATEGORICAL_PLUS_ONE: (b,),
        }[kind]
        t = np.full(shape, IGNORE, dtype=np.int64)
        for i, (g, y) in enumerate(zip(graphs, targets)):
            m = g.num_nodes
            if kind in (NODE_POINTER, NODE_MASK):
                t[i, :m] = y
            elif kind == EDGE_POINTER:
                t[i, :m, :m] = y
            else:
                t[i] = y
        tgt = torch.as_tensor(t)
    return GraphBatch(
        alg,
        torch.as_tensor(node, dtype=dtype),
        torch.as_tensor(edge, dtype=dtype),
        torch.as_tensor(graph, dtype=dtype),
        torch.as_tensor(adj),
        torch.as_tensor(mask),
        [g.num_nodes for g in graphs],
        tgt,
    )


def collate_instances(instances: Sequence[ProblemInstance], dtype=torch.float32) -> GraphBatch:
    return collate_graphs([to_graph(x) for x in instances], [head_target(x) for x in instances], dtype)


# --------------------------------------------------------------------------
# processor


class MessageMLP(nn.Module):
    """psi(g_u, g_v, e_uv): a 2-layer MLP whose first layer is split per argument."""

    def __init__(self, k: int):
        super().__init__()
        self.recv = nn.Linear(k, k)
        self.send = nn.Linear(k, k, bias=False)
        self.edge = nn.Linear(k, k, bias=False)
        self.out = nn.Linear(k, k)

    def forward(self, h_recv, h_send, e):
        return self.out(F.relu(self.recv(h_recv) + self.send(h_send) + self.edge(e)))


class UpdateMLP(nn.Module):
    """phi(g_u, m_u)."""

    def __init__(self, k: int, layer_norm: bool = True):
        super().__init__()
        self.fc1 = nn.Linear(2 * k, k)
        self.fc2 = nn.Linear(k, k)
        self.norm = nn.LayerNorm(k) if layer_norm else nn.Identity()

    def forward(self, h, m):
        return self.norm(self.fc2(F.relu(self.fc1(torch.cat([h, m], dim=-1)))))


class UpdateGate(nn.Module):
    def __init__(self, k: int, bias: float):
        super().__init__()
        self.lin = nn.Linear(2 * k, k)
        nn.init.constant_(self.lin.bias, bias)

    def forward(self, h, m):
        return torch.sigmoid(self.lin(torch.cat([h, m], dim=-1)))


class Processor(nn.Module):
    """One gated max-MPNN step; the same module is reused at every step."""

    def __init__(self, k: int, gate_bias: float = -3.0, layer_norm: bool = True):
        super().__init__()
        self.message = MessageMLP(k)
        self.update = UpdateMLP(k, layer_norm)
        self.gate = UpdateGate(k, gate_bias)

    def forward(self, latents: NarLatents, adjacency: torch.Tensor, mask: torch.Tensor | None = None) -> NarLatents:
        return mpnn_step(latents, adjacency, self.message, self.update, self.gate, mask)


def mpnn_step(latents: NarLatents, adjacency, message, update, gate=None, mask=None) -> NarLatents:
    """g_u' = z * phi(g_u, max_v psi(g_u, g_v, e_uv)) + (1 - z) * g_u.

    The max runs over v with ``adjacency[u, v]`` set, plus the self-loop of
    every real node. The returned edge latents are the per-pair messages.
    ``gate=None`` means an ungated update.
    """
    h, e = latents
    b, n, k = h.shape
    if mask is None:
        mask = torch.ones(b, n, dtype=torch.bool, device=h.device)
    adj = adjacency.bool() | torch.diag_embed(mask)
    adj = adj & mask[:, :, None] & mask[:, None, :]
    msgs = message(h[:, :, None, :], h[:, None, :, :], e)
    msgs = torch.broadcast_to(msgs, (b, n, n, k))
    agg = msgs.masked_fill(~adj[..., None], -math.inf).amax(dim=2)
    agg = torch.where(mask[..., None], agg, torch.zeros_like(agg))
    cand = update(h, agg)
    if gate is None:
        new = cand
    else:
        z = gate(h, agg)
        new = z * cand + (1 - z) * h
    new = new * mask[..., None]
    edge = msgs * (mask[:, :, None, None] & mask[:, None, :, None])
    return NarLatents(new, edge)


# --------------------------------------------------------------------------
# encoders / decoders


class Encoder(nn.Module):
    def __init__(self, algorithm, k: int):
        super().__init__()
        l, le, lg = feature_dims(algorithm)
        self.node = nn.Linear(l, k)
        self.edge = nn.Linear(le, k) if le else None
        self.graph = nn.Linear(lg, k, bias=False) if lg else None

    def forward(self, batch: GraphBatch) -> NarLatents:
        h = self.node(batch.node)
        if self.graph is not None:
            h = h + self.graph(batch.graph)[:, None, :]
        h = h * batch.mask[..., None]
        b, n, k = h.shape
        if self.edge is not None:
            e = self.edge(batch.edge)
        else:
            e = h.new_zeros(b, n, n, k)
        e = e * (batch.mask[:, :, None, None] & batch.mask[:, None, :, None])
        return NarLatents(h, e)


class Decoder(nn.Module):
    def __init__(self, algorithm, k: int):
        super().__init__()
        self.kind = head_spec(algorithm)[1]
        z = 2 * k
        if self.kind == NODE_MASK:
            self.mlp = nn.Sequential(nn.Linear(z, k), nn.ReLU(), nn.Linear(k, 1))
        elif self.kind in (GRAPH_CATEGORICAL, GRAPH_CATEGORICAL_PLUS_ONE):
            self.mlp = nn.Sequential(nn.Linear(z, k), nn.ReLU(), nn.Linear(k, 1))
            if self.kind == GRAPH_CATEGORICAL_PLUS_ONE:
                self.end = nn.Sequential(nn.Linear(z, k), nn.ReLU(), nn.Linear(k, 1))
        elif self.kind == NODE_POINTER:
            self.a = nn.Linear(z, k)
            self.b = nn.Linear(z, k, bias=False)
            self.c = nn.Linear(k, k, bias=False)
            self.out = nn.Linear(k, 1)
        elif self.kind == EDGE_POINTER:
            self.a = nn.Linear(k, k)
            self.b = nn.Linear(z, k, bias=False)
            self.c = nn.Linear(z, k, bias=False)
            self.d = nn.Linear(z, k, bias=False)
            self.out = nn.Linear(k, 1)

    def forward(self, z: torch.Tensor, e: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        neg = torch.finfo(z.dtype).min
        if self.kind == NODE_MASK:
            return self.mlp(z).squeeze(-1)
        if self.kind in (GRAPH_CATEGORICAL, GRAPH_CATEGORICAL_PLUS_ONE):
            logits = self.mlp(z).squeeze(-1).masked_fill(~mask, neg)
            if self.kind == GRAPH_CATEGORICAL_PLUS_ONE:
                pooled = z.masked_fill(~mask[..., None], neg).amax(dim=1)
                # the extra class sits right after the last real node
                sizes = mask.sum(dim=1)
                end = self.end(pooled).squeeze(-1)
                logits = torch.cat([logits, logits.new_full((z.shape[0], 1), neg)], dim=1)
                logits = logits.scatter(1, sizes[:, None], end[:, None])
            return logits
        if self.kind == NODE_POINTER:
            hid = self.a(z)[:, :, None, :] + self.b(z)[:, None, :, :] + self.c(e)
            logits = self.out(F.relu(hid)).squeeze(-1)
            return logits.masked_fill(~mask[:, None, :], neg)
        # edge pointer: logits[b, i, j, m] scores node m as the answer for pair (i, j)
        hid = (
            self.a(e)[:, :, :, None, :]
            + self.b(z)[:, None, None, :, :]
            + self.c(z)[:, :, None, None, :]
            + self.d(z)[:, None, :, None, :]
        )
        logits = self.out(F.relu(hid)).squeeze(-1)
        return logits.masked_fill(~mask[:, None, None, :], neg)


class NAR(nn.Module):
    def __init__(self, config: NarConfig | None = None):
        super().__init__()
        self.config = config or NarConfig()
        k = self.config.hidden
        algs = [as_algorithm(a) for a in self.config.algorithms]
        self.encoders = nn.ModuleDict({a.value: Encoder(a, k) for a in algs})
        self.processor = Processor(k, self.config.gate_bias, self.config.layer_norm)
        self.decoders = nn.ModuleDict({a.value: Decoder(a, k) for a in algs})

    @property
    def hidden(self) -> int:
        return self.config.hidden

    def encode(self, batch: GraphBatch) -> NarLatents:
        if batch.algorithm.value not in self.encoders:
            raise ValueError(f"NAR was not built for {batch.algorithm.value}")
        return self.encoders[batch.algorithm.value](batch)

    def rollout(self, batch: GraphBatch, steps: int | None = None) -> tuple[NarLatents, NarLatents]:
        """Run the processor; returns (initial latents, final latents)."""
        steps = batch.num_nodes if steps is None else steps
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps}")
        lat0 = self.encode(batch)
        h, edge = lat0.node, lat0.edge
        for _ in range(steps):
            h, edge_out = self.processor(NarLatents(h, lat0.edge), batch.adjacency, batch.mask)
            edge = edge_out
        return lat0, NarLatents(h, edge)

    def forward(self, batch: GraphBatch, steps: int | None = None) -> tuple[NarLatents, torch.Tensor]:
        lat0, lat = self.rollout(batch, steps)
        z = torch.cat([lat0.node, lat.node], dim=-1)
        logits = self.decoders[batch.algorithm.value](z, lat.edge, batch.mask)
        return lat, logits


def head_loss(kind: str, logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if kind == NODE_MASK:
        valid = target != IGNORE
        return F.binary_cross_entropy_with_logits(logits[valid], target[valid].to(logits.dtype))
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), target.reshape(-1), ignore_index=IGNORE)


def head_predictions(kind: str, logits: torch.Tensor) -> torch.Tensor:
    if kind == NODE_MASK:
        return (logits > 0).long()
    return logits.argmax(dim=-1)


def elementwise_accuracy(kind: str, logits: torch.Tensor, target: torch.Tensor) -> tuple[int, int]:
    pred = head_predictions(kind, logits)
    valid = target != IGNORE
    return int((pred[valid] == target[valid]).sum()), int(valid.sum())


def nar_loss(model: NAR, batch: GraphBatch) -> torch.Tensor:
    _, logits = model(batch)
    return head_loss(head_spec(batch.algorithm)[1], logits, batch.target)


def nar_forward(model: NAR, graph: GraphSpec, steps: int | None = None, inputs: dict | None = None):
    """Single-graph rollout: (latents with batch dim 1, decoded outputs or None)."""
    batch = collate_graphs([graph], dtype=next(model.parameters()).dtype)
    with torch.no_grad():
        lat, logits = model(batch, graph.num_nodes if steps is None else steps)
    kind = head_spec(graph.algorithm)[1]
    pred = head_predictions(kind, logits)[0].cpu().numpy()
    decoded = decode_head(inputs, graph.algorithm, pred) if inputs is not None else {"head": pred}
    return lat, decoded


# --------------------------------------------------------------------------
# pre-training


@dataclass
class NarTrainConfig:
    algorithms: tuple[str, ...] = tuple(a.value for a in ALGORITHMS)
    sizes: tuple[int, ...] = tuple(range(4, 17))
    samples_per_size: int = 1000
    eval_samples_per_size: int = 100
    eval_sizes: tuple[int, ...] = ()
    hidden: int = 128
    batch_size: int = 32
    learning_rate: float = 1e-3
    steps: int = 2000
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0


@dataclass
class NarTrainState:
    """Everything needed to continue a pre-training run bit-exactly."""

    step: int
    model: dict
    optimizer: dict
    curve: list


def _instance_pool(algorithms, sizes, per_size: int, seed: int, split: int) -> dict:
    pool = {}
    for a in algorithms:
        for n in sizes:
            seeds = np.random.SeedSequence([seed, split, ALGORITHMS.index(as_algorithm(a)), n]).generate_state(per_size)
            pool[(a, n)] = [generate_instance(a, n, int(s)) for s in seeds]
    return pool


def evaluate_nar(model: NAR, pool: dict, batch_size: int = 64) -> dict:
    """Mean elementwise head accuracy per (algorithm, size)."""
    dtype = next(model.parameters()).dtype
    out = {}
    model.eval()
    with torch.no_grad():
        for (a, n), items in pool.items():
            kind = head_spec(a)[1]
            hit = tot = 0
            # edge-pointer heads hold B * N^3 * k activations
            bs = max(1, min(batch_size, (1 << 22) // (n**3 * model.hidden)))
            for i in range(0, len(items), bs):
                batch = collate_instances(items[i : i + bs], dtype)
                _, logits = model(batch)
                h, t = elementwise_accuracy(kind, logits, batch.target)
                hit += h
                tot += t
            out[(a, n)] = hit / max(tot, 1)
    return out


def pretrain_nar(
    config: NarTrainConfig,
    resume: NarTrainState | None = None,
    on_log=None,
    on_checkpoint=None,
    stop_at: int | None = None,
) -> tuple[NAR, dict]:
    """Multi-task output-supervised training; returns the model and a metrics dict.

    Batch sampling is keyed on (seed, step), so a run resumed from a
    :class:`NarTrainState` follows the same trajectory as an uninterrupted one.
    ``stop_at`` ends training early (used to produce resumable snapshots).
    """
    torch.manual_seed(config.seed)
    model = NAR(NarConfig(hidden=config.hidden, algorithms=tuple(config.algorithms)))
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    start, curve = 0, []
    if resume is not None:
        model.load_state_dict(resume.model)
        opt.load_state_dict(resume.optimizer)
        start, curve = resume.step, list(resume.curve)
    pool = _instance_pool(config.algorithms, config.sizes, config.samples_per_size, config.seed, 0)
    cells = sorted(pool)
    t0 = time.time()
    model.train()
    end = config.steps if stop_at is None else min(stop_at, config.steps)
    for step in range(start, end):
        rng = np.random.default_rng([config.seed, step])
        a, n = cells[rng.integers(len(cells))]
        items = pool[(a, n)]
        idx = rng.choice(len(items), size=min(config.batch_size, len(items)), replace=False)
        batch = collate_instances([items[i] for i in idx])
        loss = nar_loss(model, batch)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(
                f"NAR loss became {loss.item()} at step {step} on {a} size {n}; "
                f"last finite losses: {curve[-5:]}"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append(loss.item())
        if on_log is not None and (step + 1) % config.log_every == 0:
            on_log(step + 1, float(np.mean(curve[-config.log_every :])))
        if on_checkpoint is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            snap = copy.deepcopy((model.state_dict(), opt.state_dict()))
            on_checkpoint(NarTrainState(step + 1, snap[0], snap[1], list(curve)))
    model.eval()
    metrics = {"loss_curve": curve, "train_seconds": time.time() - t0, "steps": end}
    metrics["state"] = NarTrainState(end, model.state_dict(), opt.state_dict(), list(curve))
    return model, metrics


def report_nar(model: NAR, config: NarTrainConfig) -> dict:
    """In-distribution and out-of-distribution head accuracy."""
    out = {"in_distribution": _str_keys(evaluate_nar(model, _instance_pool(
        config.algorithms, config.sizes, config.eval_samples_per_size, config.seed, 1)))}
    if config.eval_sizes:
        out["out_of_distribution"] = _str_keys(evaluate_nar(model, _instance_pool(
            config.algorithms, config.eval_sizes, config.eval_samples_per_size, config.seed, 2)))
    return out


def _str_keys(d: dict) -> dict:
    return {f"{a}@{n}": v for (a, n), v in d.items()}


def config_dict(config) -> dict:
    return asdict(config)
