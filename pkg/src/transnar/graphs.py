"""Graph form of task instances and the graph-space supervision targets.

Feature layouts live in ``resources/graph_schema.json``. The encoder and the
decoder here are both driven by that file, so an instance survives the round
trip ``from_graph(to_graph(x))`` exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .tasks import (
    SCHEMAS,
    AlgorithmId,
    ProblemInstance,
    SchemaError,
    as_algorithm,
    make_instance,
    sort_order,
)

NODE_POINTER = "node_pointer"
NODE_MASK = "node_mask"
GRAPH_CATEGORICAL = "graph_categorical"
GRAPH_CATEGORICAL_PLUS_ONE = "graph_categorical_plus_one"
EDGE_POINTER = "edge_pointer"


@dataclass
class GraphSpec:
    algorithm: AlgorithmId
    num_nodes: int
    node_features: np.ndarray  # (N, l)
    edge_features: np.ndarray  # (N, N, l_e)
    graph_features: np.ndarray  # (l_g,)
    adjacency: np.ndarray  # (N, N) in {0, 1}

    def to_json(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "node_features": self.node_features.tolist(),
            "edge_features": self.edge_features.tolist(),
            "graph_features": self.graph_features.tolist(),
            "adjacency": self.adjacency.tolist(),
        }

    @classmethod
    def from_json(cls, algorithm, obj: dict) -> "GraphSpec":
        alg = as_algorithm(algorithm)
        layout = graph_layout(alg)
        n = int(obj["num_nodes"])
        return cls(
            alg,
            n,
            np.asarray(obj["node_features"], dtype=np.float64).reshape(n, len(layout["node"])),
            np.asarray(obj["edge_features"], dtype=np.float64).reshape(n, n, len(layout["edge"])),
            np.asarray(obj["graph_features"], dtype=np.float64).reshape(len(layout["graph"])),
            np.asarray(obj["adjacency"], dtype=np.int64).reshape(n, n),
        )


@lru_cache(maxsize=None)
def _schema_file() -> dict:
    text = resources.files("transnar.resources").joinpath("graph_schema.json").read_text()
    return json.loads(text)


def schema_version() -> int:
    return _schema_file()["version"]


def graph_layout(algorithm) -> dict:
    return _schema_file()["tasks"][as_algorithm(algorithm).value]


def feature_dims(algorithm) -> tuple[int, int, int]:
    layout = graph_layout(algorithm)
    return len(layout["node"]), len(layout["edge"]), len(layout["graph"])


def head_spec(algorithm) -> tuple[str, str]:
    ((name, kind),) = graph_layout(algorithm)["heads"].items()
    return name, kind


def _node_channel(channel: str, inputs: dict, n: int) -> np.ndarray:
    if channel == "pos":
        return np.arange(n, dtype=np.float64) / n
    if channel.endswith("?"):
        length = len(inputs[channel[:-1]])
        return (np.arange(n) < length).astype(np.float64)
    if "=" in channel:
        name, sym = channel.split("=")
        col = np.zeros(n)
        vals = np.asarray(inputs[name])
        col[: len(vals)] = vals == int(sym)
        return col
    return np.asarray(inputs[channel], dtype=np.float64)


def to_graph(instance: ProblemInstance) -> GraphSpec:
    layout = graph_layout(instance.algorithm)
    n = instance.size
    inputs = instance.inputs
    node = np.stack([_node_channel(c, inputs, n) for c in layout["node"]], axis=1)
    if layout["edge"]:
        edge = np.stack([np.asarray(inputs[c], dtype=np.float64) for c in layout["edge"]], axis=-1)
    else:
        edge = np.zeros((n, n, 0))
    graph = np.asarray([float(inputs[c]) for c in layout["graph"]], dtype=np.float64)
    if layout["adjacency"] == "full":
        adjacency = np.ones((n, n), dtype=np.int64)
    else:
        A = np.asarray(inputs[layout["adjacency"]], dtype=np.int64)
        adjacency = ((A + A.T) > 0).astype(np.int64)
    return GraphSpec(instance.algorithm, n, node, edge, graph, adjacency)


def from_graph(graph: GraphSpec) -> ProblemInstance:
    """Decode a graph back to its (solved) instance using the schema file."""
    alg = graph.algorithm
    layout = graph_layout(alg)
    schema = SCHEMAS[alg]
    n = graph.num_nodes
    if graph.node_features.shape != (n, len(layout["node"])):
        raise SchemaError(f"{alg}: node features have shape {graph.node_features.shape}")
    cols = {c: graph.node_features[:, i] for i, c in enumerate(layout["node"])}
    inputs: dict = {}
    for f in schema.inputs:
        if f.name in layout["graph"]:
            inputs[f.name] = graph.graph_features[layout["graph"].index(f.name)]
        elif f.name in layout["edge"]:
            inputs[f.name] = np.rint(graph.edge_features[:, :, layout["edge"].index(f.name)]).astype(np.int64)
        elif f.name in cols:
            inputs[f.name] = cols[f.name]
        else:
            symbols = sorted(int(c.split("=")[1]) for c in cols if c.startswith(f.name + "="))
            onehot = np.stack([cols[f"{f.name}={s}"] for s in symbols], axis=1)
            length = int(cols[f.name + "?"].sum()) if f.name + "?" in cols else n
            inputs[f.name] = np.asarray(symbols)[onehot.argmax(axis=1)][:length]
    return make_instance(alg, inputs)


# --------------------------------------------------------------------------
# graph-space supervision


def head_target(instance: ProblemInstance) -> np.ndarray:
    """Integer class targets for the NAR output head of this task.

    Sorting is supervised through predecessor pointers (the first element in
    sorted order points at itself); all other tasks use their output directly.
    """
    _, kind = head_spec(instance.algorithm)
    out = np.asarray(instance.output)
    if instance.algorithm is AlgorithmId.INSERTION_SORT:
        order = sort_order(instance.inputs["key"])
        pred = np.empty(instance.size, dtype=np.int64)
        pred[order[0]] = order[0]
        pred[order[1:]] = order[:-1]
        return pred
    if kind in (GRAPH_CATEGORICAL, GRAPH_CATEGORICAL_PLUS_ONE):
        return out.astype(np.int64).reshape(())
    return out.astype(np.int64)


def pointers_to_order(pred: np.ndarray) -> np.ndarray:
    """Walk predecessor pointers into a permutation of node indices.

    Broken chains are tolerated: unreachable nodes are appended in index order,
    so the result is always a permutation.
    """
    n = len(pred)
    heads = [u for u in range(n) if pred[u] == u]
    order: list[int] = []
    seen = np.zeros(n, dtype=bool)
    cur = heads[0] if heads else None
    while cur is not None and not seen[cur]:
        order.append(cur)
        seen[cur] = True
        nxt = [v for v in range(n) if pred[v] == cur and v != cur and not seen[v]]
        cur = nxt[0] if nxt else None
    order.extend(u for u in range(n) if not seen[u])
    return np.asarray(order, dtype=np.int64)


def decode_head(instance_inputs: dict, algorithm, head: np.ndarray) -> dict[str, np.ndarray]:
    """Turn class predictions of the NAR head into task outputs."""
    alg = as_algorithm(algorithm)
    name = SCHEMAS[alg].output.name
    head = np.asarray(head)
    if alg is AlgorithmId.INSERTION_SORT:
        key = np.asarray(instance_inputs["key"], dtype=np.float64)
        return {name: key[pointers_to_order(head)]}
    return {name: head.astype(np.int64)}
