"""Instance generators and reference solvers for the seven algorithmic tasks.

Every instance is sampled from a seeded generator, rounded so that the text
and graph renderings describe the same numbers, and then solved by a plain
Python implementation of the classical algorithm.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class UnsupportedAlgorithmError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class AlgorithmId(str, enum.Enum):
    ARTICULATION_POINTS = "articulation_points"
    BINARY_SEARCH = "binary_search"
    INSERTION_SORT = "insertion_sort"
    JARVIS_MARCH = "jarvis_march"
    KMP_MATCHER = "kmp_matcher"
    MATRIX_CHAIN_ORDER = "matrix_chain_order"
    TASK_SCHEDULING = "task_scheduling"

    def __str__(self) -> str:
        return self.value


ALGORITHMS: tuple[AlgorithmId, ...] = tuple(AlgorithmId)


def as_algorithm(name: str | AlgorithmId) -> AlgorithmId:
    try:
        return AlgorithmId(name)
    except ValueError:
        raise UnsupportedAlgorithmError(f"unsupported algorithm: {name!r}") from None


# Value kinds used by both the text renderer and the output parser.
FLOAT_SCALAR = "float_scalar"
INT_SCALAR = "int_scalar"
FLOAT_VECTOR = "float_vector"
INT_VECTOR = "int_vector"
INT_MATRIX = "int_matrix"

KMP_ALPHABET = 4
KMP_PATTERN_LENGTH = 4


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str


@dataclass(frozen=True)
class TaskSchema:
    algorithm: AlgorithmId
    inputs: tuple[FieldSpec, ...]
    output: FieldSpec

    def output_shape(self, size: int) -> tuple[int, ...]:
        if self.output.kind in (INT_SCALAR, FLOAT_SCALAR):
            return ()
        if self.output.kind == INT_MATRIX:
            return (size, size)
        return (size,)

    def input_shape(self, name: str, size: int) -> tuple[int, ...]:
        if self.algorithm is AlgorithmId.KMP_MATCHER and name == "key":
            return (min(KMP_PATTERN_LENGTH, size),)
        kind = {f.name: f.kind for f in self.inputs}[name]
        if kind in (INT_SCALAR, FLOAT_SCALAR):
            return ()
        if kind == INT_MATRIX:
            return (size, size)
        return (size,)


def _schema(alg, inputs, output) -> TaskSchema:
    return TaskSchema(
        AlgorithmId(alg),
        tuple(FieldSpec(n, k) for n, k in inputs),
        FieldSpec(*output),
    )


SCHEMAS: dict[AlgorithmId, TaskSchema] = {
    s.algorithm: s
    for s in [
        _schema("articulation_points", [("A", INT_MATRIX)], ("is_cut", INT_VECTOR)),
        _schema(
            "binary_search",
            [("key", FLOAT_VECTOR), ("target", FLOAT_SCALAR)],
            ("return", INT_SCALAR),
        ),
        _schema("insertion_sort", [("key", FLOAT_VECTOR)], ("pred", FLOAT_VECTOR)),
        _schema(
            "jarvis_march",
            [("x", FLOAT_VECTOR), ("y", FLOAT_VECTOR)],
            ("in_hull", INT_VECTOR),
        ),
        _schema(
            "kmp_matcher",
            [("string", INT_VECTOR), ("key", INT_VECTOR)],
            ("match", INT_SCALAR),
        ),
        _schema("matrix_chain_order", [("p", FLOAT_VECTOR)], ("s", INT_MATRIX)),
        _schema(
            "task_scheduling",
            [("d", INT_VECTOR), ("w", FLOAT_VECTOR)],
            ("selected", INT_VECTOR),
        ),
    ]
}


@dataclass
class ProblemInstance:
    algorithm: AlgorithmId
    size: int
    inputs: dict[str, np.ndarray]
    outputs: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None

    @property
    def schema(self) -> TaskSchema:
        return SCHEMAS[self.algorithm]

    @property
    def output(self) -> np.ndarray:
        return self.outputs[self.schema.output.name]

    def to_json(self) -> dict:
        return {
            "algorithm": self.algorithm.value,
            "size": self.size,
            "seed": self.seed,
            "inputs": {k: v.tolist() for k, v in self.inputs.items()},
            "outputs": {k: v.tolist() for k, v in self.outputs.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ProblemInstance":
        alg = as_algorithm(obj["algorithm"])
        schema = SCHEMAS[alg]
        kinds = {f.name: f.kind for f in (*schema.inputs, schema.output)}
        conv = lambda name, v: np.asarray(v, dtype=_dtype(kinds[name]))  # noqa: E731
        return cls(
            alg,
            int(obj["size"]),
            {k: conv(k, v) for k, v in obj["inputs"].items()},
            {k: conv(k, v) for k, v in obj.get("outputs", {}).items()},
            obj.get("seed"),
        )

    def equals(self, other: "ProblemInstance") -> bool:
        if (self.algorithm, self.size) != (other.algorithm, other.size):
            return False
        for mine, theirs in ((self.inputs, other.inputs), (self.outputs, other.outputs)):
            if mine.keys() != theirs.keys():
                return False
            for k in mine:
                if mine[k].shape != theirs[k].shape or not np.array_equal(mine[k], theirs[k]):
                    return False
        return True


def _dtype(kind: str):
    return np.float64 if kind in (FLOAT_SCALAR, FLOAT_VECTOR) else np.int64


def round3(x) -> np.ndarray:
    """Round to 3 significant digits, never keeping more than 3 decimals.

    The result is what the text renderer prints, so parsing a rendered value
    gives back the identical double.
    """
    arr = np.asarray(x, dtype=np.float64)
    out = np.array([round(float(f"{v:.3g}"), 3) for v in arr.ravel()], dtype=np.float64)
    out[out == 0.0] = 0.0  # drop negative zeros
    return out.reshape(arr.shape)


# --------------------------------------------------------------------------
# reference solvers


def _binary_search(key: np.ndarray, target: float) -> int:
    # count of keys strictly below target, i.e. the insertion index
    lo, hi = 0, len(key)
    while lo < hi:
        mid = (lo + hi) // 2
        if key[mid] < target:
            lo = mid + 1
        else:
            hi = mid
    return lo


def _insertion_sort(key: np.ndarray) -> np.ndarray:
    out = [float(v) for v in key]
    for j in range(1, len(out)):
        cur = out[j]
        i = j - 1
        while i >= 0 and out[i] > cur:
            out[i + 1] = out[i]
            i -= 1
        out[i + 1] = cur
    return np.asarray(out, dtype=np.float64)


def sort_order(key: np.ndarray) -> np.ndarray:
    """Stable sorting permutation (equal keys keep index order)."""
    return np.argsort(np.asarray(key), kind="stable")


def _task_scheduling(d: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Greedy by decreasing weight; the heaviest task is always taken and a
    # later task is taken while the number of taken tasks is below its deadline.
    n = len(d)
    ans = np.zeros(n, dtype=np.int64)
    if n == 0:
        return ans
    order = np.argsort(-np.asarray(w), kind="stable")
    ans[order[0]] = 1
    t = 1
    for i in order[1:]:
        if t < d[i]:
            ans[i] = 1
            t += 1
    return ans


def _matrix_chain_order(p: np.ndarray) -> np.ndarray:
    n = len(p)
    m = np.zeros((n, n))
    s = np.zeros((n, n), dtype=np.int64)
    for length in range(2, n):
        for i in range(1, n - length + 1):
            j = i + length - 1
            m[i, j] = np.inf
            for k in range(i, j):
                q = m[i, k] + m[k + 1, j] + p[i - 1] * p[k] * p[j]
                if q < m[i, j]:
                    m[i, j] = q
                    s[i, j] = k
    return s


def _kmp_matcher(string: np.ndarray, key: np.ndarray) -> int:
    m = len(key)
    if m == 0:
        return 0
    pi = [0] * m
    k = 0
    for q in range(1, m):
        while k > 0 and key[k] != key[q]:
            k = pi[k - 1]
        if key[k] == key[q]:
            k += 1
        pi[q] = k
    q = 0
    for i, c in enumerate(string):
        while q > 0 and key[q] != c:
            q = pi[q - 1]
        if key[q] == c:
            q += 1
        if q == m:
            return i - m + 1
    return 0


def _articulation_points(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    adj = [[v for v in range(n) if v != u and (A[u, v] or A[v, u])] for u in range(n)]
    disc = [-1] * n
    low = [0] * n
    cut = np.zeros(n, dtype=np.int64)
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        root_children = 0
        # iterative Tarjan DFS: (vertex, parent, neighbour iterator index)
        stack = [(root, -1, 0)]
        while stack:
            u, parent, idx = stack.pop()
            if idx < len(adj[u]):
                stack.append((u, parent, idx + 1))
                v = adj[u][idx]
                if disc[v] == -1:
                    disc[v] = low[v] = timer
                    timer += 1
                    if u == root:
                        root_children += 1
                    stack.append((v, u, 0))
                elif v != parent:
                    low[u] = min(low[u], disc[v])
            elif parent != -1:
                low[parent] = min(low[parent], low[u])
                if parent != root and low[u] >= disc[parent]:
                    cut[parent] = 1
        if root_children > 1:
            cut[root] = 1
    return cut


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _jarvis_march(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Coordinates are multiples of 1e-3, so integer arithmetic is exact.
    pts = [(int(round(a * 1000)), int(round(b * 1000))) for a, b in zip(x, y)]
    n = len(pts)
    in_hull = np.zeros(n, dtype=np.int64)
    if n == 0:
        return in_hull
    start = min(range(n), key=lambda i: (pts[i][1], pts[i][0], i))
    cur = start
    while True:
        in_hull[cur] = 1
        cand = None
        for r in range(n):
            if pts[r] == pts[cur]:
                continue
            if cand is None:
                cand = r
                continue
            c = _cross(pts[cur], pts[cand], pts[r])
            if c < 0:
                cand = r
            elif c == 0:
                d_cand = (pts[cand][0] - pts[cur][0]) ** 2 + (pts[cand][1] - pts[cur][1]) ** 2
                d_r = (pts[r][0] - pts[cur][0]) ** 2 + (pts[r][1] - pts[cur][1]) ** 2
                if d_r > d_cand:
                    cand = r
        if cand is None or cand == start or in_hull[cand]:
            break
        cur = cand
    return in_hull


def _validate(alg: AlgorithmId, inputs: dict[str, np.ndarray]) -> int:
    schema = SCHEMAS[alg]
    names = [f.name for f in schema.inputs]
    if sorted(inputs) != sorted(names):
        raise SchemaError(f"{alg}: expected inputs {names}, got {sorted(inputs)}")
    first = np.asarray(inputs[names[0]])
    if first.ndim == 0:
        raise SchemaError(f"{alg}: first input must be an array")
    size = first.shape[0]
    for f in schema.inputs:
        arr = np.asarray(inputs[f.name])
        want = schema.input_shape(f.name, size)
        if arr.shape != want:
            raise SchemaError(f"{alg}: field {f.name!r} has shape {arr.shape}, expected {want}")
        if not np.all(np.isfinite(arr)):
            raise SchemaError(f"{alg}: field {f.name!r} has non-finite values")
    if alg is AlgorithmId.ARTICULATION_POINTS:
        A = np.asarray(inputs["A"])
        if not np.all((A == 0) | (A == 1)) or not np.array_equal(A, A.T):
            raise SchemaError("articulation_points: A must be binary and symmetric")
    if alg is AlgorithmId.KMP_MATCHER:
        for name in ("string", "key"):
            v = np.asarray(inputs[name])
            if np.any((v < 0) | (v >= KMP_ALPHABET)):
                raise SchemaError(f"kmp_matcher: {name} symbols must lie in [0, {KMP_ALPHABET})")
    if alg is AlgorithmId.TASK_SCHEDULING and np.any(np.asarray(inputs["d"]) < 1):
        raise SchemaError("task_scheduling: deadlines must be >= 1")
    return size


def solve(inputs: dict[str, np.ndarray], algorithm: AlgorithmId | str) -> dict[str, np.ndarray]:
    """Ground-truth outputs for ``inputs``; pure and deterministic."""
    alg = as_algorithm(algorithm)
    _validate(alg, inputs)
    g = {k: np.asarray(v) for k, v in inputs.items()}
    if alg is AlgorithmId.ARTICULATION_POINTS:
        out = _articulation_points(g["A"])
    elif alg is AlgorithmId.BINARY_SEARCH:
        out = np.asarray(_binary_search(g["key"], float(g["target"])), dtype=np.int64)
    elif alg is AlgorithmId.INSERTION_SORT:
        out = _insertion_sort(g["key"])
    elif alg is AlgorithmId.JARVIS_MARCH:
        out = _jarvis_march(g["x"], g["y"])
    elif alg is AlgorithmId.KMP_MATCHER:
        out = np.asarray(_kmp_matcher(g["string"], g["key"]), dtype=np.int64)
    elif alg is AlgorithmId.MATRIX_CHAIN_ORDER:
        out = _matrix_chain_order(g["p"])
    else:
        out = _task_scheduling(g["d"], g["w"])
    return {SCHEMAS[alg].output.name: out}


# --------------------------------------------------------------------------
# samplers

ARTICULATION_EDGE_PROB = 0.3


def _sample_articulation(rng, n):
    upper = np.triu(rng.random((n, n)) < ARTICULATION_EDGE_PROB).astype(np.int64)
    return {"A": upper | upper.T}


def _sample_binary_search(rng, n):
    key = np.sort(round3(rng.random(n)))
    return {"key": key, "target": round3(rng.random())}


def _sample_insertion_sort(rng, n):
    return {"key": round3(rng.random(n))}


def _sample_jarvis(rng, n):
    return {"x": round3(rng.standard_normal(n)), "y": round3(rng.standard_normal(n))}


def _sample_kmp(rng, n):
    m = min(KMP_PATTERN_LENGTH, n)
    return {
        "string": rng.integers(0, KMP_ALPHABET, size=n).astype(np.int64),
        "key": rng.integers(0, KMP_ALPHABET, size=m).astype(np.int64),
    }


def _sample_matrix_chain(rng, n):
    return {"p": round3(rng.random(n))}


def _sample_task_scheduling(rng, n):
    return {
        "d": rng.integers(1, n + 1, size=n).astype(np.int64),
        "w": round3(rng.random(n)),
    }


_SAMPLERS: dict[AlgorithmId, Callable[[np.random.Generator, int], dict]] = {
    AlgorithmId.ARTICULATION_POINTS: _sample_articulation,
    AlgorithmId.BINARY_SEARCH: _sample_binary_search,
    AlgorithmId.INSERTION_SORT: _sample_insertion_sort,
    AlgorithmId.JARVIS_MARCH: _sample_jarvis,
    AlgorithmId.KMP_MATCHER: _sample_kmp,
    AlgorithmId.MATRIX_CHAIN_ORDER: _sample_matrix_chain,
    AlgorithmId.TASK_SCHEDULING: _sample_task_scheduling,
}


def make_instance(algorithm, inputs: dict, seed: int | None = None) -> ProblemInstance:
    """Wrap explicit inputs into a solved instance."""
    alg = as_algorithm(algorithm)
    schema = SCHEMAS[alg]
    kinds = {f.name: f.kind for f in schema.inputs}
    if set(inputs) != set(kinds):
        raise SchemaError(f"{alg}: expected inputs {sorted(kinds)}, got {sorted(inputs)}")
    arrays = {f.name: np.asarray(inputs[f.name], dtype=_dtype(kinds[f.name])) for f in schema.inputs}
    size = _validate(alg, arrays)
    return ProblemInstance(alg, size, arrays, solve(arrays, alg), seed)


def generate_instance(algorithm, size: int, seed: int) -> ProblemInstance:
    alg = as_algorithm(algorithm)
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    rng = np.random.default_rng([seed, ALGORITHMS.index(alg), size])
    return make_instance(alg, _SAMPLERS[alg](rng, size), seed)
