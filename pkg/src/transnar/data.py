"""Paired text + graph datasets written as JSONL.

Layout under the dataset root::

    manifest.json             config, schema versions, sha256 of every file
    train/<algorithm>_<size>.jsonl   records tagged split=train|validation
    eval/<algorithm>_<size>.jsonl    held-out records (disjoint seeds)
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graphs import GraphSpec, schema_version, to_graph
from .tasks import ALGORITHMS, ProblemInstance, as_algorithm, generate_instance
from .text import VOCAB, render_text

TRAIN_GROUP, EVAL_GROUP = 0, 1


@dataclass
class DatasetConfig:
    algorithms: list[str] = field(default_factory=lambda: [a.value for a in ALGORITHMS])
    train_sizes: list[int] = field(default_factory=lambda: [4, 5, 6, 7, 8, 12])
    eval_sizes: list[int] = field(default_factory=lambda: [10, 12, 14])
    samples_per_size: int = 1000
    eval_samples_per_size: int = 100
    train_fraction: float = 0.7
    seed: int = 0


@dataclass
class Record:
    id: str
    split: str
    instance: ProblemInstance
    prompt: str
    target: str
    graph: GraphSpec

    @property
    def algorithm(self) -> str:
        return self.instance.algorithm.value

    @property
    def size(self) -> int:
        return self.instance.size

    def to_json(self) -> dict:
        inst = self.instance.to_json()
        return {
            "id": self.id,
            "algorithm": inst["algorithm"],
            "size": inst["size"],
            "seed": inst["seed"],
            "split": self.split,
            "inputs": inst["inputs"],
            "outputs": inst["outputs"],
            "text_prompt": self.prompt,
            "text_target": self.target,
            "graph": self.graph.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Record":
        inst = ProblemInstance.from_json(obj)
        return cls(obj["id"], obj["split"], inst, obj["text_prompt"], obj["text_target"],
                   GraphSpec.from_json(inst.algorithm, obj["graph"]))


def make_record(instance: ProblemInstance, record_id: str, split: str) -> Record:
    text = render_text(instance)
    return Record(record_id, split, instance, text.prompt, text.target, to_graph(instance))


def record_seeds(seed: int, group: int, algorithm, size: int, count: int, exclude=()) -> list[int]:
    """Per-record generator seeds; ``exclude`` keeps eval seeds disjoint from training ones."""
    ss = np.random.SeedSequence([seed, group, ALGORITHMS.index(as_algorithm(algorithm)), size])
    banned = set(exclude)
    out: list[int] = []
    extra = 0
    while len(out) < count:
        for s in ss.generate_state(count + extra):
            s = int(s)
            if s not in banned and s not in out:
                out.append(s)
            if len(out) == count:
                break
        extra += count
    return out


def _atomic_write(path: Path, lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.writelines(lines)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def generate_records(config: DatasetConfig, group: int) -> dict[tuple[str, int], list[Record]]:
    out = {}
    if group == TRAIN_GROUP:
        sizes, count = config.train_sizes, config.samples_per_size
    else:
        sizes, count = config.eval_sizes, config.eval_samples_per_size
    for alg in config.algorithms:
        alg = as_algorithm(alg).value
        for n in sizes:
            exclude = ()
            if group == EVAL_GROUP and n in config.train_sizes:
                exclude = record_seeds(config.seed, TRAIN_GROUP, alg, n, config.samples_per_size)
            seeds = record_seeds(config.seed, group, alg, n, count, exclude)
            n_train = int(round(config.train_fraction * count))
            recs = []
            for i, s in enumerate(seeds):
                if group == TRAIN_GROUP:
                    split = "train" if i < n_train else "validation"
                else:
                    split = "eval"
                recs.append(make_record(generate_instance(alg, n, s), f"{alg}-{n}-{split}-{i}", split))
            out[(alg, n)] = recs
    return out


def build_dataset(config: DatasetConfig, root: Path) -> dict:
    """Write the dataset and its manifest; returns the manifest."""
    root = Path(root)
    files = {}
    for group, sub in ((TRAIN_GROUP, "train"), (EVAL_GROUP, "eval")):
        for (alg, n), recs in generate_records(config, group).items():
            path = root / sub / f"{alg}_{n}.jsonl"
            _atomic_write(path, [json.dumps(r.to_json(), sort_keys=True) + "\n" for r in recs])
            files[str(path.relative_to(root))] = sha256_file(path)
    manifest = {
        "config": asdict(config),
        "graph_schema_version": schema_version(),
        "vocabulary_version": VOCAB.version,
        "files": dict(sorted(files.items())),
    }
    _atomic_write(root / "manifest.json", [json.dumps(manifest, indent=2, sort_keys=True) + "\n"])
    return manifest


def load_records(root: Path, group: str, algorithms=None, sizes=None, splits=None) -> list[Record]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    out = []
    for rel in manifest["files"]:
        sub, name = rel.split("/")
        if sub != group:
            continue
        alg, n = name[: -len(".jsonl")].rsplit("_", 1)
        if algorithms is not None and alg not in algorithms:
            continue
        if sizes is not None and int(n) not in sizes:
            continue
        with open(root / rel) as f:
            for line in f:
                rec = Record.from_json(json.loads(line))
                if splits is None or rec.split in splits:
                    out.append(rec)
    return out
