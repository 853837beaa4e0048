"""Run orchestration: NAR pre-training, LM / TransNAR fine-tuning, evaluation, report.

A run directory looks like::

    config.yaml          resolved configuration, written before anything else
    data/                dataset (unless ``data_root`` points elsewhere)
    checkpoints/         nar.pt, <variant>-seed<k>.pt and their run records
    generations/         raw greedy decodes, one JSONL per (variant, seed)
    scores/              ScoreRecords, one JSONL per (variant, seed)
    report/              table.txt, report.json, per-score PNGs
"""

from __future__ import annotations

import json
import logging
import os
import subprocess
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, parameter_checksum, save_checkpoint
from .config import ExperimentConfig
from .data import Record, build_dataset, load_records
from .evaluation import (
    ScoreRecord,
    aggregate,
    format_table,
    plot_report,
    read_records,
    score_generation,
    variant_deltas,
    write_records,
)
from .fusion import TransNAR, frozen_latents
from .lm import LMConfig, causal_mask, sample_positions, token_loss
from .nar import NAR, NarConfig, NarTrainConfig, NarTrainState, collate_graphs, pretrain_nar, report_nar
from .tasks import ALGORITHMS, as_algorithm, generate_instance
from .text import VOCAB, max_target_chars, render_text

log = logging.getLogger("transnar")

DETERMINISTIC_ENV = "TRANSNAR_DETERMINISTIC"


class MissingPrerequisiteError(RuntimeError):
    """An upstream artifact (dataset, NAR checkpoint, scores) is absent."""


class FrozenParameterError(RuntimeError):
    pass


def deterministic_requested(default: bool = True) -> bool:
    raw = os.environ.get(DETERMINISTIC_ENV)
    if raw is None:
        return default
    return raw.strip().lower() not in ("0", "false", "no", "off", "")


def set_deterministic(enabled: bool) -> None:
    torch.use_deterministic_algorithms(enabled)


def source_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


@dataclass
class RunRecord:
    run_id: str
    config_hash: str
    checkpoints: list[str] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    source_revision: str = ""
    steps: int = 0
    skipped_overlong: int = 0
    nar_checksum: str = ""
    gates: list = field(default_factory=list)

    def write(self, path: Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")


# --------------------------------------------------------------------------
# paths and config plumbing


def data_root(cfg: ExperimentConfig, out: Path) -> Path:
    return Path(cfg.data_root) if cfg.data_root else Path(out) / "data"


def nar_path(out: Path) -> Path:
    return Path(out) / "checkpoints" / "nar.pt"


def model_path(out: Path, variant: str, seed: int) -> Path:
    return Path(out) / "checkpoints" / f"{variant}-seed{seed}.pt"


def lm_config(cfg: ExperimentConfig) -> LMConfig:
    s = cfg.lm
    return LMConfig(
        width=s.width,
        layers=s.layers,
        heads=s.heads,
        ffn_mult=s.ffn_mult,
        context=s.context,
        max_position=s.max_position,
        tie_embeddings=s.tie_embeddings,
    )


def nar_train_config(cfg: ExperimentConfig, seed: int = 0) -> NarTrainConfig:
    s = cfg.nar
    return NarTrainConfig(
        algorithms=tuple(as_algorithm(a).value for a in cfg.data.algorithms),
        sizes=tuple(s.sizes),
        samples_per_size=s.samples_per_size,
        eval_samples_per_size=s.eval_samples_per_size,
        eval_sizes=tuple(s.eval_sizes),
        hidden=s.hidden,
        batch_size=s.batch_size,
        learning_rate=s.learning_rate,
        steps=s.steps,
        seed=seed,
        log_every=s.log_every,
        checkpoint_every=s.checkpoint_every,
    )


def build_data(cfg: ExperimentConfig, out: Path) -> dict:
    return build_dataset(cfg.data, data_root(cfg, out))


def _require_data(cfg: ExperimentConfig, out: Path) -> Path:
    root = data_root(cfg, out)
    if not (root / "manifest.json").exists():
        raise MissingPrerequisiteError(f"no dataset at {root}; run gen-data first")
    return root


# --------------------------------------------------------------------------
# phase 1


def run_phase1(cfg: ExperimentConfig, out: Path, seed: int = 0, resume: bool = True) -> dict:
    """Pre-train the NAR; writes ``checkpoints/nar.pt`` and ``report/nar.json``."""
    out = Path(out)
    tcfg = nar_train_config(cfg, seed)
    partial = out / "checkpoints" / "nar-partial.pt"
    state = None
    if resume and partial.exists():
        state = NarTrainState(**load_checkpoint(partial, "nar-partial")["state"])
        log.info("resuming NAR pre-training at step %d", state.step)

    def snapshot(st: NarTrainState):
        save_checkpoint(partial, "nar-partial", asdict(tcfg), asdict(st))

    model, metrics = pretrain_nar(
        tcfg, resume=state, on_log=lambda s, l: log.info("nar step %d loss %.4f", s, l), on_checkpoint=snapshot
    )
    report = report_nar(model, tcfg)
    report.update(train_seconds=metrics["train_seconds"], final_loss=metrics["loss_curve"][-1])
    save_checkpoint(
        nar_path(out), "nar", {"nar": asdict(model.config), "train": asdict(tcfg)}, model.state_dict(),
        checksum=parameter_checksum(model), loss_curve=metrics["loss_curve"],
    )
    if partial.exists():
        partial.unlink()
    (out / "report").mkdir(parents=True, exist_ok=True)
    (out / "report" / "nar.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def load_nar(path: Path) -> NAR:
    if not Path(path).exists():
        raise MissingPrerequisiteError(f"no NAR checkpoint at {path}; run pretrain-nar first")
    ck = load_checkpoint(path, "nar")
    c = ck["config"]["nar"]
    model = NAR(NarConfig(hidden=c["hidden"], algorithms=tuple(c["algorithms"]),
                          gate_bias=c["gate_bias"], layer_norm=c["layer_norm"]))
    model.load_state_dict(ck["state"])
    if parameter_checksum(model) != ck["checksum"]:
        raise CheckpointError(f"{path}: parameters do not match the stored checksum")
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


# --------------------------------------------------------------------------
# LM pre-fitting for the "pretrained" initialization


def pretrain_lm(cfg: ExperimentConfig, seed: int) -> dict:
    """Fit the bare LM on prompt text only (never on answers).

    This is a stand-in for a generally pretrained model: it knows the surface
    syntax of problem statements but has never seen a solution.
    """
    torch.manual_seed(seed)
    model = TransNAR(lm_config(cfg), fusion=False).lm
    opt = torch.optim.Adam(model.parameters(), lr=cfg.train.learning_rate)
    algs = [as_algorithm(a) for a in cfg.data.algorithms]
    sizes = cfg.data.train_sizes
    for step in range(cfg.train.pretrain_steps):
        rng = np.random.default_rng([seed, 7, step])
        texts = []
        for _ in range(cfg.train.batch_size):
            a = algs[rng.integers(len(algs))]
            inst = generate_instance(a, int(rng.choice(sizes)), int(rng.integers(2**31)))
            texts.append(render_text(inst).prompt)
        ids = [VOCAB.encode(t, eos=False) for t in texts]
        tokens, mask = _pad_right(ids, [np.ones(len(i), dtype=bool) for i in ids])
        loss = token_loss(model(tokens), tokens, mask)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return model.state_dict()


# --------------------------------------------------------------------------
# phase 2


def _pad_right(ids: list[list[int]], masks: list[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    t = max(len(i) for i in ids)
    tokens = np.full((len(ids), t), VOCAB.pad_id, dtype=np.int64)
    mask = np.zeros((len(ids), t), dtype=bool)
    for r, (i, m) in enumerate(zip(ids, masks)):
        tokens[r, : len(i)] = i
        mask[r, : len(i)] = m
    return torch.from_numpy(tokens), torch.from_numpy(mask)


def encode_example(rec: Record) -> tuple[list[int], np.ndarray]:
    """Token ids for BOS+prompt+target+EOS and the mask of supervised tokens."""
    prompt = VOCAB.encode(rec.prompt, bos=True, eos=False)
    full = prompt + VOCAB.encode(rec.target, bos=False, eos=True)
    mask = np.zeros(len(full), dtype=bool)
    mask[len(prompt):] = True
    return full, mask


def epoch_batches(records: list[Record], batch_size: int, rng: np.random.Generator) -> list[list[Record]]:
    """Shuffle within (algorithm, size) buckets, chunk, then shuffle the chunks."""
    buckets = defaultdict(list)
    for r in records:
        buckets[(r.algorithm, r.size)].append(r)
    batches = []
    for key in sorted(buckets):
        recs = buckets[key]
        order = rng.permutation(len(recs))
        batches += [[recs[j] for j in order[i : i + batch_size]] for i in range(0, len(recs), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def batch_positions(lengths: int, rows: int, cfg: ExperimentConfig, rng, randomized: bool) -> torch.Tensor:
    pos = [sample_positions(lengths, cfg.lm.max_position, rng, deterministic=not randomized) for _ in range(rows)]
    return torch.from_numpy(np.stack(pos))


def build_model(cfg: ExperimentConfig, variant: str, seed: int, nar: NAR | None, lm_state: dict | None = None) -> TransNAR:
    torch.manual_seed(seed)
    model = TransNAR(
        lm_config(cfg),
        fusion=variant == "transnar",
        nar_width=None if nar is None else nar.hidden,
        adapter=cfg.lm.adapter,
    )
    if lm_state is not None:
        model.lm.load_state_dict(lm_state)
    return model


def _latents(model: TransNAR, nar: NAR | None, batch: list[Record]):
    if not model.fused:
        return None, None
    g = collate_graphs([r.graph for r in batch])
    return frozen_latents(nar, g), g.mask


def train_steps(model, nar, cfg: ExperimentConfig, records: list[Record], seed: int, on_step=None) -> dict:
    """The fine-tuning loop shared by both variants.

    Data order depends only on ``seed`` so baseline and TransNAR runs see
    identical batches. Examples longer than the context are skipped and counted.
    """
    opt = torch.optim.Adam(model.parameters(), lr=cfg.train.learning_rate)
    randomized = cfg.positional == "randomized-rope"
    fits = [r for r in records if len(encode_example(r)[0]) <= cfg.lm.context]
    skipped = len(records) - len(fits)
    epoch_losses, step = [], 0
    model.train()
    for epoch in range(cfg.train.epochs):
        rng = np.random.default_rng([seed, 1, epoch])
        total, count = 0.0, 0
        for batch in epoch_batches(fits, cfg.train.batch_size, rng):
            if cfg.train.max_steps and step >= cfg.train.max_steps:
                break
            encoded = [encode_example(r) for r in batch]
            tokens, mask = _pad_right([e[0] for e in encoded], [e[1] for e in encoded])
            positions = batch_positions(tokens.shape[1], len(batch), cfg, rng, randomized)
            latents, node_mask = _latents(model, nar, batch)
            loss = token_loss(model(tokens, positions, latents, node_mask), tokens, mask)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"fine-tuning loss is {loss.item()} at step {step}")
            opt.zero_grad()
            loss.backward()
            if cfg.train.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.train.grad_clip)
            opt.step()
            total += loss.item()
            count += 1
            step += 1
            if on_step is not None:
                on_step(step, loss.item())
        if count:
            epoch_losses.append(total / count)
    model.eval()
    return {"epoch_losses": epoch_losses, "steps": step, "skipped_overlong": skipped}


def run_phase2(cfg: ExperimentConfig, out: Path, seed: int, variant: str | None = None) -> RunRecord:
    """Fine-tune one (variant, seed) cell and checkpoint it."""
    out = Path(out)
    variant = variant or cfg.variant
    root = _require_data(cfg, out)
    nar = load_nar(nar_path(out)) if variant == "transnar" else None
    before = parameter_checksum(nar) if nar is not None else ""

    lm_state = None
    if cfg.lm_init == "pretrained":
        lm_file = out / "checkpoints" / f"lm-pretrained-seed{seed}.pt"
        if lm_file.exists():
            lm_state = load_checkpoint(lm_file, "lm")["state"]
        else:
            lm_state = pretrain_lm(cfg, seed)
            save_checkpoint(lm_file, "lm", asdict(cfg.lm), lm_state)

    records = load_records(root, "train", cfg.data.algorithms, cfg.data.train_sizes, ["train"])
    model = build_model(cfg, variant, seed, nar, lm_state)
    t0 = time.time()
    stats = train_steps(
        model, nar, cfg, records, seed,
        on_step=lambda s, l: s % cfg.train.log_every == 0 and log.info("%s seed %d step %d loss %.4f", variant, seed, s, l),
    )
    if nar is not None and parameter_checksum(nar) != before:
        raise FrozenParameterError("NAR parameters changed during fine-tuning")

    path = model_path(out, variant, seed)
    rec = RunRecord(
        run_id=f"{variant}-seed{seed}",
        config_hash=cfg.digest(),
        checkpoints=[str(path.relative_to(out))],
        epoch_losses=stats["epoch_losses"],
        wall_clock=time.time() - t0,
        source_revision=source_revision(),
        steps=stats["steps"],
        skipped_overlong=stats["skipped_overlong"],
        nar_checksum=before,
        gates=model.gates(),
    )
    save_checkpoint(path, "transnar", cfg.to_dict(), model.state_dict(), variant=variant, seed=seed, run=asdict(rec))
    rec.write(path.with_suffix(".json"))
    return rec


def load_model(cfg: ExperimentConfig, out: Path, variant: str, seed: int) -> tuple[TransNAR, NAR | None]:
    path = model_path(out, variant, seed)
    if not path.exists():
        raise MissingPrerequisiteError(f"no trained model at {path}; run train first")
    ck = load_checkpoint(path, "transnar")
    nar = load_nar(nar_path(out)) if variant == "transnar" else None
    model = build_model(cfg, variant, seed, nar)
    model.load_state_dict(ck["state"])
    model.eval()
    return model, nar


# --------------------------------------------------------------------------
# decoding and evaluation


def render_ids(ids) -> str:
    """Text of generated ids; stray specials stay visible so they fail parsing."""
    return "".join(VOCAB.tokens[i] for i in ids)


@torch.no_grad()
def greedy_decode(
    model: TransNAR, nar: NAR | None, batch: list[Record], cfg: ExperimentConfig, randomized: bool, seed: int = 0
) -> list[tuple[str, bool]]:
    """Greedy answers for one same-task batch as (text, overflowed) pairs.

    Prompts are left-padded so every row decodes in lockstep through a KV cache.
    """
    prompts = [VOCAB.encode(r.prompt, bos=True, eos=False) for r in batch]
    p = max(len(x) for x in prompts)
    budget = max(max_target_chars(r.algorithm, r.size) for r in batch) + cfg.eval.budget_slack
    budget = max(0, min(budget, cfg.lm.context - p))
    b = len(batch)
    tokens = torch.full((b, p), VOCAB.pad_id, dtype=torch.long)
    valid = torch.zeros((b, p + budget), dtype=torch.bool)
    positions = torch.zeros((b, p + budget), dtype=torch.long)
    for i, (ids, rec) in enumerate(zip(prompts, batch)):
        off = p - len(ids)
        tokens[i, off:] = torch.tensor(ids)
        valid[i, off:] = True
        rng = np.random.default_rng([seed, 2, int(rec.instance.seed), rec.size, ALGORITHMS.index(rec.instance.algorithm)])
        n = len(ids) + budget
        positions[i, off:] = torch.from_numpy(sample_positions(n, cfg.lm.max_position, rng, deterministic=not randomized))

    latents, node_mask = _latents(model, nar, batch)
    cache = [{} for _ in range(model.lm.cfg.layers)]
    allowed = causal_mask(p, 0)[0][None] & valid[:, None, :p]
    logits = model(tokens, positions[:, :p], latents, node_mask, allowed=allowed, cache=cache)
    out = [[] for _ in range(b)]
    done = torch.zeros(b, dtype=torch.bool)
    for t in range(budget):
        nxt = logits[:, -1].argmax(-1)
        for i in range(b):
            if not done[i]:
                if nxt[i].item() == VOCAB.eos_id:
                    done[i] = True
                else:
                    out[i].append(nxt[i].item())
        if bool(done.all()) or t == budget - 1:
            break
        k = p + t + 1
        allowed = valid[:, None, :k]
        logits = model(nxt[:, None], positions[:, k - 1 : k], latents, node_mask, allowed=allowed, cache=cache)
    return [(render_ids(o), not bool(d)) for o, d in zip(out, done)]


def evaluate_checkpoint(cfg: ExperimentConfig, out: Path, variant: str, seed: int) -> list[ScoreRecord]:
    """Greedy-decode every eval record; persist generations and scores."""
    out = Path(out)
    root = _require_data(cfg, out)
    model, nar = load_model(cfg, out, variant, seed)
    records = load_records(root, "eval", cfg.data.algorithms, cfg.data.eval_sizes, cfg.eval.splits)
    randomized = cfg.eval_positions == "randomized"
    buckets = defaultdict(list)
    for r in records:
        buckets[(r.algorithm, r.size)].append(r)
    gens, scores = [], []
    for key in sorted(buckets):
        recs = buckets[key]
        for i in range(0, len(recs), cfg.eval.batch_size):
            batch = recs[i : i + cfg.eval.batch_size]
            for rec, (raw, overflow) in zip(batch, greedy_decode(model, nar, batch, cfg, randomized, seed)):
                gens.append({"id": rec.id, "raw": raw, "overflow": overflow, "target": rec.target})
                scores.append(score_generation(raw, rec.instance, seed, variant, rec.id, overflow))
    gen_path = out / "generations" / f"{variant}-seed{seed}.jsonl"
    gen_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = gen_path.with_suffix(".tmp")
    tmp.write_text("".join(json.dumps(g, sort_keys=True) + "\n" for g in gens))
    tmp.replace(gen_path)
    write_records(scores, out / "scores" / f"{variant}-seed{seed}.jsonl")
    return scores


# --------------------------------------------------------------------------
# report


def run_report(cfg: ExperimentConfig, out: Path, plots: bool = True) -> dict:
    out = Path(out)
    files = sorted((out / "scores").glob("*.jsonl")) if (out / "scores").exists() else []
    if not files:
        raise MissingPrerequisiteError(f"no scores under {out / 'scores'}; run evaluate first")
    records = [r for f in files for r in read_records(f)]
    expected = {
        "algorithms": [as_algorithm(a).value for a in cfg.data.algorithms],
        "sizes": list(cfg.data.eval_sizes),
        "variants": list(cfg.variants),
        "seeds": list(cfg.train.seeds),
    }
    report = aggregate(records, expected)
    report["deltas"] = variant_deltas(report)
    report["chain_violations"] = sum(not r.check_chain() for r in records)
    rdir = out / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    (rdir / "table.txt").write_text(format_table(report) + "\n")
    if plots and report["rows"]:
        plot_report(report, rdir)
    return report


def run_experiment(cfg: ExperimentConfig, out: Path, plots: bool = True) -> dict:
    """Everything end to end: data, NAR, every (variant, seed) cell, report."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    if not (data_root(cfg, out) / "manifest.json").exists():
        build_data(cfg, out)
    if "transnar" in cfg.variants and not nar_path(out).exists():
        run_phase1(cfg, out)
    for seed in cfg.train.seeds:
        for variant in cfg.variants:
            run_phase2(cfg, out, seed, variant)
            evaluate_checkpoint(cfg, out, variant, seed)
    return run_report(cfg, out, plots)
