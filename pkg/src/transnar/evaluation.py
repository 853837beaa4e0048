"""Shape, parse and CLRS scores plus their aggregation into comparison tables."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .tasks import FLOAT_SCALAR, FLOAT_VECTOR, SCHEMAS, ProblemInstance
from .text import ParsedOutput, parse_output

FLOAT_TOLERANCE = 1e-3
REGIMES = {10: "interpolation", 12: "in-distribution", 14: "extrapolation"}
SCORES = ("clrs_score", "shape_score", "parse_score")


@dataclass
class ScoreRecord:
    algorithm: str
    size: int
    seed: int
    variant: str
    shape_score: int
    parse_score: int
    clrs_score: float
    example_id: str = ""
    raw: str = ""

    def check_chain(self) -> bool:
        if self.parse_score == 0 and self.shape_score != 0:
            return False
        return not (self.shape_score == 0 and self.clrs_score != 0)


def parse_score(raw: str, algorithm) -> int:
    return int(parse_output(raw, algorithm).ok)


def shape_score(parsed: ParsedOutput, instance: ProblemInstance) -> int:
    if not parsed.ok:
        return 0
    return int(tuple(np.shape(parsed.value)) == SCHEMAS[instance.algorithm].output_shape(instance.size))


def clrs_score(parsed: ParsedOutput, instance: ProblemInstance) -> float:
    """Fraction of output elements equal to the ground truth.

    Floats count as equal within ``FLOAT_TOLERANCE``; integers must match
    exactly. Wrong shapes score 0.
    """
    if not shape_score(parsed, instance):
        return 0.0
    pred = np.asarray(parsed.value).ravel()
    truth = np.asarray(instance.output).ravel()
    if truth.size == 0:
        return 1.0
    if SCHEMAS[instance.algorithm].output.kind in (FLOAT_SCALAR, FLOAT_VECTOR):
        # slack absorbs binary rounding at the decimal boundary (|0.082 - 0.081| > 1e-3 in float64)
        hits = np.abs(pred.astype(np.float64) - truth) <= FLOAT_TOLERANCE + 1e-12
    else:
        hits = pred == truth
    return float(hits.mean())


def score_generation(raw: str, instance: ProblemInstance, seed: int, variant: str, example_id: str = "",
                     overflow: bool = False) -> ScoreRecord:
    """Score one raw generation; ``overflow`` marks decoding that hit its budget without EOS."""
    parsed = ParsedOutput("parse_failure", None, "no_eos") if overflow else parse_output(raw, instance.algorithm)
    return ScoreRecord(
        algorithm=instance.algorithm.value,
        size=instance.size,
        seed=seed,
        variant=variant,
        shape_score=shape_score(parsed, instance),
        parse_score=int(parsed.ok),
        clrs_score=clrs_score(parsed, instance),
        example_id=example_id,
        raw=raw,
    )


# --------------------------------------------------------------------------
# aggregation


def aggregate(records: Iterable[ScoreRecord], expected: dict | None = None) -> dict:
    """Mean and std across seeds of the per-seed mean scores.

    ``expected`` may list the configured ``algorithms``, ``sizes``,
    ``variants`` and ``seeds``; absent cells are reported under ``missing``.
    """
    per_seed: dict = defaultdict(lambda: defaultdict(list))
    for r in records:
        key = (r.algorithm, r.size, r.variant)
        for s in SCORES:
            per_seed[key][(r.seed, s)].append(getattr(r, s))
    rows = []
    for (alg, size, variant) in sorted(per_seed):
        cell = per_seed[(alg, size, variant)]
        seeds = sorted({seed for seed, _ in cell})
        row = {
            "algorithm": alg,
            "size": size,
            "regime": REGIMES.get(size, "other"),
            "variant": variant,
            "seeds": seeds,
        }
        for s in SCORES:
            vals = np.array([np.mean(cell[(seed, s)]) for seed in seeds])
            row[f"{s}_mean"] = float(vals.mean())
            row[f"{s}_std"] = float(vals.std())
        rows.append(row)
    missing = []
    if expected:
        for alg in expected["algorithms"]:
            for size in expected["sizes"]:
                for variant in expected["variants"]:
                    for seed in expected["seeds"]:
                        cell = per_seed.get((alg, size, variant))
                        if cell is None or (seed, "clrs_score") not in cell:
                            missing.append({"algorithm": alg, "size": size, "variant": variant, "seed": seed})
    return {"rows": rows, "missing": missing}


def format_table(report: dict) -> str:
    header = f"{'algorithm':<20} {'size':>4} {'regime':<16} {'variant':<9}" + "".join(
        f" {s.replace('_score', ''):>15}" for s in SCORES
    )
    lines = [header, "-" * len(header)]
    for r in report["rows"]:
        cells = "".join(f" {r[s + '_mean']:>7.3f}±{r[s + '_std']:<7.3f}" for s in SCORES)
        lines.append(f"{r['algorithm']:<20} {r['size']:>4} {r['regime']:<16} {r['variant']:<9}{cells}")
    for m in report["missing"]:
        lines.append(f"MISSING {m['algorithm']} size={m['size']} variant={m['variant']} seed={m['seed']}")
    return "\n".join(lines)


def variant_deltas(report: dict, a: str = "transnar", b: str = "baseline") -> list[dict]:
    """Per-cell mean differences ``a - b`` for every score."""
    idx = {(r["algorithm"], r["size"], r["variant"]): r for r in report["rows"]}
    out = []
    for (alg, size, variant), r in sorted(idx.items()):
        other = idx.get((alg, size, b))
        if variant != a or other is None:
            continue
        out.append({"algorithm": alg, "size": size, **{
            f"{s}_delta": r[f"{s}_mean"] - other[f"{s}_mean"] for s in SCORES}})
    return out


def plot_report(report: dict, out_dir: Path) -> list[Path]:
    """Bar plots (one figure per score, one panel per regime)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = report["rows"]
    sizes = sorted({r["size"] for r in rows})
    variants = sorted({r["variant"] for r in rows})
    algs = sorted({r["algorithm"] for r in rows})
    paths = []
    for score in SCORES:
        fig, axes = plt.subplots(1, max(len(sizes), 1), figsize=(4.5 * max(len(sizes), 1), 3.6), squeeze=False)
        for ax, size in zip(axes[0], sizes):
            width = 0.8 / max(len(variants), 1)
            for j, variant in enumerate(variants):
                means, stds = [], []
                for alg in algs:
                    r = next((r for r in rows if (r["algorithm"], r["size"], r["variant"]) == (alg, size, variant)), None)
                    means.append(r[f"{score}_mean"] if r else np.nan)
                    stds.append(r[f"{score}_std"] if r else 0.0)
                x = np.arange(len(algs)) + j * width
                ax.bar(x, means, width, yerr=stds, capsize=3, label=variant)
            ax.set_xticks(np.arange(len(algs)) + width * (len(variants) - 1) / 2)
            ax.set_xticklabels(algs, rotation=30, ha="right", fontsize=8)
            ax.set_ylim(0, 1.05)
            ax.set_title(f"size {size} ({REGIMES.get(size, 'other')})")
        axes[0][0].set_ylabel(score.replace("_", " "))
        axes[0][-1].legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{score}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths


def write_records(records: Iterable[ScoreRecord], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as f:
        for r in records:
            f.write(json.dumps(asdict(r), sort_keys=True) + "\n")
    tmp.replace(path)


def read_records(path: Path) -> list[ScoreRecord]:
    with open(path) as f:
        return [ScoreRecord(**json.loads(line)) for line in f if line.strip()]
