"""
Teaching a graph network two algorithms
=======================================

A small gated max-aggregation network learns insertion sort and task
scheduling from input/output pairs alone. Afterwards we ask how well it does
on graphs larger than any it saw.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from transnar.nar import NarTrainConfig, pretrain_nar, report_nar

cfg = NarTrainConfig(
    algorithms=("insertion_sort", "task_scheduling"),
    sizes=(4, 5, 6, 7, 8),
    samples_per_size=300,
    eval_samples_per_size=50,
    eval_sizes=(12, 16),
    hidden=32,
    steps=1500,
    learning_rate=1e-3,
    log_every=250,
)
model, metrics = pretrain_nar(cfg, on_log=lambda s, l: print(f"step {s:5d}  loss {l:.3f}"))
print(f"{metrics['train_seconds']:.0f}s")

###############################################################################
# The loss is noisy because each step sees one (task, size) cell only.

curve = np.convolve(metrics["loss_curve"], np.ones(50) / 50, mode="valid")
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.5))
ax1.plot(curve)
ax1.set(xlabel="step", ylabel="loss (50-step mean)", yscale="log")

###############################################################################
# Elementwise accuracy by size. Sizes 12 and 16 were never trained on.

report = report_nar(model, cfg)
scores = {**report["in_distribution"], **report["out_of_distribution"]}
for alg in cfg.algorithms:
    sizes = sorted(int(k.split("@")[1]) for k in scores if k.startswith(alg))
    ax2.plot(sizes, [scores[f"{alg}@{n}"] for n in sizes], "o-", label=alg)
ax2.axvspan(8.5, 16.5, alpha=0.1)
ax2.set(xlabel="graph size", ylabel="accuracy", ylim=(0, 1.02))
ax2.legend()
fig.tight_layout()
fig.savefig("nar_pretraining.png", dpi=120)
print({k: round(v, 3) for k, v in scores.items()})
