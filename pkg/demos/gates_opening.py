"""
Watching the cross-attention gates open
=======================================

At initialization the fused model is the bare language model, to the bit.
Fine-tuning then decides how much to listen to the frozen reasoner.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from transnar import train as tr
from transnar.checkpoint import parameter_checksum
from transnar.config import load_config
from transnar.data import DatasetConfig, generate_records
from transnar.nar import NarTrainConfig, pretrain_nar

cfg = load_config("smoke", ["train.epochs=4", "train.batch_size=16"])
nar, _ = pretrain_nar(NarTrainConfig(algorithms=("insertion_sort",), sizes=(4, 5, 6), samples_per_size=200,
                                     hidden=cfg.nar.hidden, steps=400))
nar.requires_grad_(False)
records = [r for rs in generate_records(DatasetConfig(["insertion_sort"], [4, 5], [], 300, 0), 0).values()
           for r in rs]

fused = tr.build_model(cfg, "transnar", seed=0, nar=nar)
plain = tr.build_model(cfg, "baseline", seed=0, nar=None)
batch = records[:8]
tokens, _ = tr._pad_right(*zip(*map(tr.encode_example, batch)))
lat, mask = tr._latents(fused, nar, batch)
with torch.no_grad():
    print("identical at init:", torch.equal(fused(tokens, None, lat, mask), plain(tokens)))

###############################################################################
# Train and record both gates of every block after each step.

history = []
before = parameter_checksum(nar)
tr.train_steps(fused, nar, cfg, records, seed=0, on_step=lambda s, l: history.append(fused.gates()))
print("reasoner untouched:", parameter_checksum(nar) == before)

fig, ax = plt.subplots(figsize=(6, 3.5))
for i in range(len(history[0])):
    ax.plot([h[i][0] for h in history], label=f"block {i} attention")
    ax.plot([h[i][1] for h in history], "--", label=f"block {i} ffn")
ax.axhline(0, color="k", lw=0.5)
ax.set(xlabel="step", ylabel="gate parameter")
ax.legend(fontsize=8)
fig.tight_layout()
fig.savefig("gates_opening.png", dpi=120)
