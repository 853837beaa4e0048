"""
The whole comparison in a couple of minutes
===========================================

Data, reasoner pre-training, both model variants over two seeds, greedy
decoding on sizes 10, 12 and 14, and the summary table. The numbers are
meaningless at this size; the point is that every cell gets filled. The
same pipeline is available from the shell as ``transnar <subcommand>``.
"""

import logging
import tempfile
from pathlib import Path

from transnar import train as tr
from transnar.config import load_config
from transnar.evaluation import format_table

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = load_config("smoke")
out = Path(tempfile.mkdtemp(prefix="transnar-smoke-"))
report = tr.run_experiment(cfg, out)
print(format_table(report))
print("missing cells:", report["missing"])
for d in report["deltas"]:
    print(d["algorithm"], d["size"], f"clrs delta {d['clrs_score_delta']:+.3f}")
print("artifacts in", out)
