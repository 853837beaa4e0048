"""
One problem, two views
======================

Every instance is rendered twice: as a line of text for the language model
and as a graph for the reasoner. Here we build a few, look at both, and
score some deliberately broken answers.
"""

import numpy as np

from transnar.evaluation import score_generation
from transnar.graphs import graph_layout, to_graph
from transnar.tasks import generate_instance
from transnar.text import parse_output, render_text, tokenize

# A sorting instance of size 5, fully determined by its seed.
inst = generate_instance("insertion_sort", 5, seed=3)
ex = render_text(inst)
print(ex.prompt + ex.target)

# The prompt ends right where the model has to start writing.
print(repr(ex.prompt[-8:]), "->", repr(ex.target))
print(len(tokenize(ex.text)), "tokens")

###############################################################################
# The graph view keeps the same numbers as node features, plus a position
# feature on every node. Sorting uses a complete graph.

g = to_graph(inst)
print(graph_layout("insertion_sort"))
print(g.node_features)
print(g.adjacency.sum(), "edges (with self loops)")

###############################################################################
# Scoring is lenient about spacing and strict about structure.

answers = {
    "exact": ex.target,
    "one slot wrong": ex.target.replace(ex.target.split()[1], "0.999"),
    "too short": "[" + " ".join(ex.target.strip("[]").split()[:4]) + "]",
    "garbage": "[0.1 0.2 abc",
}
for name, raw in answers.items():
    r = score_generation(raw, inst, seed=0, variant="demo")
    print(f"{name:>15}: parse={r.parse_score} shape={r.shape_score} clrs={r.clrs_score:.2f}")

###############################################################################
# Integer-valued tasks work the same way.

for alg in ("task_scheduling", "articulation_points", "matrix_chain_order"):
    inst = generate_instance(alg, 4, seed=0)
    ex = render_text(inst)
    parsed = parse_output(ex.target, alg)
    assert np.array_equal(parsed.value, inst.output)
    print(ex.text, end="\n\n")
