"""
Where the induced trees go wrong
================================

Per-label accuracy asks which gold constituents appear verbatim in the
induced parse.  The clause study looks at the single highest split inside
each subordinate clause and asks whether it falls on the clause border,
right before a verb, or elsewhere.
"""
import tempfile

import numpy as np

from onlstm_lab.evaluation import (
    SbarInstance,
    label_accuracy,
    make_report,
    sbar_case_study,
    sbar_instances,
)
from onlstm_lab.induction import build_tree, gold_heights, random_parse
from onlstm_lab.synthetic import generate_corpus
from onlstm_lab.treebank import normalize_tree, parse_ptb

golds = [normalize_tree(t) for t in generate_corpus(300, seed=3)]

###############################################################################
# A noisy parser
# --------------
# Gold heights plus noise stand in for a trained model's heights.

rng = np.random.default_rng(0)
noisy_heights = [[gold_heights(g) + rng.normal(0, 0.6, len(g) - 1) for g in golds] for _ in range(3)]
noisy = [[build_tree(h) for h in hs] for hs in noisy_heights]
random = [[random_parse(len(g), rng) for g in golds] for _ in range(3)]

rows = label_accuracy(noisy, golds, random, min_count=5)
for r in rows:
    print(f"{r.label:6s} acc {r.accuracy:5.1f}  random {r.baseline:5.1f}  delta {r.delta:5.1f}  n={r.count}")

###############################################################################
# Highest split inside subordinate clauses
# ----------------------------------------
# Gold heights always split a clause off at its border.

sample = sbar_instances(golds)[:30]
print("gold:", sbar_case_study([gold_heights(g) for g in golds], golds, sample))
for k, hs in enumerate(noisy_heights):
    print(f"noisy {k}:", sbar_case_study(hs, golds, sample))

###############################################################################
# A single hand-built case
# ------------------------
# "... recover before prices stabilize" with the highest split right before
# the verb, the pattern that makes a model attach the verb too high.

g = normalize_tree(parse_ptb(
    "(S (NP (DT the) (NN market)) (VP (MD will) (VP (VB recover) "
    "(SBAR (IN before) (S (NP (NNS prices)) (VP (VBP stabilize)))))))")[0])
print(sbar_case_study([np.array([1.0, 2.0, 0.5, 3.0, 2.5, 4.0])], [g], [SbarInstance(0, 4, 6)]))

###############################################################################
# Tables
# ------

report = {
    "table2": [r.__dict__ for r in rows],
    "table3": [{"model": "Gold", **sbar_case_study([gold_heights(x) for x in golds], golds, sample).__dict__}],
}
paths = make_report(report, tempfile.mkdtemp(prefix="onlstm-demo-"))
print(open(paths["table2.tsv"]).read())
