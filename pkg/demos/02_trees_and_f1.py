"""
Trees, heights and unlabeled F1
===============================

Gold trees come in as bracketed text, lose traces and punctuation, and are
scored against binary trees built from split-point heights.
"""
from collections import Counter

import numpy as np

from onlstm_lab.evaluation import corpus_f1, span_f1, span_set
from onlstm_lab.induction import build_tree, gold_heights, random_parse, render_parse
from onlstm_lab.treebank import normalize_tree, parse_ptb, render

###############################################################################
# Reading and normalizing
# -----------------------
# Function tags go, empty elements go, and so does the final period.

raw = "( (S (NP-SBJ (DT The) (NN market)) (VP (MD will) (VP (VB recover) " \
      "(SBAR (IN before) (S (NP-SBJ (NNS prices)) (VP (VBP stabilize)))))) (. .)) )"
(tree,) = parse_ptb(raw)
gold = normalize_tree(tree)
print(render(gold))
words = gold.words()

###############################################################################
# Heights to trees
# ----------------
# Each range is split at its highest split point.  ``heights[k]`` sits
# between tokens ``k`` and ``k+1``.

heights = np.array([0.4, 3.0, 1.2, 2.5, 0.7, 1.9])
parse = build_tree(heights)
print(render_parse(parse, words))

###############################################################################
# Scoring
# -------
# Single tokens and the whole sentence are not counted.  Heights derived
# from the gold tree reproduce its brackets exactly.

print("spans:", sorted(span_set(parse)))
print("gold spans:", sorted(span_set(gold)))
print("F1 of the made-up heights:", round(span_f1(parse, gold).f1, 3))
print("F1 of gold heights:", span_f1(build_tree(gold_heights(gold)), gold).f1)

###############################################################################
# The random baseline
# -------------------
# Shuffled heights through the same builder.  For four tokens the balanced
# tree is twice as likely as each of the other shapes.

rng = np.random.default_rng(0)
shapes = Counter(random_parse(4, rng) for _ in range(6000))
for shape, count in shapes.most_common():
    print(shape, round(count / 6000, 3))
baseline = [random_parse(len(words), rng) for _ in range(200)]
print("random baseline F1:", round(corpus_f1(baseline, [gold] * 200).f1, 3))
