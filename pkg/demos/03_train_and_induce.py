"""
Training a small model and reading parses off its gates
=======================================================

A language model trained on the bundled synthetic corpus never sees a
tree, yet its master forget gates recover much of the bracketing.  This
script trains two small restarts for a few epochs (well under a minute on
one core) and compares them with the random baseline.
"""
import dataclasses

import numpy as np

from onlstm_lab.evaluation import corpus_f1, self_f1
from onlstm_lab.induction import parse_corpus, random_parse
from onlstm_lab.synthetic import bundled_corpus_dir
from onlstm_lab.training import load_config, perplexity, run_restarts, unigram_perplexity
from onlstm_lab.treebank import CorpusSplit, build_vocab, normalize_corpus, read_treebank

###############################################################################
# Corpus
# ------

splits = {}
for name in ("train", "dev", "test"):
    trees, _ = normalize_corpus(read_treebank(bundled_corpus_dir() / f"{name}.mrg"))
    splits[name] = CorpusSplit(name, trees)
vocab = build_vocab(t.words() for t in splits["train"].trees)
train, dev, test = (splits[n].encode(vocab) for n in ("train", "dev", "test"))
print(f"{len(train)} training sentences, vocabulary {len(vocab)}")

###############################################################################
# Two restarts of the desk preset, shortened
# ------------------------------------------

model_config, train_config = load_config(preset="desk", vocab_size=len(vocab))
train_config = dataclasses.replace(train_config, epochs=4)
results, _ = run_restarts(2, 0, train, dev, vocab, model_config, train_config)
print("unigram dev perplexity:", round(unigram_perplexity(train, dev, len(vocab)), 2))
for seed, (ckpt, log) in results.items():
    print(f"seed {seed}: dev perplexity {perplexity(ckpt, dev):.2f}")

###############################################################################
# Parsing
# -------
# Each layer gives its own parse; the first one usually tracks syntax best
# at this scale.

for layer in (1, 2):
    parses = [parse_corpus(ckpt, test, layer) for ckpt, _ in results.values()]
    f1s = [corpus_f1(p, test.trees).f1 for p in parses]
    print(f"layer {layer}: F1 {100 * np.mean(f1s):.1f}, self-F1 {100 * self_f1(parses):.1f}")

rng = np.random.default_rng(0)
random_sets = [[random_parse(len(t), rng) for t in test.trees] for _ in range(2)]
rf1 = np.mean([corpus_f1(p, test.trees).f1 for p in random_sets])
print(f"random: F1 {100 * rf1:.1f}, self-F1 {100 * self_f1(random_sets):.1f}")
