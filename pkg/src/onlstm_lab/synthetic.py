"""A small English-like PCFG that emits PTB-style trees.

Nonterminals carry an agreement suffix (``NP_sg``, ``VP_pl``) that is
dropped from the output labels, so subject-verb agreement holds across
intervening PPs and relative clauses.  Sentences end in ``(. .)`` or
``(. ?)``, which the default normalization removes.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .treebank import GoldTree, Token, _reindex, render

LEXICON = {
    "DT_sg": "the a this that every each another".split(),
    "DT_pl": "the these those some many few".split(),
    "NN": (
        "cat dog man woman child teacher doctor farmer student king queen bird horse "
        "city river house garden market school table window letter book song story "
        "idea plan report price offer company bank office"
    ).split(),
    "NNS": (
        "cats dogs men women children teachers doctors farmers students kings birds "
        "horses cities rivers houses gardens markets schools tables windows letters "
        "books songs stories ideas plans reports prices offers companies"
    ).split(),
    "NNP": "john mary paris london alice bob tokyo smith jones".split(),
    "PRP_sg": "he she it".split(),
    "PRP_pl": "they we".split(),
    "JJ": "big small old young red green happy sad quiet loud new strange bright dark".split(),
    "VBD": (
        "saw liked found chased helped watched visited wanted bought sold made "
        "took gave left reached"
    ).split(),
    "VBD_i": "slept arrived laughed waited smiled fell".split(),
    "VBZ": "sees likes finds chases helps watches visits wants buys sells".split(),
    "VBP": "see like find chase help watch visit want buy sell".split(),
    "VB": "see like find chase help watch visit buy sell leave".split(),
    "MD": "will can could should might".split(),
    "IN_p": "in on with near under behind from".split(),
    "IN_c": "because although if while before after since".split(),
    "WDT": "that which".split(),
    "RB": "very quite rather".split(),
    "RB_adv": "often never always quickly suddenly".split(),
    "CD": "two three four five".split(),
    ".": ["."],
    "?": ["?"],
}

# preterminal symbol -> PTB POS tag
POS = {
    "DT_sg": "DT", "DT_pl": "DT", "PRP_sg": "PRP", "PRP_pl": "PRP", "VBD_i": "VBD",
    "IN_p": "IN", "IN_c": "IN", "RB_adv": "RB", "?": ".",
}

RULES = {
    "ROOT": [(("S", "."), 0.88), (("SQ", "?"), 0.12)],
    "S": [
        (("NP_sg", "VP_sg"), 0.38),
        (("NP_pl", "VP_pl"), 0.38),
        (("ADVP", "NP_sg", "VP_sg"), 0.06),
        (("ADVP", "NP_pl", "VP_pl"), 0.06),
        (("PP", "NP_sg", "VP_sg"), 0.06),
        (("PP", "NP_pl", "VP_pl"), 0.06),
    ],
    "S_rel_sg": [(("VP_sg",), 1.0)],
    "S_rel_pl": [(("VP_pl",), 1.0)],
    "SQ": [(("MD", "NP_sg", "VP_base"), 0.5), (("MD", "NP_pl", "VP_base"), 0.5)],
    "NP_sg": [
        (("DT_sg", "NN"), 0.34),
        (("DT_sg", "ADJP", "NN"), 0.16),
        (("NNP",), 0.12),
        (("PRP_sg",), 0.10),
        (("NP_sg", "PP"), 0.18),
        (("NP_sg", "SBAR_rel_sg"), 0.10),
    ],
    "NP_pl": [
        (("DT_pl", "NNS"), 0.30),
        (("DT_pl", "ADJP", "NNS"), 0.14),
        (("CD", "NNS"), 0.08),
        (("PRP_pl",), 0.10),
        (("NP_pl", "PP"), 0.18),
        (("NP_pl", "SBAR_rel_pl"), 0.10),
        (("NP_sg", "CC", "NP_sg"), 0.10),
    ],
    "NP_obj": [
        (("DT_sg", "NN"), 0.28),
        (("DT_pl", "NNS"), 0.22),
        (("DT_sg", "ADJP", "NN"), 0.14),
        (("NNP",), 0.10),
        (("NP_obj", "PP"), 0.18),
        (("NP_obj", "SBAR_rel_sg"), 0.08),
    ],
    "ADJP": [(("JJ",), 0.75), (("RB", "JJ"), 0.25)],
    "ADVP": [(("RB_adv",), 1.0)],
    "PP": [(("IN_p", "NP_obj"), 1.0)],
    "SBAR": [(("IN_c", "S"), 1.0)],
    "SBAR_rel_sg": [(("WHNP", "S_rel_sg"), 1.0)],
    "SBAR_rel_pl": [(("WHNP", "S_rel_pl"), 1.0)],
    "WHNP": [(("WDT",), 1.0)],
    "VP_sg": [
        (("VBD", "NP_obj"), 0.24),
        (("VBZ", "NP_obj"), 0.20),
        (("VBD_i",), 0.10),
        (("VBD", "NP_obj", "PP"), 0.12),
        (("VBD_i", "PP"), 0.08),
        (("VBD_i", "SBAR"), 0.08),
        (("MD", "VP_base"), 0.12),
        (("VBZ", "NP_obj", "ADVP"), 0.06),
    ],
    "VP_pl": [
        (("VBD", "NP_obj"), 0.24),
        (("VBP", "NP_obj"), 0.20),
        (("VBD_i",), 0.10),
        (("VBD", "NP_obj", "PP"), 0.12),
        (("VBD_i", "PP"), 0.08),
        (("VBD_i", "SBAR"), 0.08),
        (("MD", "VP_base"), 0.12),
        (("VBP", "NP_obj", "ADVP"), 0.06),
    ],
    "VP_base": [(("VB", "NP_obj"), 0.7), (("VB", "NP_obj", "PP"), 0.3)],
}
LEXICON["CC"] = ["and"]


def _label(symbol: str) -> str:
    if symbol == "ROOT":
        return "S"
    return symbol.split("_", 1)[0]


class PCFG:
    def __init__(self, rules=RULES, lexicon=LEXICON, pos=POS):
        self.rules = rules
        self.lexicon = lexicon
        self.pos = pos

    def vocabulary(self) -> set[str]:
        return {w for words in self.lexicon.values() for w in words}

    def sample(self, rng: np.random.Generator, symbol="ROOT", max_depth=9, depth=0) -> GoldTree:
        if symbol in self.lexicon:
            words = self.lexicon[symbol]
            w = words[int(rng.integers(len(words)))]
            tag = self.pos.get(symbol, symbol)
            return GoldTree(tag, token=Token(w, tag, -1))
        options = self.rules[symbol]
        probs = np.array([p for _, p in options])
        if depth >= max_depth:
            # past the depth cap only non-recursive expansions are allowed
            probs = probs * np.array([symbol not in rhs for rhs, _ in options])
        probs = probs / probs.sum()
        rhs = options[int(rng.choice(len(options), p=probs))][0]
        kids = [self.sample(rng, s, max_depth, depth + 1) for s in rhs]
        if symbol == "ROOT":
            # the sentence-final mark attaches to the clause
            inner = kids[0]
            return GoldTree(inner.label, inner.children + kids[1:])
        return GoldTree(_label(symbol), kids)


def generate_corpus(n: int, seed: int = 0, min_len=3, max_len=20, grammar: PCFG | None = None) -> list[GoldTree]:
    """``n`` reindexed trees whose yields have ``min_len..max_len`` tokens (punctuation included)."""
    grammar = grammar or PCFG()
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        t = grammar.sample(rng)
        if min_len <= len(t) <= max_len:
            out.append(_reindex(t))
    return out


SPLIT_SIZES = {"train": 4000, "dev": 500, "test": 500}
BUNDLE_SEED = 20201014


def bundled_corpus_dir() -> Path:
    return Path(str(resources.files("onlstm_lab") / "data" / "synthetic"))


def write_bundle(out_dir, seed=BUNDLE_SEED, sizes=SPLIT_SIZES) -> dict[str, Path]:
    """Regenerate the bundled corpus: one ``<split>.mrg`` per split, one tree per line."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trees = generate_corpus(sum(sizes.values()), seed)
    paths, start = {}, 0
    for name, size in sizes.items():
        p = out / f"{name}.mrg"
        p.write_text("".join(render(t) + "\n" for t in trees[start : start + size]), encoding="utf-8")
        paths[name] = p
        start += size
    return paths
