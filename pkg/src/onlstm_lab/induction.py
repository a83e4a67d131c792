"""Binary trees from split-point heights.

A parse over ``n`` tokens is a nested tuple: a leaf is the token index
(an ``int``), a branch is a ``(left, right)`` pair.  ``heights[k]`` is the
height of the split point between token ``k`` and token ``k + 1``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import numpy as np

BinaryParse = Union[int, tuple]


def heights_from_trace(trace, layer: int) -> np.ndarray:
    """Split-point heights for one sentence from a gate trace.

    ``trace`` is either a :class:`~onlstm_lab.model.MasterGateTrace` or an
    array of per-token heights of shape ``(num_layers, n)``.  ``layer`` is
    1-based.  The first split point takes the max of the first two tokens'
    heights; every later split uses the height of the token after it.
    """
    d = trace.heights if hasattr(trace, "heights") else np.asarray(trace)
    d = np.asarray(d, dtype=np.float64)
    if d.ndim == 1:
        d = d[None, :]
    if not 1 <= layer <= d.shape[0]:
        raise ValueError(f"layer must be in 1..{d.shape[0]}, got {layer}")
    d = d[layer - 1]
    if len(d) <= 1:
        return np.zeros(0)
    out = d[1:].copy()
    out[0] = max(d[0], d[1])
    return out


def build_tree(heights: Sequence[float], tie_break: str = "leftmost") -> BinaryParse:
    """Split each range at its highest split point, recursively."""
    h = np.asarray(heights, dtype=np.float64)
    if tie_break not in ("leftmost", "rightmost"):
        raise ValueError(f"unknown tie_break {tie_break!r}")
    n = len(h) + 1

    def rec(lo, hi):  # tokens lo..hi inclusive
        if lo == hi:
            return lo
        seg = h[lo:hi]
        if tie_break == "leftmost":
            k = lo + int(np.argmax(seg))
        else:
            k = hi - 1 - int(np.argmax(seg[::-1]))
        return (rec(lo, k), rec(k + 1, hi))

    return rec(0, n - 1)


def random_parse(n: int, rng: np.random.Generator) -> BinaryParse:
    """Random baseline: the height-ordered construction over a shuffled permutation."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return build_tree(rng.permutation(n - 1).astype(np.float64))


def leaves(tree: BinaryParse) -> list[int]:
    if isinstance(tree, (int, np.integer)):
        return [int(tree)]
    return leaves(tree[0]) + leaves(tree[1])


def tree_spans(tree: BinaryParse) -> list[tuple[int, int]]:
    """All ``(start, end)`` spans (inclusive) of branch nodes, outermost first."""
    out = []

    def rec(node):
        if isinstance(node, (int, np.integer)):
            return int(node), int(node)
        a, _ = rec(node[0])
        _, b = rec(node[1])
        out.append((a, b))
        return a, b

    rec(tree)
    out.reverse()
    return out


def num_leaves(tree: BinaryParse) -> int:
    return len(leaves(tree))


def gold_heights(tree) -> np.ndarray:
    """Heights that make :func:`build_tree` respect a gold tree's brackets.

    The split between adjacent tokens gets ``-depth`` of their lowest common
    ancestor, so every split at a higher node outranks every split below it.
    """
    n = len(tree)
    h = np.zeros(max(n - 1, 0))

    def rec(node, depth):
        if node.token is not None:
            return
        for left in node.children[:-1]:
            h[left.span().end] = -depth
        for child in node.children:
            rec(child, depth + 1)

    rec(tree, 0)
    return h


# ---------------------------------------------------------------------------
# file formats


def render_parse(tree: BinaryParse, words: Sequence[str]) -> str:
    if isinstance(tree, (int, np.integer)):
        return words[int(tree)]
    return f"( {render_parse(tree[0], words)} {render_parse(tree[1], words)} )"


def parse_bracketed(line: str) -> tuple[BinaryParse, list[str]]:
    """Inverse of :func:`render_parse`: returns the tree and its words."""
    tokens = line.replace("(", " ( ").replace(")", " ) ").split()
    words: list[str] = []
    pos = 0

    def rec():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok != "(":
            words.append(tok)
            return len(words) - 1
        kids = []
        while tokens[pos] != ")":
            kids.append(rec())
        pos += 1
        if len(kids) == 1:
            return kids[0]
        if len(kids) != 2:
            raise ValueError(f"non-binary node in parse line: {line!r}")
        return tuple(kids)

    if not tokens:
        raise ValueError("empty parse line")
    tree = rec()
    if pos != len(tokens):
        raise ValueError(f"trailing tokens in parse line: {line!r}")
    return tree, words


def write_parses(path, parses, sentences) -> None:
    Path(path).write_text(
        "".join(render_parse(p, w) + "\n" for p, w in zip(parses, sentences)),
        encoding="utf-8",
    )


def read_parses(path) -> list[BinaryParse]:
    return [parse_bracketed(line)[0] for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def write_heights(path, heights) -> None:
    lines = []
    for i, h in enumerate(heights):
        lines.append("\t".join([str(i)] + [repr(float(x)) for x in h]) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_heights(path) -> list[np.ndarray]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        cols = line.split("\t")
        out.append(np.array([float(x) for x in cols[1:]]))
    return out


def sentence_heights(checkpoint, sentences, batch_size=64) -> list[np.ndarray]:
    """Per-token heights ``(L, n)`` for each word list, in inference mode.

    Each sentence is run from a zero state behind a leading ``<eos>``, the
    context it is preceded by in the training stream.  Sentences of equal
    length are batched together.
    """
    from .model import _forward

    itos = checkpoint.vocab
    stoi = {t: i for i, t in enumerate(itos)}
    unk, eos = stoi["<unk>"], stoi["<eos>"]
    out: list = [None] * len(sentences)
    by_len: dict[int, list[int]] = {}
    for i, words in enumerate(sentences):
        by_len.setdefault(len(words), []).append(i)
    for n in sorted(by_len):
        idx = by_len[n]
        for lo in range(0, len(idx), batch_size):
            chunk = idx[lo : lo + batch_size]
            ids = np.array([[eos] + [stoi.get(w, unk) for w in sentences[i]] for i in chunk]).T
            _, trace, _, _ = _forward(checkpoint.params, checkpoint.config, ids, None, None, False)
            for b, i in enumerate(chunk):
                out[i] = np.asarray(trace.heights[:, 1:, b], dtype=np.float64)
    return out


def parse_corpus(checkpoint, split, layer: int, return_heights=False):
    """Binary parse of every sentence in ``split`` from one layer's gates.

    ``split`` is a :class:`~onlstm_lab.treebank.CorpusSplit` or a list of
    word lists.  With ``return_heights`` the split-point heights are
    returned alongside the parses.
    """
    if not 1 <= layer <= checkpoint.config.num_layers:
        raise ValueError(f"layer must be in 1..{checkpoint.config.num_layers}, got {layer}")
    trees = getattr(split, "trees", None)
    sentences = [t.words() for t in trees] if trees is not None else list(split)
    parses, heights = [], []
    for i, d in enumerate(sentence_heights(checkpoint, sentences)):
        try:
            h = heights_from_trace(d, layer)
            parses.append(build_tree(h))
        except Exception as err:
            raise RuntimeError(f"sentence {i}: {err}") from err
        heights.append(h)
    return (parses, heights) if return_heights else parses
