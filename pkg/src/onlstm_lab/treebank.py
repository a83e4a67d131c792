"""Reading, normalizing and slicing PTB-style bracketed treebanks.

Trees are kept n-ary and labeled.  Preterminals are folded into leaf nodes:
``(NN cat)`` becomes a :class:`GoldTree` whose ``label`` is the POS tag and
whose ``token`` carries the surface form.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

TRACE_TAG = "-NONE-"
PUNCTUATION_TAGS = frozenset(
    [".", ",", ":", "``", "''", "-LRB-", "-RRB-", "#", "$"]
)
UNK = "<unk>"
EOS = "<eos>"
RESERVED = (UNK, EOS)


class TreebankError(ValueError):
    """Malformed bracketed input.  ``offset`` is a byte offset into the text."""

    def __init__(self, message, offset=None, source=None):
        self.offset = offset
        self.source = source
        where = []
        if source is not None:
            where.append(str(source))
        if offset is not None:
            where.append(f"byte {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class DegenerateSentence(ValueError):
    """Raised when normalization leaves a tree with an empty yield."""


@dataclass(frozen=True)
class Token:
    surface: str
    pos: str
    index: int


class Span(NamedTuple):
    start: int
    end: int  # inclusive

    def __len__(self) -> int:  # number of tokens covered
        return self.end - self.start + 1


@dataclass
class GoldTree:
    label: str
    children: list["GoldTree"] = field(default_factory=list)
    token: Token | None = None

    @property
    def is_leaf(self) -> bool:
        return self.token is not None

    def leaves(self) -> list[Token]:
        if self.token is not None:
            return [self.token]
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def words(self) -> list[str]:
        return [t.surface for t in self.leaves()]

    def tags(self) -> list[str]:
        return [t.pos for t in self.leaves()]

    def __len__(self) -> int:
        return len(self.leaves())

    def subtrees(self) -> Iterator["GoldTree"]:
        yield self
        for child in self.children:
            yield from child.subtrees()

    def span(self) -> Span:
        leaves = self.leaves()
        return Span(leaves[0].index, leaves[-1].index)

    def __str__(self) -> str:
        return render(self)


def base_label(label: str) -> str:
    """Strip functional tags and indices: ``NP-SBJ-1`` -> ``NP``, ``NP=2`` -> ``NP``."""
    if label.startswith("-"):  # -NONE-, -LRB-, -RRB-
        return label
    return re.split(r"[-=]", label, maxsplit=1)[0] or label


# ---------------------------------------------------------------------------
# reading and writing

_TOKEN_RE = re.compile(r"\(|\)|[^()\s]+")


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def parse_ptb(text: str, source=None) -> list[GoldTree]:
    """Parse concatenated bracketed s-expressions into trees.

    Top-level expressions with an empty label and a single child (the
    ``( (S ...) )`` wrapper used in ``.mrg`` files) are unwrapped.  Labels
    and POS tags are kept verbatim.
    """
    trees = []
    # each frame: [label, children, start_pos]
    stack: list[list] = []
    tokens = list(_TOKEN_RE.finditer(text))
    i = 0
    while i < len(tokens):
        m = tokens[i]
        tok = m.group()
        if tok == "(":
            label = ""
            if i + 1 < len(tokens) and tokens[i + 1].group() not in "()":
                label = tokens[i + 1].group()
                i += 1
            # (TAG word) preterminal
            if (
                label
                and i + 2 < len(tokens)
                and tokens[i + 1].group() not in "()"
                and tokens[i + 2].group() == ")"
            ):
                word = tokens[i + 1].group()
                leaf = GoldTree(label, token=Token(word, label, -1))
                i += 3
                if stack:
                    stack[-1][1].append(leaf)
                else:
                    trees.append(leaf)
                continue
            if not label and stack:
                raise TreebankError(
                    "empty label where a child list is expected",
                    _byte_offset(text, m.start()),
                    source,
                )
            stack.append([label, [], m.start()])
            i += 1
        elif tok == ")":
            if not stack:
                raise TreebankError(
                    "unbalanced ')'", _byte_offset(text, m.start()), source
                )
            label, children, start = stack.pop()
            if not children:
                raise TreebankError(
                    "node without children", _byte_offset(text, start), source
                )
            if not label:
                if len(children) != 1:
                    raise TreebankError(
                        "unlabeled wrapper with several children",
                        _byte_offset(text, start),
                        source,
                    )
                node = children[0]
            else:
                node = GoldTree(label, children)
            if stack:
                stack[-1][1].append(node)
            else:
                trees.append(node)
            i += 1
        else:
            raise TreebankError(
                f"unexpected bare token {tok!r}", _byte_offset(text, m.start()), source
            )
    if stack:
        raise TreebankError(
            "unbalanced '(': reached end of input", len(text.encode("utf-8")), source
        )
    return [_reindex(t) for t in trees]


def read_treebank(path) -> list[GoldTree]:
    path = Path(path)
    return parse_ptb(path.read_text(encoding="utf-8"), source=path)


def render(tree: GoldTree) -> str:
    """Single-line bracketed rendering; inverse of :func:`parse_ptb`."""
    if tree.token is not None:
        return f"({tree.label} {tree.token.surface})"
    return "(" + tree.label + " " + " ".join(render(c) for c in tree.children) + ")"


def write_trees(trees: Iterable[GoldTree], path) -> None:
    Path(path).write_text("".join(render(t) + "\n" for t in trees), encoding="utf-8")


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormalizationPolicy:
    drop_punctuation: bool = True
    strip_labels: bool = True
    punctuation_tags: frozenset = PUNCTUATION_TAGS


def _prune(tree: GoldTree, drop_tags) -> GoldTree | None:
    if tree.token is not None:
        return None if tree.token.pos in drop_tags else tree
    kids = [k for k in (_prune(c, drop_tags) for c in tree.children) if k is not None]
    if not kids:
        return None
    return GoldTree(tree.label, kids)


def _reindex(tree: GoldTree) -> GoldTree:
    counter = iter(range(1 << 62))

    def walk(node):
        if node.token is not None:
            tok = node.token
            return GoldTree(node.label, token=Token(tok.surface, tok.pos, next(counter)))
        return GoldTree(node.label, [walk(c) for c in node.children])

    return walk(tree)


def normalize_tree(tree: GoldTree, policy: NormalizationPolicy = NormalizationPolicy()) -> GoldTree:
    """Remove traces (and punctuation, per policy), strip labels, re-index tokens.

    Raises :class:`DegenerateSentence` when nothing is left.
    """
    drop = {TRACE_TAG}
    if policy.drop_punctuation:
        drop |= set(policy.punctuation_tags)
    pruned = _prune(tree, drop)
    if pruned is None:
        raise DegenerateSentence("empty yield after normalization")
    if policy.strip_labels:
        pruned = _strip(pruned)
    return _reindex(pruned)


def _strip(tree: GoldTree) -> GoldTree:
    if tree.token is not None:
        return tree
    return GoldTree(base_label(tree.label), [_strip(c) for c in tree.children])


def normalize_corpus(trees, policy=NormalizationPolicy()):
    """Normalize every tree; returns ``(kept, skipped_indices)``."""
    kept, skipped = [], []
    for i, t in enumerate(trees):
        try:
            kept.append(normalize_tree(t, policy))
        except DegenerateSentence:
            skipped.append(i)
    return kept, skipped


def gold_spans(tree: GoldTree, exclude_len1=True, exclude_full=True) -> set[tuple[Span, str]]:
    """Labeled spans of all internal nodes; unary duplicates collapse."""
    n = len(tree)
    out = set()
    for node in tree.subtrees():
        if node.token is not None:
            continue
        span = node.span()
        if exclude_len1 and span.start == span.end:
            continue
        if exclude_full and span.start == 0 and span.end == n - 1:
            continue
        out.add((span, node.label))
    return out


def unlabeled(spans) -> set[Span]:
    return {s for s, _ in spans}


def binarize(tree: GoldTree) -> GoldTree:
    """Right-factored binarization; added nodes are labeled ``LABEL|``."""
    if tree.token is not None:
        return tree
    kids = [binarize(c) for c in tree.children]
    while len(kids) > 2:
        kids = kids[:-2] + [GoldTree(base_label(tree.label) + "|", kids[-2:])]
    return GoldTree(tree.label, kids)


# ---------------------------------------------------------------------------
# vocabulary and corpus splits


class Vocabulary:
    """Token/id map with ``<unk>`` = 0 and ``<eos>`` = 1."""

    def __init__(self, tokens: Sequence[str], counts: dict | None = None):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.counts = dict(counts or {})

    unk_id = 0
    eos_id = 1

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.lookup(w) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_tsv(self) -> str:
        return "".join(
            f"{tok}\t{i}\t{self.counts.get(tok, 0)}\n" for i, tok in enumerate(self.itos)
        )

    @classmethod
    def from_tsv(cls, text: str) -> "Vocabulary":
        rows = [line.split("\t") for line in text.splitlines() if line.strip()]
        rows.sort(key=lambda r: int(r[1]))
        if [r[0] for r in rows[: len(RESERVED)]] != list(RESERVED):
            raise ValueError("vocabulary file must list reserved symbols first")
        vocab = cls([r[0] for r in rows[len(RESERVED):]], {r[0]: int(r[2]) for r in rows})
        return vocab


def build_vocab(sentences: Iterable[Sequence[str]], max_size=10_000 + len(RESERVED), min_freq=1) -> Vocabulary:
    """Keep the ``max_size - 2`` most frequent tokens, ties broken lexicographically."""
    if max_size < len(RESERVED):
        raise ValueError("max_size must leave room for the reserved symbols")
    counts = Counter()
    for sent in sentences:
        counts.update(sent)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [t for t, c in ranked if c >= min_freq and t not in RESERVED]
    kept = kept[: max_size - len(RESERVED)]
    return Vocabulary(kept, counts)


@dataclass
class CorpusSplit:
    name: str
    trees: list[GoldTree]
    ids: list[list[int]] | None = None
    parent: str | None = None

    @property
    def sentences(self):
        ids = self.ids if self.ids is not None else [None] * len(self.trees)
        return list(zip(ids, self.trees))

    def __len__(self) -> int:
        return len(self.trees)

    def encode(self, vocab: Vocabulary) -> "CorpusSplit":
        return CorpusSplit(self.name, self.trees, [vocab.encode(t.words()) for t in self.trees], self.parent)


WSJ10_VIEW = "wsj10-view"


def wsj10_view(split: CorpusSplit, max_len=10) -> CorpusSplit:
    """Sentences strictly shorter than ``max_len`` tokens, order preserved."""
    keep = [i for i, t in enumerate(split.trees) if len(t) < max_len]
    ids = None if split.ids is None else [split.ids[i] for i in keep]
    parent = split.parent if split.name == WSJ10_VIEW else split.name
    return CorpusSplit(WSJ10_VIEW, [split.trees[i] for i in keep], ids, parent)


# ---------------------------------------------------------------------------
# PTB section layout

DEFAULT_SECTIONS = {
    "train": list(range(0, 22)),
    "dev": [22],
    "test": [23],
}


def parse_section_manifest(text: str) -> dict[str, list[int]]:
    """Parse ``split = 00-21`` / ``dev = 22`` / ``test = 23, 24`` lines."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad manifest line: {raw!r}")
        name, _, rhs = (p.strip() for p in line.partition("="))
        sections = []
        for part in re.split(r"[,\s]+", rhs):
            if not part:
                continue
            if "-" in part:
                lo, hi = part.split("-")
                sections.extend(range(int(lo), int(hi) + 1))
            else:
                sections.append(int(part))
        out[name] = sections
    return out


def section_files(root, sections: dict[str, list[int]]):
    """Map split name -> sorted ``.mrg`` files; raises listing absent sections."""
    root = Path(root)
    files, missing = {}, []
    for name, secs in sections.items():
        files[name] = []
        for s in secs:
            d = root / f"{s:02d}"
            found = sorted(d.glob("*.mrg")) if d.is_dir() else []
            if not found:
                missing.append(str(d))
            files[name].extend(found)
    if missing:
        raise FileNotFoundError("missing treebank sections: " + ", ".join(missing))
    return files
