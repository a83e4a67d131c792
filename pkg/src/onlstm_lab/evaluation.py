"""Unlabeled span F1, self-F1, per-label accuracy, the SBAR split study, reports."""

from __future__ import annotations

import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .induction import BinaryParse, num_leaves, tree_spans
from .treebank import GoldTree, gold_spans

log = logging.getLogger(__name__)

VERB_TAGS = frozenset(["VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "MD"])


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Conventions:
    exclude_len1: bool = True
    exclude_full: bool = True


@dataclass
class F1Result:
    precision: float
    recall: float
    f1: float
    matched: int = 0
    predicted: int = 0
    gold: int = 0
    sentences: int = 1
    skipped: list = field(default_factory=list)


def _harmonic(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _filter(spans, n, conv: Conventions):
    out = set()
    for a, b in spans:
        if conv.exclude_len1 and a == b:
            continue
        if conv.exclude_full and a == 0 and b == n - 1:
            continue
        out.add((a, b))
    return out


def span_set(tree, conv: Conventions = Conventions()) -> set[tuple[int, int]]:
    """Unlabeled spans of a binary parse or a gold tree under ``conv``."""
    if isinstance(tree, GoldTree):
        n = len(tree)
        spans = {(s.start, s.end) for s, _ in gold_spans(tree, False, False)}
    else:
        n = num_leaves(tree)
        spans = tree_spans(tree)
    return _filter(spans, n, conv)


def _length(tree) -> int:
    return len(tree) if isinstance(tree, GoldTree) else num_leaves(tree)


def f1_from_sets(pred: set, gold: set) -> F1Result:
    """Empty prediction counts as precision 1, empty gold as recall 1."""
    matched = len(pred & gold)
    p = matched / len(pred) if pred else 1.0
    r = matched / len(gold) if gold else 1.0
    if pred and gold:
        # 2PR/(P+R) with one rounding
        f1 = 2 * matched / (len(pred) + len(gold))
    else:
        f1 = _harmonic(p, r)
    return F1Result(p, r, f1, matched, len(pred), len(gold))


def span_f1(pred, gold, conventions: Conventions = Conventions(), sentence_id=None) -> F1Result:
    """Unlabeled F1 of ``pred`` against ``gold`` (either may be a binary parse or a GoldTree)."""
    if _length(pred) != _length(gold):
        raise AlignmentError(
            f"sentence {sentence_id}: {_length(pred)} predicted vs {_length(gold)} gold tokens"
        )
    return f1_from_sets(span_set(pred, conventions), span_set(gold, conventions))


def corpus_f1(preds, golds, conventions: Conventions = Conventions(), aggregation: str = "macro") -> F1Result:
    """Sentence-averaged (``macro``) or pooled-count (``micro``) F1.

    ``None`` entries on either side mark sentences lost to normalization;
    they are skipped and listed in ``skipped``.
    """
    if len(preds) != len(golds):
        raise AlignmentError(f"{len(preds)} predictions vs {len(golds)} gold trees")
    if aggregation not in ("macro", "micro"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    results, skipped = [], []
    for i, (p, g) in enumerate(zip(preds, golds)):
        if p is None or g is None:
            skipped.append(i)
            continue
        results.append(span_f1(p, g, conventions, sentence_id=i))
    if skipped:
        log.warning("skipped %d degenerate sentences", len(skipped))
    if not results:
        return F1Result(0.0, 0.0, 0.0, sentences=0, skipped=skipped)
    matched = sum(r.matched for r in results)
    predicted = sum(r.predicted for r in results)
    gold = sum(r.gold for r in results)
    if aggregation == "macro":
        p = float(np.mean([r.precision for r in results]))
        r_ = float(np.mean([r.recall for r in results]))
        f = float(np.mean([r.f1 for r in results]))
    else:
        p = matched / predicted if predicted else 1.0
        r_ = matched / gold if gold else 1.0
        f = _harmonic(p, r_)
    return F1Result(p, r_, f, matched, predicted, gold, len(results), skipped)


def self_f1(parses_per_restart: Sequence[Sequence[BinaryParse]], conventions: Conventions = Conventions(), aggregation="macro") -> float:
    """Mean corpus F1 over all unordered pairs of restarts."""
    n = len(parses_per_restart)
    if n < 2:
        raise ValueError("self F1 needs at least two restarts")
    lengths = {len(p) for p in parses_per_restart}
    if len(lengths) != 1:
        raise AlignmentError(f"restarts parsed different numbers of sentences: {sorted(lengths)}")
    scores = [
        corpus_f1(a, b, conventions, aggregation).f1
        for a, b in itertools.combinations(parses_per_restart, 2)
    ]
    return float(np.mean(scores))


@dataclass
class EnsembleReport:
    f1s: list[float]
    mean: float
    sd: float
    self_f1: float | None


def ensemble_report(parses_per_restart, golds, conventions=Conventions(), aggregation="macro") -> EnsembleReport:
    f1s = [corpus_f1(p, golds, conventions, aggregation).f1 for p in parses_per_restart]
    sf = self_f1(parses_per_restart, conventions, aggregation) if len(f1s) >= 2 else None
    return EnsembleReport(f1s, float(np.mean(f1s)), float(np.std(f1s)), sf)


# ---------------------------------------------------------------------------
# per-label accuracy


@dataclass
class LabelAccuracyRow:
    label: str
    accuracy: float
    accuracy_sd: float
    baseline: float
    baseline_sd: float
    delta: float
    count: int


def _labeled_constituents(gold: GoldTree):
    # unary chains over the same span count once per distinct label
    return {(s.start, s.end, lab) for s, lab in gold_spans(gold, exclude_len1=True, exclude_full=True)}


def label_counts(golds) -> dict[str, int]:
    counts: dict[str, int] = {}
    for g in golds:
        if g is None:
            continue
        for _, _, lab in _labeled_constituents(g):
            counts[lab] = counts.get(lab, 0) + 1
    return counts


def label_accuracies(preds, golds) -> dict[str, float]:
    """Percent of gold constituents per label whose exact span the parse contains."""
    hit: dict[str, int] = {}
    tot: dict[str, int] = {}
    for p, g in zip(preds, golds):
        if p is None or g is None:
            continue
        pspans = span_set(p, Conventions(False, False))
        for a, b, lab in _labeled_constituents(g):
            tot[lab] = tot.get(lab, 0) + 1
            hit[lab] = hit.get(lab, 0) + ((a, b) in pspans)
    return {lab: 100.0 * hit[lab] / tot[lab] for lab in tot}


def label_accuracy(preds_per_restart, golds, baseline_per_restart=None, min_count=5) -> list[LabelAccuracyRow]:
    """Rows for every label occurring more than ``min_count`` times, sorted by descending delta.

    Whole-sentence and single-token constituents are excluded on both sides
    of the ratio.  ``baseline_per_restart`` defaults to no baseline (zeros).
    """
    counts = label_counts(golds)
    labels = sorted(lab for lab, c in counts.items() if c > min_count)
    acc = [label_accuracies(p, golds) for p in preds_per_restart]
    base = [label_accuracies(p, golds) for p in baseline_per_restart] if baseline_per_restart else None
    rows = []
    for lab in labels:
        a = [d[lab] for d in acc]
        b = [d[lab] for d in base] if base else [0.0]
        rows.append(
            LabelAccuracyRow(
                lab,
                float(np.mean(a)),
                float(np.std(a)),
                float(np.mean(b)),
                float(np.std(b)),
                float(np.mean(a) - np.mean(b)),
                counts[lab],
            )
        )
    rows.sort(key=lambda r: (-r.delta, r.label))
    return rows


# ---------------------------------------------------------------------------
# SBAR highest-split study


@dataclass(frozen=True)
class SbarInstance:
    sentence: int
    start: int
    end: int


@dataclass
class SbarCaseCounts:
    verb: float
    border: float
    other: float
    n: int
    skipped: int = 0


def classify_highest_split(heights, tags: Sequence[str], start: int, end: int, verb_tags=VERB_TAGS) -> int:
    """Case of the highest split point over a clause ``[start, end]``.

    Candidates are the split before ``start``, every internal split, and the
    split after ``end``; a split "before token k" has height ``heights[k-1]``.
    Returns 2 for a border split, 1 for a split right before a verbal tag,
    3 otherwise.  Ties go to the leftmost candidate, as in tree building.
    """
    n = len(tags)
    if start == 0 and end == n - 1:
        raise ValueError("clause spans the whole sentence")
    positions = [k for k in range(start, end + 2) if 1 <= k <= n - 1]
    hs = np.array([heights[k - 1] for k in positions])
    k = positions[int(np.argmax(hs))]
    if k == start or k == end + 1:
        return 2
    if tags[k] in verb_tags:
        return 1
    return 3


def sbar_case_study(heights_per_sentence, golds, sample: Sequence[SbarInstance]) -> SbarCaseCounts:
    cases = {1: 0, 2: 0, 3: 0}
    skipped = 0
    for inst in sample:
        g = golds[inst.sentence]
        if inst.start == 0 and inst.end == len(g) - 1:
            skipped += 1
            continue
        c = classify_highest_split(heights_per_sentence[inst.sentence], g.tags(), inst.start, inst.end)
        cases[c] += 1
    if skipped:
        log.warning("skipped %d whole-sentence SBAR instances", skipped)
    n = sum(cases.values())
    pct = (lambda c: 100.0 * cases[c] / n) if n else (lambda c: 0.0)
    return SbarCaseCounts(pct(1), pct(2), pct(3), n, skipped)


def sbar_instances(golds, label="SBAR") -> list[SbarInstance]:
    """Every multi-token ``label`` constituent that is not the whole sentence."""
    out = []
    for i, g in enumerate(golds):
        if g is None:
            continue
        for (a, b, lab) in sorted(_labeled_constituents(g)):
            if lab == label:
                out.append(SbarInstance(i, a, b))
    return out


def sample_sbars(golds, k=30, seed=0, label="SBAR") -> list[SbarInstance]:
    pool = sbar_instances(golds, label)
    if len(pool) < k:
        warnings.warn(f"only {len(pool)} {label} instances available, wanted {k}")
        return pool
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(pool), size=k, replace=False))
    return [pool[i] for i in idx]


# ---------------------------------------------------------------------------
# reports

TABLE1_HEADER = ["model", "test_set", "f1", "sd", "self_f1"]
TABLE2_HEADER = ["constituent", "accuracy", "sd", "random", "random_sd", "delta_acc", "count"]
TABLE3_HEADER = ["model", "case1_verb", "case2_border", "case3_other", "n"]


def _fmt(x):
    return "" if x is None else f"{100 * x:.1f}"


def table1_rows(entries) -> list[list[str]]:
    """``entries``: dicts with model, test_set, mean, sd, self_f1 (fractions)."""
    return [[e["model"], e["test_set"], _fmt(e["mean"]), _fmt(e["sd"]), _fmt(e["self_f1"])] for e in entries]


def table2_rows(rows) -> list[list[str]]:
    rows = sorted(rows, key=lambda r: (-r["delta"], r["label"]))
    return [
        [r["label"], f"{r['accuracy']:.1f}", f"{r['accuracy_sd']:.1f}", f"{r['baseline']:.1f}",
         f"{r['baseline_sd']:.1f}", f"{r['delta']:.1f}", str(r["count"])]
        for r in rows
    ]


def table3_rows(entries) -> list[list[str]]:
    return [[e["model"], f"{e['verb']:.1f}", f"{e['border']:.1f}", f"{e['other']:.1f}", str(e["n"])] for e in entries]


def _tsv(header, rows) -> str:
    return "".join("\t".join(r) + "\n" for r in [header] + rows)


def make_report(report: dict, out_dir) -> dict[str, Path]:
    """Write ``report.json`` and the three TSV tables from a report dict.

    Expected keys: ``table1`` (list of ensemble entries), ``table2`` (label
    rows as dicts), ``table3`` (per-restart SBAR entries, gold row included).
    Missing keys produce header-only tables.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report.json": out / "report.json",
        "table1.tsv": out / "table1.tsv",
        "table2.tsv": out / "table2.tsv",
        "table3.tsv": out / "table3.tsv",
    }
    texts = {
        "report.json": json.dumps(report, indent=2, sort_keys=True) + "\n",
        "table1.tsv": _tsv(TABLE1_HEADER, table1_rows(report.get("table1", []))),
        "table2.tsv": _tsv(TABLE2_HEADER, table2_rows(report.get("table2", []))),
        "table3.tsv": _tsv(TABLE3_HEADER, table3_rows(report.get("table3", []))),
    }
    for name, text in texts.items():
        _atomic_write(paths[name], text)
    return paths


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)

