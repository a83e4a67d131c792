"""Independent reference implementations used only by the tests."""

import itertools
from fractions import Fraction

import numpy as np


def brute_build_spans(heights):
    """Repeatedly remove the global maximum split and record the two halves."""
    n = len(heights) + 1
    spans = set()
    pending = [(0, n - 1)]
    while pending:
        lo, hi = pending.pop()
        if lo == hi:
            continue
        spans.add((lo, hi))
        best = None
        for k in range(lo, hi):
            if best is None or heights[k] > heights[best]:
                best = k
        pending.append((lo, best))
        pending.append((best + 1, hi))
    return spans


def nested_spans(nested):
    """Spans of a tree given as nested lists of leaf indices, found via leaf ranges."""
    spans = set()

    def flat(node):
        if not isinstance(node, list):
            return [int(node)]
        return [x for child in node for x in flat(child)]

    def walk(node):
        if not isinstance(node, list):
            return
        ids = flat(node)
        spans.add((min(ids), max(ids)))
        for child in node:
            walk(child)

    walk(nested)
    return spans


def random_nested(rng, lo, hi, binary):
    """Random bracketing of leaves ``lo..hi`` as nested lists."""
    if lo == hi:
        return int(lo)
    n = hi - lo + 1
    k = 2 if binary else int(rng.integers(2, min(n, 4) + 1))
    cuts = sorted(rng.choice(np.arange(lo + 1, hi + 1), size=k - 1, replace=False))
    bounds = [lo] + list(cuts) + [hi + 1]
    return [random_nested(rng, a, b - 1, binary) for a, b in zip(bounds, bounds[1:])]


def set_f1(pred, gold):
    """F1 with exact rationals; empty sides count as perfect precision / recall."""
    m = len(pred & gold)
    p = Fraction(m, len(pred)) if pred else Fraction(1)
    r = Fraction(m, len(gold)) if gold else Fraction(1)
    return float(2 * p * r / (p + r)) if p + r else 0.0


def shape_distribution(n):
    """Exact shape probabilities of the permutation baseline, by enumeration."""
    from onlstm_lab.induction import build_tree

    counts = {}
    perms = list(itertools.permutations(range(n - 1)))
    for perm in perms:
        t = build_tree(np.array(perm, dtype=float))
        counts[t] = counts.get(t, Fraction(0)) + Fraction(1, len(perms))
    return counts


def fd_gradient(loss_fn, params, name, idx, eps=1e-5):
    """Central difference of ``loss_fn`` w.r.t. ``params[name][idx]`` in extended precision."""
    p = params[name]
    old = p[idx]
    e = np.longdouble(eps)
    p[idx] = old + e
    up = loss_fn(params)
    p[idx] = old - e
    down = loss_fn(params)
    p[idx] = old
    return float((up - down) / (2 * e))


def extended_loss(config, ids, masks=None):
    """Mean next-token NLL in ``np.longdouble`` for finite differencing.

    Returns a closure over longdouble parameters; masks are cast to match.
    """
    from onlstm_lab import model as M

    arr = np.asarray(ids)
    arr = arr[:, None] if arr.ndim == 1 else arr
    ld = None
    if masks is not None:
        cast = lambda m: None if m is None else np.asarray(m, np.longdouble)
        ld = M.Masks(cast(masks.input), [cast(m) for m in masks.hidden],
                     [cast(m) for m in masks.recurrent], cast(masks.output))

    def loss(params):
        logits, _, _, _ = M._forward(params, config, arr[:-1], None, ld, False)
        return M._nll(logits, arr[1:]).mean()

    return loss


def max_relative_error(params64, grads, config, ids, rng, entries, masks=None):
    """Worst relative error over ``entries`` randomly chosen coordinates per tensor."""
    loss = extended_loss(config, ids, masks)
    params = {k: v.astype(np.longdouble) for k, v in params64.items()}
    worst = 0.0
    for name, p in params.items():
        flat = [np.unravel_index(j, p.shape) for j in rng.choice(p.size, min(entries, p.size), replace=False)]
        for idx in flat:
            num = fd_gradient(loss, params, name, idx)
            ana = float(grads[name][idx])
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    return worst
