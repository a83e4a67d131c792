import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from onlstm_lab.induction import (
    build_tree,
    gold_heights,
    heights_from_trace,
    leaves,
    parse_bracketed,
    random_parse,
    read_heights,
    read_parses,
    render_parse,
    tree_spans,
    write_heights,
    write_parses,
)
from onlstm_lab.model import MasterGateTrace
from onlstm_lab.treebank import normalize_tree, parse_ptb

from oracles import brute_build_spans, shape_distribution


def test_heights_from_trace_first_split_rule():
    assert heights_from_trace(np.array([[5.0, 2.0, 7.0, 1.0]]), 1).tolist() == [5.0, 7.0, 1.0]
    assert heights_from_trace(np.array([[1.0, 9.0]]), 1).tolist() == [9.0]
    assert heights_from_trace(np.array([[3.0]]), 1).tolist() == []


def test_heights_from_trace_uses_only_selected_layer():
    d = np.array([[5.0, 2.0, 7.0, 1.0], [0.0, 1.0, 2.0, 3.0]])
    zeroed = d.copy()
    zeroed[0] = 0.0
    assert heights_from_trace(d, 2).tolist() == heights_from_trace(zeroed, 2).tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        heights_from_trace(d, 3)


def test_heights_from_trace_accepts_gate_trace():
    heights = np.array([[[5.0], [2.0], [7.0]]])  # (L, T, B)
    trace = MasterGateTrace([np.zeros((3, 1, 2))], heights)
    assert heights_from_trace(trace.sentence_heights(0), 1).tolist() == [5.0, 7.0]


def test_build_tree_examples():
    assert build_tree([3, 1, 2]) == (0, ((1, 2), 3))
    assert build_tree([0.5]) == (0, 1)
    # ties: the leftmost maximum splits first
    assert build_tree([1, 1]) == (0, (1, 2))
    assert build_tree([1, 1], tie_break="rightmost") == ((0, 1), 2)
    assert build_tree([]) == 0


def test_render_words():
    words = ["the", "interest-only", "securities"]
    assert render_parse(build_tree([2, 1]), words) == "( the ( interest-only securities ) )"
    tree, back = parse_bracketed("( the ( interest-only securities ) )")
    assert tree == (0, (1, 2)) and back == words
    assert parse_bracketed("solo") == (0, ["solo"])


def test_parse_and_heights_files(tmp_path):
    parses = [build_tree([3, 1, 2]), 0, build_tree([1.0])]
    words = [list("abcd"), ["x"], ["y", "z"]]
    write_parses(tmp_path / "p.parse", parses, words)
    assert read_parses(tmp_path / "p.parse") == parses
    hs = [np.array([3.0, 1.0, 2.0]), np.zeros(0), np.array([0.125])]
    write_heights(tmp_path / "p.heights", hs)
    lines = (tmp_path / "p.heights").read_text().splitlines()
    assert lines[0] == "0\t3.0\t1.0\t2.0" and lines[1] == "1"
    back = read_heights(tmp_path / "p.heights")
    assert all(np.array_equal(a, b) for a, b in zip(back, hs))


@pytest.mark.parametrize("n", range(1, 9))
def test_build_tree_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(200):
        h = rng.permutation(n - 1).astype(float) + rng.random(n - 1) * 0.5
        assert set(tree_spans(build_tree(h))) == brute_build_spans(list(h))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=0, max_size=15))
def test_build_tree_structure(h):
    t = build_tree(h)
    assert leaves(t) == list(range(len(h) + 1))
    assert len(tree_spans(t)) == len(h)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-40, 40), min_size=1, max_size=12, unique=True))
def test_build_tree_monotone_relabeling(h):
    h = np.array(h, dtype=float) / 4
    for f in (np.exp, lambda x: 3 * x + 7, np.arctan, lambda x: x ** 3):
        assert build_tree(f(h)) == build_tree(h)


def test_random_parse_reproducible():
    a = random_parse(12, np.random.default_rng(3))
    b = random_parse(12, np.random.default_rng(3))
    assert a == b
    assert random_parse(1, np.random.default_rng(0)) == 0


def test_shape_distribution_enumeration():
    d3 = shape_distribution(3)
    assert sorted(d3.values()) == [0.5, 0.5]
    d4 = shape_distribution(4)
    assert len(d4) == 5
    assert d4[((0, 1), (2, 3))] == pytest.approx(1 / 3)
    assert sorted(d4.values())[:4] == [pytest.approx(1 / 6)] * 4


def test_random_parse_n3_chi_square():
    rng = np.random.default_rng(0)
    draws = [random_parse(3, rng) for _ in range(10_000)]
    shapes = sorted(set(draws), key=repr)
    observed = [draws.count(s) for s in shapes]
    assert len(shapes) == 2
    assert stats.chisquare(observed).pvalue > 0.01


def test_gold_heights_reproduce_binary_gold():
    t = normalize_tree(parse_ptb("(S (NP (DT the) (NN cat)) (VP (VBD saw) (NP (DT a) (NN dog))))")[0])
    assert build_tree(gold_heights(t)) == ((0, 1), (2, (3, 4)))
