from onlstm_lab.synthetic import SPLIT_SIZES, bundled_corpus_dir, generate_corpus, write_bundle
from onlstm_lab.treebank import build_vocab, normalize_corpus, read_treebank


def test_bundle_matches_regeneration(tmp_path):
    paths = write_bundle(tmp_path)
    for name, p in paths.items():
        assert p.read_bytes() == (bundled_corpus_dir() / f"{name}.mrg").read_bytes()


def test_bundle_sizes_and_vocabulary():
    trees = {s: read_treebank(bundled_corpus_dir() / f"{s}.mrg") for s in SPLIT_SIZES}
    assert {s: len(t) for s, t in trees.items()} == SPLIT_SIZES
    kept, skipped = normalize_corpus(trees["train"])
    assert not skipped
    vocab = build_vocab(t.words() for t in kept)
    assert len(vocab) <= 200
    labels = {node.label for t in kept for node in t.subtrees() if not node.is_leaf}
    assert {"S", "NP", "VP", "PP", "SBAR"} <= labels


def test_generation_is_seeded():
    a = generate_corpus(20, seed=1)
    b = generate_corpus(20, seed=1)
    assert [t.words() for t in a] == [t.words() for t in b]
    assert all(3 <= len(t) <= 20 for t in a)
