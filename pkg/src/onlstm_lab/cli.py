"""Command-line pipeline: ingest -> train -> parse -> eval -> report.

Every stage records its config, input and output checksums in
``<root>/manifest.json`` and is skipped when nothing changed.  The output
root comes from ``--root`` or ``$ONLSTM_LAB_ROOT``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (
    AlignmentError,
    Conventions,
    ensemble_report,
    label_accuracy,
    make_report,
    sample_sbars,
    sbar_case_study,
    table1_rows,
    table2_rows,
    table3_rows,
    TABLE1_HEADER,
    TABLE2_HEADER,
    TABLE3_HEADER,
)
from .induction import (
    build_tree,
    gold_heights,
    num_leaves,
    parse_corpus,
    read_heights,
    read_parses,
    write_heights,
    write_parses,
)
from .model import CheckpointError, NumericalError, load_checkpoint
from .synthetic import bundled_corpus_dir
from .training import MAX_VOCAB, PRESETS, checkpoint_name, dump_config, load_config, perplexity, train
from .treebank import (
    DEFAULT_SECTIONS,
    CorpusSplit,
    NormalizationPolicy,
    TreebankError,
    Vocabulary,
    build_vocab,
    normalize_corpus,
    parse_section_manifest,
    read_treebank,
    section_files,
    wsj10_view,
    write_trees,
)

log = logging.getLogger("onlstm_lab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ROOT_ENV = "ONLSTM_LAB_ROOT"
SPLITS = ("train", "dev", "test")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# manifest


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    def __init__(self, root: Path):
        self.root = root
        self.path = root / "manifest.json"
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
        else:
            self.data = {"tool_version": __version__, "stages": {}}

    def rel(self, path) -> str:
        p = Path(path)
        try:
            return str(p.resolve().relative_to(self.root.resolve()))
        except ValueError:
            return str(p.resolve())

    def checksums(self, paths) -> dict:
        return {self.rel(p): sha256(p) for p in sorted(paths, key=str)}

    def up_to_date(self, key, config, inputs) -> bool:
        entry = self.data["stages"].get(key)
        if entry is None or entry["config"] != config:
            return False
        if entry["inputs"] != self.checksums(inputs):
            return False
        for rel, digest in entry["outputs"].items():
            p = Path(rel) if os.path.isabs(rel) else self.root / rel
            if not p.exists() or sha256(p) != digest:
                return False
        return True

    def record(self, key, config, inputs, outputs, **extra) -> None:
        self.data["tool_version"] = __version__
        self.data["stages"][key] = {
            "config": config,
            "inputs": self.checksums(inputs),
            "outputs": self.checksums(outputs),
            **extra,
        }
        self.save()

    def save(self) -> None:
        tmp = self.path.with_name("manifest.json.tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        tmp.replace(self.path)


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))


# ---------------------------------------------------------------------------
# layout


def corpus_dir(root: Path) -> Path:
    return root / "corpus"


def split_path(root: Path, name: str) -> Path:
    return corpus_dir(root) / f"{name}.trees"


def load_split(root: Path, name: str, vocab: Vocabulary | None = None) -> CorpusSplit:
    path = split_path(root, name)
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'ingest' first")
    split = CorpusSplit(name, read_treebank(path))
    return split.encode(vocab) if vocab is not None else split


def load_vocab(root: Path) -> Vocabulary:
    return Vocabulary.from_tsv((corpus_dir(root) / "vocab.tsv").read_text(encoding="utf-8"))


def list_checkpoints(root: Path, run_name: str) -> dict[int, Path]:
    out = {}
    for p in (root / "checkpoints").glob(f"{run_name}.seed*.ckpt"):
        m = re.fullmatch(re.escape(run_name) + r"\.seed(\d+)\.ckpt", p.name)
        if m:
            out[int(m.group(1))] = p
    return dict(sorted(out.items()))


def parse_file(root: Path, split: str, seed: int, layer: int | None) -> Path:
    tag = f"seed{seed}.layer{layer}" if layer is not None else f"random.seed{seed}"
    return root / "parses" / f"{split}.{tag}.parse"


def _write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# ---------------------------------------------------------------------------
# stages


def _source_files(source: str, manifest_file):
    """Map split -> list of treebank files for a PTB layout or a split directory."""
    if source == "synthetic":
        src = bundled_corpus_dir()
    else:
        src = Path(source)
    if not src.exists():
        raise FileNotFoundError(f"treebank source {src} does not exist")
    if src.is_dir() and all((src / f"{s}.mrg").exists() for s in SPLITS):
        return {s: [src / f"{s}.mrg"] for s in SPLITS}, "split-files"
    sections = DEFAULT_SECTIONS
    if manifest_file:
        sections = parse_section_manifest(Path(manifest_file).read_text())
    return section_files(src, sections), "ptb-sections"


def cmd_ingest(args, root: Path) -> int:
    files, layout = _source_files(args.source, args.sections)
    policy = NormalizationPolicy(drop_punctuation=not args.keep_punctuation)
    config = {
        "source_layout": layout,
        "drop_punctuation": policy.drop_punctuation,
        "max_vocab": args.max_vocab,
        "min_freq": args.min_freq,
        "splits": {k: [Path(f).name for f in v] for k, v in files.items()},
    }
    inputs = [f for fs in files.values() for f in fs]
    manifest = Manifest(root)
    if manifest.up_to_date("ingest", config, inputs):
        print("ingest: up to date")
        return EXIT_OK
    corpus_dir(root).mkdir(parents=True, exist_ok=True)
    splits, skipped = {}, {}
    for name, paths in files.items():
        trees = []
        for p in paths:
            trees.extend(read_treebank(p))
        kept, dropped = normalize_corpus(trees, policy)
        splits[name] = CorpusSplit(name, kept)
        skipped[name] = len(dropped)
    if "train" not in splits:
        raise UsageError("the section manifest must define a 'train' split")
    vocab = build_vocab([t.words() for t in splits["train"].trees], args.max_vocab, args.min_freq)
    outputs = []
    for name, split in splits.items():
        path = split_path(root, name)
        write_trees(split.trees, path)
        outputs.append(path)
        if name != "train":
            view = wsj10_view(split)
            vpath = split_path(root, f"{name}.wsj10")
            write_trees(view.trees, vpath)
            outputs.append(vpath)
    vpath = corpus_dir(root) / "vocab.tsv"
    _write_text_atomic(vpath, vocab.to_tsv())
    outputs.append(vpath)
    manifest.record("ingest", config, inputs, outputs, skipped_degenerate=skipped)
    sizes = ", ".join(f"{k}={len(v)}" for k, v in splits.items())
    print(f"ingest: {sizes}; vocabulary {len(vocab)}")
    return EXIT_OK


def _train_configs(args, vocab_size):
    text = Path(args.config).read_text() if args.config else ""
    mc, tc = load_config(text, args.preset, vocab_size)
    return mc, tc


def cmd_train(args, root: Path) -> int:
    vocab = load_vocab(root)
    if args.dump_config:
        mc, tc = _train_configs(args, len(vocab))
        print(dump_config(mc, tc), end="")
        return EXIT_OK
    if len(vocab) > MAX_VOCAB.get(args.preset, len(vocab)) + 2:
        log.warning("vocabulary of %d exceeds the %s preset's cap", len(vocab), args.preset)
    mc, tc = _train_configs(args, len(vocab))
    train_split = load_split(root, "train", vocab)
    dev_split = load_split(root, "dev", vocab)
    inputs = [split_path(root, "train"), split_path(root, "dev"), corpus_dir(root) / "vocab.tsv"]
    manifest = Manifest(root)
    (root / "checkpoints").mkdir(parents=True, exist_ok=True)
    (root / "logs").mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for seed in range(args.base_seed, args.base_seed + args.seeds):
        tcs = replace(tc, seed=seed)
        key = f"train.{args.run_name}.seed{seed}"
        config = {"model": asdict(mc), "train": asdict(tcs), "preset": args.preset}
        ckpt_path = root / "checkpoints" / checkpoint_name(args.run_name, seed)
        log_path = root / "logs" / f"{args.run_name}.seed{seed}.tsv"
        if manifest.up_to_date(key, config, inputs):
            print(f"train seed {seed}: up to date")
            continue
        try:
            ckpt, tlog = train(train_split, dev_split, vocab, mc, tcs, ckpt_path, args.run_name)
        except NumericalError as err:
            print(f"train seed {seed}: numerical failure: {err}", file=sys.stderr)
            status = max(status, EXIT_NUMERIC)
            continue
        except Exception as err:  # isolate per-seed failures
            print(f"train seed {seed}: failed: {err}", file=sys.stderr)
            status = max(status, EXIT_DATA)
            continue
        _write_text_atomic(log_path, tlog.to_tsv())
        manifest.record(key, config, inputs, [ckpt_path, log_path], seed=seed)
        if tlog.diverged:
            print(f"train seed {seed}: diverged; kept best checkpoint", file=sys.stderr)
            status = max(status, EXIT_NUMERIC)
        print(f"train seed {seed}: best dev ppl {ckpt.meta['valid_ppl']:.3f} (epoch {tlog.best_epoch})")
    return status


def cmd_parse(args, root: Path) -> int:
    split = load_split(root, args.split)
    words = [t.words() for t in split.trees]
    inputs0 = [split_path(root, args.split)]
    manifest = Manifest(root)
    (root / "parses").mkdir(parents=True, exist_ok=True)
    written = 0
    if args.baseline == "random":
        for seed in args.seeds or [args.seed]:
            key = f"parse.{args.split}.random.seed{seed}"
            out = parse_file(root, args.split, seed, None)
            if manifest.up_to_date(key, {"seed": seed}, inputs0):
                print(f"parse {out.name}: up to date")
                continue
            rng = np.random.default_rng(seed)
            heights = [rng.permutation(max(len(w) - 1, 0)).astype(float) for w in words]
            parses = [build_tree(h) for h in heights]
            write_parses(out, parses, words)
            write_heights(out.with_suffix(".heights"), heights)
            manifest.record(key, {"seed": seed}, inputs0, [out, out.with_suffix(".heights")])
            written += 1
        print(f"parse: {written} random baseline file(s) written")
        return EXIT_OK
    ckpts = list_checkpoints(root, args.run_name)
    if args.seeds:
        ckpts = {s: p for s, p in ckpts.items() if s in set(args.seeds)}
    if not ckpts:
        raise FileNotFoundError(f"no checkpoints named {args.run_name}.seed*.ckpt under {root / 'checkpoints'}")
    for seed, path in ckpts.items():
        ckpt = load_checkpoint(path)
        layers = args.layer or list(range(1, ckpt.config.num_layers + 1))
        for layer in layers:
            if not 1 <= layer <= ckpt.config.num_layers:
                raise UsageError(f"--layer {layer} out of range 1..{ckpt.config.num_layers}")
            key = f"parse.{args.split}.seed{seed}.layer{layer}"
            out = parse_file(root, args.split, seed, layer)
            inputs = inputs0 + [path]
            if manifest.up_to_date(key, {"layer": layer, "run_name": args.run_name}, inputs):
                print(f"parse {out.name}: up to date")
                continue
            parses, heights = parse_corpus(ckpt, split, layer, return_heights=True)
            write_parses(out, parses, words)
            write_heights(out.with_suffix(".heights"), heights)
            manifest.record(key, {"layer": layer, "run_name": args.run_name}, inputs,
                            [out, out.with_suffix(".heights")])
            written += 1
    print(f"parse: {written} file(s) written")
    return EXIT_OK


def _discover(root: Path, split: str):
    """``{layer: {seed: path}}`` for model parses and ``{seed: path}`` for random ones."""
    model, rand = {}, {}
    for p in sorted((root / "parses").glob(f"{split}.*.parse")):
        rest = p.name[len(split) + 1 : -len(".parse")]
        m = re.fullmatch(r"seed(\d+)\.layer(\d+)", rest)
        if m:
            model.setdefault(int(m.group(2)), {})[int(m.group(1))] = p
            continue
        m = re.fullmatch(r"random\.seed(\d+)", rest)
        if m:
            rand[int(m.group(1))] = p
    return model, rand


def _read_aligned(path: Path, golds) -> list:
    parses = read_parses(path)
    if len(parses) != len(golds):
        raise AlignmentError(f"{path.name}: {len(parses)} parses for {len(golds)} gold trees")
    for i, (p, g) in enumerate(zip(parses, golds)):
        if num_leaves(p) != len(g):
            raise AlignmentError(f"{path.name}: sentence {i} has {num_leaves(p)} leaves, gold has {len(g)}")
    return parses


def _ensemble_entry(name, test_set, parse_paths, golds, conv, aggregation):
    parses = [_read_aligned(p, golds) for p in parse_paths.values()]
    rep = ensemble_report(parses, golds, conv, aggregation)
    return {
        "model": name,
        "test_set": test_set,
        "seeds": list(parse_paths),
        "f1s": rep.f1s,
        "mean": rep.mean,
        "sd": rep.sd,
        "self_f1": rep.self_f1,
    }


def _perplexities(root: Path, splits, run_name):
    ckpts = list_checkpoints(root, run_name)
    if not ckpts:
        return {}, []
    vocab = load_vocab(root)
    loaded = {seed: load_checkpoint(p) for seed, p in ckpts.items()}
    out = {}
    for split in splits:
        data = load_split(root, split, vocab)
        per_seed = {str(seed): perplexity(ck, data) for seed, ck in loaded.items()}
        vals = list(per_seed.values())
        out[split] = {"per_seed": per_seed, "mean": float(np.mean(vals)), "sd": float(np.std(vals))}
    return out, list(ckpts.values())


def build_report(root: Path, splits, analysis_split, analysis_layer, min_count=5, sbar_k=30,
                 sbar_seed=0, conv=Conventions(), aggregation="macro", run_name="onlstm") -> tuple[dict, list]:
    inputs = []
    table1 = []
    for split in splits:
        golds = load_split(root, split).trees
        inputs.append(split_path(root, split))
        model, rand = _discover(root, split)
        if not model and not rand:
            raise FileNotFoundError(f"no parse files for split {split!r}; run 'parse' first")
        for layer in sorted(model):
            table1.append(_ensemble_entry(f"ON-LSTM layer{layer}", split, model[layer], golds, conv, aggregation))
            inputs.extend(model[layer].values())
        if rand:
            table1.append(_ensemble_entry("Random", split, rand, golds, conv, aggregation))
            inputs.extend(rand.values())
    report = {
        "tool_version": __version__,
        "conventions": {**asdict(conv), "aggregation": aggregation},
        "table1": table1,
        "table2": [],
        "table3": [],
    }
    ppl, ckpt_paths = _perplexities(root, splits, run_name)
    if ppl:
        report["perplexity"] = ppl
        inputs.extend(ckpt_paths)
    if analysis_split:
        golds = load_split(root, analysis_split).trees
        inputs.append(split_path(root, analysis_split))
        model, rand = _discover(root, analysis_split)
        if analysis_layer not in model:
            raise FileNotFoundError(f"no layer {analysis_layer} parses for split {analysis_split!r}")
        paths = model[analysis_layer]
        preds = [_read_aligned(p, golds) for p in paths.values()]
        base = [_read_aligned(p, golds) for p in rand.values()] if rand else None
        rows = label_accuracy(preds, golds, base, min_count=min_count)
        report["table2"] = [asdict(r) for r in rows]
        sample = sample_sbars(golds, sbar_k, sbar_seed)
        report["sbar_sample"] = [asdict(s) for s in sample]
        for seed, p in paths.items():
            heights = read_heights(p.with_suffix(".heights"))
            counts = sbar_case_study(heights, golds, sample)
            report["table3"].append({"model": f"ON-LSTM seed{seed}", **asdict(counts)})
        gold_counts = sbar_case_study([gold_heights(g) for g in golds], golds, sample)
        report["table3"].append({"model": "Gold", **asdict(gold_counts)})
        report["analysis"] = {"split": analysis_split, "layer": analysis_layer, "min_count": min_count,
                              "sbar_sample_size": sbar_k, "sbar_seed": sbar_seed}
        inputs.extend(paths.values())
        inputs.extend(p.with_suffix(".heights") for p in paths.values())
        if rand:
            inputs.extend(rand.values())
    return report, inputs


def cmd_eval(args, root: Path) -> int:
    conv = Conventions(exclude_len1=not args.keep_len1, exclude_full=not args.keep_full)
    report, inputs = build_report(
        root, args.splits, args.analysis_split, args.analysis_layer, args.min_count,
        args.sbar_sample, args.sbar_seed, conv, args.aggregation, args.run_name,
    )
    out = Path(args.out) if args.out else root / "report"
    config = {k: v for k, v in vars(args).items() if k not in ("func", "root", "verbose")}
    manifest = Manifest(root)
    if manifest.up_to_date("eval", _jsonable(config), inputs):
        print("eval: up to date")
        return EXIT_OK
    paths = make_report(report, out)
    manifest.record("eval", _jsonable(config), inputs, list(paths.values()))
    print(Path(paths["table1.tsv"]).read_text(), end="")
    return EXIT_OK


def cmd_report(args, root: Path) -> int:
    src = Path(args.report) if args.report else root / "report" / "report.json"
    report = json.loads(src.read_text())
    if args.out:
        make_report(report, args.out)
    for title, header, rows in (
        ("Table 1", TABLE1_HEADER, table1_rows(report.get("table1", []))),
        ("Table 2", TABLE2_HEADER, table2_rows(report.get("table2", []))),
        ("Table 3", TABLE3_HEADER, table3_rows(report.get("table3", []))),
    ):
        print(f"# {title}")
        print("\t".join(header))
        for r in rows:
            print("\t".join(r))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="onlstm-lab", description=__doc__.splitlines()[0])
    p.add_argument("--root", help=f"output root (default ${ROOT_ENV} or ./onlstm-run)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="read, normalize and split a treebank")
    s.add_argument("source", help="PTB directory with section subdirectories, a directory holding "
                                  "train/dev/test.mrg, or 'synthetic' for the bundled corpus")
    s.add_argument("--sections", help="section manifest (lines like 'train = 00-21')")
    s.add_argument("--keep-punctuation", action="store_true")
    s.add_argument("--max-vocab", type=int, default=10_002, help="vocabulary size incl. reserved symbols")
    s.add_argument("--min-freq", type=int, default=1)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train language-model restarts")
    s.add_argument("--seeds", type=int, default=1, help="number of restarts")
    s.add_argument("--base-seed", type=int, default=0)
    s.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    s.add_argument("--config", help="key = value config file with [model]/[train] sections")
    s.add_argument("--run-name", default="onlstm")
    s.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("parse", help="induce binary parses")
    s.add_argument("--split", required=True, help="corpus split, e.g. test, dev, test.wsj10")
    s.add_argument("--layer", type=int, nargs="+", help="1-based layer(s); default all")
    s.add_argument("--run-name", default="onlstm")
    s.add_argument("--baseline", choices=["random"], help="model-free baseline instead of checkpoints")
    s.add_argument("--seed", type=int, default=0, help="baseline seed")
    s.add_argument("--seeds", type=int, nargs="+", help="restrict to these checkpoint / baseline seeds")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("eval", help="compute metrics and write report.json + tables")
    s.add_argument("--splits", nargs="+", default=["test", "test.wsj10"])
    s.add_argument("--analysis-split", default="dev", help="split for label accuracy and SBAR study ('' to skip)")
    s.add_argument("--analysis-layer", type=int, default=2)
    s.add_argument("--min-count", type=int, default=5)
    s.add_argument("--sbar-sample", type=int, default=30)
    s.add_argument("--sbar-seed", type=int, default=0)
    s.add_argument("--aggregation", choices=["macro", "micro"], default="macro")
    s.add_argument("--run-name", default="onlstm", help="checkpoints scored for perplexity")
    s.add_argument("--keep-full", action="store_true", help="count whole-sentence spans")
    s.add_argument("--keep-len1", action="store_true", help="count single-token spans")
    s.add_argument("--out", help="report directory (default <root>/report)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="print (and optionally re-emit) tables from report.json")
    s.add_argument("--report", help="path to report.json (default <root>/report/report.json)")
    s.add_argument("--out", help="directory to re-emit report files into")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    root = Path(args.root or os.environ.get(ROOT_ENV, "onlstm-run"))
    root.mkdir(parents=True, exist_ok=True)
    try:
        return args.func(args, root)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TreebankError, AlignmentError, CheckpointError, FileNotFoundError, ValueError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
