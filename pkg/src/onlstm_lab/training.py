"""Seeded language-model training with truncated BPTT and plain SGD."""

from __future__ import annotations

import configparser
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .model import (
    Checkpoint,
    ModelConfig,
    NumericalError,
    _forward,
    _nll,
    init_params,
    loss_and_gradients,
    save_checkpoint,
    zero_states,
)
from .treebank import CorpusSplit, Vocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 20
    batch_size: int = 20
    bptt: int = 35
    lr: float = 20.0
    lr_decay: float = 0.25
    patience: int = 1
    clip: float = 0.25
    weight_decay: float = 1.2e-6
    eval_batch_size: int = 10

    def __post_init__(self):
        for name in ("batch_size", "bptt", "patience", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.clip <= 0:
            raise ValueError("clip must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_ppl: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    init_valid_ppl: float | None = None
    best_epoch: int = 0
    diverged: bool = False

    def to_tsv(self, with_time=True) -> str:
        cols = ["epoch", "train_loss", "valid_ppl", "lr"] + (["seconds"] if with_time else [])
        lines = ["\t".join(cols)]
        for r in self.records:
            row = [str(r.epoch), f"{r.train_loss:.6f}", f"{r.valid_ppl:.6f}", repr(r.lr)]
            if with_time:
                row.append(f"{r.seconds:.2f}")
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# streams


def token_stream(split: CorpusSplit | list, eos_id: int = Vocabulary.eos_id) -> np.ndarray:
    """``eos s1 eos s2 eos ...``: every sentence is predicted from a preceding ``eos``."""
    ids = split.ids if isinstance(split, CorpusSplit) else split
    if ids is None:
        raise ValueError("split has no token ids; encode it with a vocabulary first")
    out = [eos_id]
    for sent in ids:
        out.extend(sent)
        out.append(eos_id)
    return np.array(out, dtype=np.int64)


def batchify(stream: np.ndarray, batch_size: int) -> np.ndarray:
    """Chop into ``batch_size`` contiguous lanes, shape ``(rows, batch_size)``; the tail is dropped."""
    rows = len(stream) // batch_size
    return stream[: rows * batch_size].reshape(batch_size, rows).T.copy()


def eval_lanes(stream: np.ndarray, batch_size: int, eos_id: int = Vocabulary.eos_id):
    """Inputs, targets and 0/1 weights covering every prediction in ``stream`` exactly once.

    Lanes are cut only at ``eos`` inputs, so no sentence loses its left
    context to a lane boundary; each lane starts from a zero state.
    """
    n_pred = len(stream) - 1
    if n_pred < 1:
        raise ValueError("cannot score an empty split")
    eos_pos = np.flatnonzero(stream[:-1] == eos_id)
    starts = [0]
    for b in range(1, min(batch_size, n_pred)):
        k = np.searchsorted(eos_pos, b * n_pred / batch_size)
        if k < len(eos_pos) and eos_pos[k] > starts[-1]:
            starts.append(int(eos_pos[k]))
    bounds = starts + [n_pred]
    L = max(hi - lo for lo, hi in zip(bounds, bounds[1:]))
    lanes = len(starts)
    inputs = np.zeros((L, lanes), np.int64)
    targets = np.zeros((L, lanes), np.int64)
    weights = np.zeros((L, lanes))
    for b, (lo, hi) in enumerate(zip(bounds, bounds[1:])):
        inputs[: hi - lo, b] = stream[lo:hi]
        targets[: hi - lo, b] = stream[lo + 1 : hi + 1]
        weights[: hi - lo, b] = 1.0
    return inputs, targets, weights


def mean_nll(params, config: ModelConfig, stream: np.ndarray, batch_size=10, bptt=35) -> float:
    inputs, targets, weights = eval_lanes(stream, batch_size)
    states = None
    total = 0.0
    for i in range(0, len(inputs), bptt):
        logits, _, states, _ = _forward(params, config, inputs[i : i + bptt], states, None, False)
        nll = _nll(logits.astype(np.float64), targets[i : i + bptt])
        total += float((nll * weights[i : i + bptt]).sum())
    return total / float(weights.sum())


def perplexity(checkpoint: Checkpoint, split: CorpusSplit, batch_size=10) -> float:
    """exp(mean NLL) over the split, end-of-sentence predictions included."""
    ids = split.ids if isinstance(split, CorpusSplit) else split
    if not ids:
        raise ValueError("empty split")
    stream = token_stream(ids)
    return float(np.exp(mean_nll(checkpoint.params, checkpoint.config, stream, batch_size)))


def unigram_perplexity(train: CorpusSplit, split: CorpusSplit, vocab_size: int, smoothing=1.0) -> float:
    """Add-``smoothing`` unigram model estimated on ``train``, scored on ``split``'s stream."""
    counts = np.bincount(token_stream(train)[1:], minlength=vocab_size) + smoothing
    logp = np.log(counts / counts.sum())
    s = token_stream(split)[1:]
    return float(np.exp(-logp[s].mean()))


# ---------------------------------------------------------------------------
# training loop


def _clip(grads, max_norm):
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads.values():
            g *= scale
    return norm


def sgd_step(params, grads, lr, clip, weight_decay):
    """In place: L2 term, global-norm clip, SGD update.  Returns the pre-clip norm."""
    if weight_decay:
        for name, p in params.items():
            grads[name] += weight_decay * p
    norm = _clip(grads, clip)
    for name, p in params.items():
        p -= np.asarray(lr, p.dtype) * grads[name]
    return norm


def train_epoch(params, config: ModelConfig, data: np.ndarray, tc: TrainConfig, lr: float, rng) -> float:
    states = zero_states(config, data.shape[1], params["embedding"].dtype)
    total, count = 0.0, 0
    for i in range(0, len(data) - 1, tc.bptt):
        seq = min(tc.bptt, len(data) - 1 - i)
        inputs, targets = data[i : i + seq], data[i + 1 : i + 1 + seq]
        loss, grads, states = loss_and_gradients(inputs, params, config, rng=rng, states=states, targets=targets)
        sgd_step(params, grads, lr, tc.clip, tc.weight_decay)
        total += loss * seq
        count += seq
    return total / max(count, 1)


def _snapshot(params):
    return {k: v.copy() for k, v in params.items()}


def train(train_split: CorpusSplit, dev_split: CorpusSplit, vocab: Vocabulary, model_config: ModelConfig,
          train_config: TrainConfig, checkpoint_path=None, run_name="run"):
    """Train one model; returns ``(best Checkpoint, TrainLog)``.

    Only token ids are read from the splits.  The checkpoint with the best
    per-epoch dev perplexity (initialization included) is kept; the learning
    rate is multiplied by ``lr_decay`` after ``patience`` epochs without
    improvement.  A non-finite loss stops training with the best checkpoint
    so far.
    """
    if len(vocab) != model_config.vocab_size:
        raise ValueError(f"vocabulary has {len(vocab)} entries, model expects {model_config.vocab_size}")
    tc = train_config
    rng = np.random.default_rng(tc.seed)
    params = init_params(model_config, rng)
    data = batchify(token_stream(train_split), tc.batch_size)
    dev_stream = token_stream(dev_split)
    log_ = TrainLog()
    best_ppl = float(np.exp(mean_nll(params, model_config, dev_stream, tc.eval_batch_size)))
    log_.init_valid_ppl = best_ppl
    best = _snapshot(params)
    lr, stale = tc.lr, 0
    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        try:
            loss = train_epoch(params, model_config, data, tc, lr, rng)
            if not np.isfinite(loss):
                raise NumericalError("non-finite training loss")
            ppl = float(np.exp(mean_nll(params, model_config, dev_stream, tc.eval_batch_size)))
            if not np.isfinite(ppl):
                raise NumericalError("non-finite validation perplexity")
        except NumericalError as err:
            log.error("%s seed %d diverged in epoch %d: %s", run_name, tc.seed, epoch, err)
            log_.diverged = True
            break
        log_.records.append(EpochRecord(epoch, loss, ppl, lr, time.perf_counter() - t0))
        log.info("%s seed %d epoch %d loss %.4f dev ppl %.3f lr %g", run_name, tc.seed, epoch, loss, ppl, lr)
        if ppl < best_ppl:
            best_ppl, best, stale = ppl, _snapshot(params), 0
            log_.best_epoch = epoch
        else:
            stale += 1
            if stale >= tc.patience:
                lr *= tc.lr_decay
                stale = 0
    meta = {
        "run_name": run_name,
        "seed": tc.seed,
        "train_config": asdict(tc),
        "best_epoch": log_.best_epoch,
        "valid_ppl": best_ppl,
        "diverged": log_.diverged,
    }
    ckpt = Checkpoint(model_config, best, list(vocab.itos), meta)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, ckpt)
    return ckpt, log_


def checkpoint_name(run_name: str, seed: int) -> str:
    return f"{run_name}.seed{seed}.ckpt"


def run_restarts(n: int, base_seed: int, train_split, dev_split, vocab, model_config, train_config,
                 out_dir=None, run_name="run"):
    """Train ``n`` models with seeds ``base_seed .. base_seed + n - 1``.

    Returns ``(results, failures)``: ``results`` maps seed to
    ``(Checkpoint, TrainLog)``; a run that raises is recorded in
    ``failures`` and the others continue.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    results, failures = {}, {}
    for seed in range(base_seed, base_seed + n):
        tc = replace(train_config, seed=seed)
        path = None
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            path = Path(out_dir) / checkpoint_name(run_name, seed)
        try:
            results[seed] = train(train_split, dev_split, vocab, model_config, tc, path, run_name)
        except Exception as err:  # keep the successful restarts
            log.exception("restart with seed %d failed", seed)
            failures[seed] = err
    return results, failures


# ---------------------------------------------------------------------------
# presets and config files

PRESETS = {
    "desk": (
        dict(num_layers=2, embed_dim=64, hidden_dim=64, chunk_factor=4, dropout_input=0.1,
             dropout_hidden=0.1, dropout_recurrent=0.1, dropout_output=0.1),
        dict(epochs=12, batch_size=20, bptt=35, lr=20.0, clip=0.25),
    ),
    "full": (
        dict(num_layers=3, embed_dim=400, hidden_dim=1150, chunk_factor=10, dropout_input=0.5,
             dropout_hidden=0.3, dropout_recurrent=0.45, dropout_output=0.45),
        dict(epochs=1000, batch_size=20, bptt=70, lr=30.0, clip=0.25),
    ),
}
MAX_VOCAB = {"desk": 2000, "full": 10_000}


def _coerce(value: str, typ):
    if typ is bool or typ == "bool":
        return value.strip().lower() in ("1", "true", "yes", "on")
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def _field_types(cls):
    return {f.name: f.type for f in fields(cls)}


def load_config(text: str = "", preset: str = "desk", vocab_size: int = 1) -> tuple[ModelConfig, TrainConfig]:
    """Build configs from a preset overridden by ``[model]``/``[train]`` sections."""
    model_kw, train_kw = (dict(d) for d in PRESETS[preset])
    parser = configparser.ConfigParser()
    parser.read_string(text or "")
    for section, target, cls in (("model", model_kw, ModelConfig), ("train", train_kw, TrainConfig)):
        if not parser.has_section(section):
            continue
        types = _field_types(cls)
        for key, value in parser.items(section):
            if key not in types:
                raise ValueError(f"unknown [{section}] key {key!r}")
            target[key] = _coerce(value, types[key])
    model_kw["vocab_size"] = vocab_size
    return ModelConfig(**model_kw), TrainConfig(**train_kw)


def dump_config(model_config: ModelConfig, train_config: TrainConfig) -> str:
    lines = ["[model]"]
    for k, v in asdict(model_config).items():
        if k != "vocab_size":
            lines.append(f"{k} = {v}")
    lines += ["", "[train]"]
    lines += [f"{k} = {v}" for k, v in asdict(train_config).items()]
    return "\n".join(lines) + "\n"
