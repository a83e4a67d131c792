"""Ordered-neurons LSTM language model in numpy, with hand-written BPTT.

Each layer computes, per timestep::

    mf = cumax(Wx_mf x + Wh_mf h + b_mf)            # master forget, rising 0 -> 1
    mi = 1 - cumax(Wx_mi x + Wh_mi h + b_mi)        # master input, falling 1 -> 0
    w  = mf * mi                                    # overlap
    f' = f * w + (mf - w);   i' = i * w + (mi - w)
    c  = f' * c_prev + i' * tanh(Wx_c x + Wh_c h + b_c)
    h  = o * tanh(c)

Master gates have ``hidden / chunk_factor`` entries; each one is repeated over
a contiguous block of ``chunk_factor`` cell dimensions.  All arithmetic runs
in the dtype of the parameter arrays (float32 for training, float64 for
gradient checks).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT_MAGIC = b"ONLSTMCK"
FORMAT_VERSION = 1


class NumericalError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_layers: int = 3
    embed_dim: int = 64
    hidden_dim: int = 64
    chunk_factor: int = 4
    dropout_input: float = 0.0
    dropout_hidden: float = 0.0
    dropout_recurrent: float = 0.0
    dropout_output: float = 0.0
    tie_weights: bool = True

    def __post_init__(self):
        for name in ("vocab_size", "num_layers", "embed_dim", "hidden_dim", "chunk_factor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for size in self.layer_sizes():
            if size % self.chunk_factor:
                raise ValueError(f"layer size {size} not divisible by chunk_factor {self.chunk_factor}")
        for name in ("dropout_input", "dropout_hidden", "dropout_recurrent", "dropout_output"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")

    def layer_sizes(self) -> list[int]:
        """Hidden size per layer; the last one matches the embedding when weights are tied."""
        sizes = [self.hidden_dim] * self.num_layers
        if self.tie_weights:
            sizes[-1] = self.embed_dim
        return sizes

    def master_dims(self) -> list[int]:
        return [s // self.chunk_factor for s in self.layer_sizes()]


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    shapes = {"embedding": (config.vocab_size, config.embed_dim)}
    n_in = config.embed_dim
    for k, (d, dm) in enumerate(zip(config.layer_sizes(), config.master_dims())):
        g = 4 * d + 2 * dm
        shapes[f"layer{k}.W_x"] = (n_in, g)
        shapes[f"layer{k}.W_h"] = (d, g)
        shapes[f"layer{k}.bias"] = (g,)
        n_in = d
    if not config.tie_weights:
        shapes["decoder.weight"] = (config.vocab_size, n_in)
    shapes["decoder.bias"] = (config.vocab_size,)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in param_shapes(config).items():
        if name == "embedding" or name == "decoder.weight":
            p = rng.uniform(-0.1, 0.1, size=shape)
        elif name.endswith("bias"):
            p = np.zeros(shape)
        else:
            # torch.nn.Linear default: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
            bound = 1.0 / np.sqrt(shape[0])
            p = rng.uniform(-bound, bound, size=shape)
        params[name] = p.astype(dtype)
    return params


# ---------------------------------------------------------------------------
# activations


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def cumax(logits, axis=-1):
    """Cumulative sum of a softmax: nondecreasing, ends at 1."""
    x = np.asarray(logits)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    p = softmax(x.astype(np.float64), axis=axis)
    out = np.cumsum(p, axis=axis)
    return np.minimum(out, 1.0).astype(dtype, copy=False)


def _cumax_cached(z):
    p = softmax(z)
    return np.minimum(np.cumsum(p, axis=-1), 1.0), p


def _cumax_backward(p, d_out):
    dp = np.cumsum(d_out[..., ::-1], axis=-1)[..., ::-1]
    return p * (dp - np.sum(p * dp, axis=-1, keepdims=True))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def height_from_gate(master_forget) -> float | np.ndarray:
    """Expected index of the first 1 in the binary gate the forget gate relaxes.

    ``D_m - sum(gate)``; works on the last axis, so a ``(..., D_m)`` array
    yields ``(...)`` heights.
    """
    g = np.asarray(master_forget)
    return g.shape[-1] - np.sum(g, axis=-1)


# ---------------------------------------------------------------------------
# recurrence


@dataclass
class LayerState:
    h: np.ndarray
    c: np.ndarray


def zero_states(config: ModelConfig, batch: int, dtype=np.float32) -> list[LayerState]:
    return [LayerState(np.zeros((batch, d), dtype), np.zeros((batch, d), dtype)) for d in config.layer_sizes()]


def _split(z, d, dm):
    return (
        z[..., :dm],
        z[..., dm : 2 * dm],
        z[..., 2 * dm : 2 * dm + d],
        z[..., 2 * dm + d : 2 * dm + 2 * d],
        z[..., 2 * dm + 2 * d : 2 * dm + 3 * d],
        z[..., 2 * dm + 3 * d :],
    )


def _step(zx, prev: LayerState, W_h, chunk_factor: int, recurrent_mask=None):
    d = W_h.shape[0]
    dm = d // chunk_factor
    h_in = prev.h if recurrent_mask is None else prev.h * recurrent_mask
    z = zx + h_in @ W_h
    zmf, zmi, zo, zf, zi, zg = _split(z, d, dm)
    mf, pf = _cumax_cached(zmf)
    mic, pi = _cumax_cached(zmi)
    mi = 1.0 - mic
    Fe = np.repeat(mf, chunk_factor, axis=-1)
    Ie = np.repeat(mi, chunk_factor, axis=-1)
    o, f, i, g = sigmoid(zo), sigmoid(zf), sigmoid(zi), np.tanh(zg)
    w = Fe * Ie
    fh = Fe + (f - 1.0) * w
    ih = Ie + (i - 1.0) * w
    c = fh * prev.c + ih * g
    tc = np.tanh(c)
    h = o * tc
    cache = (h_in, prev.c, pf, pi, Fe, Ie, o, f, i, g, w, fh, ih, tc)
    return LayerState(h, c), mf, cache


def cell_step(x, prev: LayerState, W_x, W_h, bias, chunk_factor: int, recurrent_mask=None):
    """One timestep of one layer.

    ``x`` is ``(B, n_in)``.  Returns the new state and the master forget
    gate ``(B, D_m)``.  Dropout enters only through ``recurrent_mask``.
    """
    state, mf, _ = _step(x @ W_x + bias, prev, W_h, chunk_factor, recurrent_mask)
    return state, mf


def _step_backward(dh, dc_next, cache, chunk_factor: int):
    """Gradient of one step w.r.t. its preactivation and the previous cell."""
    h_in, c_prev, pf, pi, Fe, Ie, o, f, i, g, w, fh, ih, tc = cache
    shape = pf.shape
    do = dh * tc
    dc = dc_next + dh * o * (1.0 - tc * tc)
    dfh = dc * c_prev
    dih = dc * g
    dc_prev = dc * fh
    dg = dc * ih
    dw = dfh * (f - 1.0) + dih * (i - 1.0)
    dFe = dfh + dw * Ie
    dIe = dih + dw * Fe
    dmf = dFe.reshape(shape + (chunk_factor,)).sum(-1)
    dmic = -dIe.reshape(shape + (chunk_factor,)).sum(-1)
    dz = np.concatenate(
        [
            _cumax_backward(pf, dmf),
            _cumax_backward(pi, dmic),
            do * o * (1.0 - o),
            dfh * w * f * (1.0 - f),
            dih * w * i * (1.0 - i),
            dg * (1.0 - g * g),
        ],
        axis=-1,
    )
    return dz, dc_prev


@dataclass
class MasterGateTrace:
    """Master forget gates per layer.

    ``gates[l]`` has shape ``(T, B, D_m)``; ``heights`` has shape ``(L, T, B)``.
    """

    gates: list
    heights: np.ndarray

    def lane(self, b: int = 0, start: int = 0) -> "MasterGateTrace":
        """Trace of one batch lane as ``(T', 1, .)`` arrays, dropping ``start`` leading steps."""
        return MasterGateTrace(
            [g[start:, b : b + 1] for g in self.gates], self.heights[:, start:, b : b + 1]
        )

    def sentence_heights(self, b: int = 0, start: int = 0) -> np.ndarray:
        """Per-token heights ``(L, T')`` for one lane."""
        return self.heights[:, start:, b]


@dataclass
class Masks:
    input: np.ndarray | None = None
    hidden: list = field(default_factory=list)
    recurrent: list = field(default_factory=list)
    output: np.ndarray | None = None


def _bernoulli(rng, p, shape, dtype):
    if p <= 0.0:
        return None
    return ((rng.random(shape) >= p) / (1.0 - p)).astype(dtype)


def sample_masks(config: ModelConfig, batch: int, rng, dtype=np.float32) -> Masks:
    """Variational dropout: one mask per lane, shared across timesteps."""
    sizes = config.layer_sizes()
    return Masks(
        input=_bernoulli(rng, config.dropout_input, (batch, config.embed_dim), dtype),
        hidden=[_bernoulli(rng, config.dropout_hidden, (batch, s), dtype) for s in sizes[:-1]],
        recurrent=[_bernoulli(rng, config.dropout_recurrent, (batch, s), dtype) for s in sizes],
        output=_bernoulli(rng, config.dropout_output, (batch, sizes[-1]), dtype),
    )


def _mul(x, m):
    return x if m is None else x * m


def _check_finite(arr, layer, what):
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NumericalError(f"non-finite {what} at layer {layer + 1}, timestep {int(bad[0])}")


def _forward(params, config: ModelConfig, inputs, states, masks, keep_cache: bool):
    """Run the stack over ``inputs`` of shape ``(T, B)``."""
    T, B = inputs.shape
    E = params["embedding"]
    dtype = E.dtype
    masks = masks or Masks()
    if states is None:
        states = zero_states(config, B, dtype)
    C = config.chunk_factor
    L = config.num_layers
    x = _mul(E[inputs], masks.input)
    caches, gates, heights, new_states = [], [], [], []
    for k in range(L):
        W_x, W_h = params[f"layer{k}.W_x"], params[f"layer{k}.W_h"]
        d = W_h.shape[0]
        rmask = masks.recurrent[k] if masks.recurrent else None
        zx = x @ W_x + params[f"layer{k}.bias"]
        st = states[k]
        hs = np.empty((T, B, d), dtype)
        mfs = np.empty((T, B, d // C), dtype)
        steps = []
        for t in range(T):
            st, mf, cache = _step(zx[t], st, W_h, C, rmask)
            hs[t] = st.h
            mfs[t] = mf
            if keep_cache:
                steps.append(cache)
        _check_finite(hs, k, "hidden state")
        new_states.append(st)
        gates.append(mfs)
        heights.append(height_from_gate(mfs))
        if k < L - 1:
            out_mask = masks.hidden[k] if masks.hidden else None
        else:
            out_mask = masks.output
        if keep_cache:
            caches.append((x, steps, rmask, out_mask))
        x = _mul(hs, out_mask)
    W_dec = E if config.tie_weights else params["decoder.weight"]
    logits = x @ W_dec.T + params["decoder.bias"]
    trace = MasterGateTrace(gates, np.stack(heights))
    return logits, trace, new_states, ((caches, x) if keep_cache else None)


def _backward(params, config: ModelConfig, inputs, cache, dlogits):
    caches, top = cache
    C = config.chunk_factor
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    T, B = inputs.shape
    V = config.vocab_size
    W_dec = params["embedding"] if config.tie_weights else params["decoder.weight"]
    flat_dl = dlogits.reshape(T * B, V)
    g_dec = flat_dl.T @ top.reshape(T * B, -1)
    grads["embedding" if config.tie_weights else "decoder.weight"] += g_dec
    grads["decoder.bias"] += flat_dl.sum(0)
    dx = dlogits @ W_dec  # gradient w.r.t. the masked top-layer output
    for k in reversed(range(config.num_layers)):
        x_in, steps, rmask, out_mask = caches[k]
        W_x, W_h = params[f"layer{k}.W_x"], params[f"layer{k}.W_h"]
        dH = _mul(dx, out_mask)
        d = W_h.shape[0]
        dZ = np.empty((T, B, W_h.shape[1]), dx.dtype)
        h_ins = np.empty((T, B, d), dx.dtype)
        dh_next = np.zeros((B, d), dx.dtype)
        dc_next = np.zeros((B, d), dx.dtype)
        for t in reversed(range(T)):
            dz, dc_next = _step_backward(dH[t] + dh_next, dc_next, steps[t], C)
            dZ[t] = dz
            h_ins[t] = steps[t][0]
            dh_next = _mul(dz @ W_h.T, rmask)
        G = W_h.shape[1]
        flat = dZ.reshape(T * B, G)
        grads[f"layer{k}.W_h"] += h_ins.reshape(T * B, d).T @ flat
        grads[f"layer{k}.W_x"] += x_in.reshape(T * B, -1).T @ flat
        grads[f"layer{k}.bias"] += flat.sum(0)
        dx = dZ @ W_x.T
    return grads, dx


def _nll(logits, targets):
    """Per-position negative log-likelihood, ``(T, B)``."""
    z = logits - logits.max(-1, keepdims=True)
    picked = np.take_along_axis(z, targets[..., None], -1)[..., 0]
    return np.log(np.exp(z).sum(-1)) - picked


def _as_batch(ids):
    arr = np.asarray(ids)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def _check_ids(arr, config):
    if arr.size and (arr.min() < 0 or arr.max() >= config.vocab_size):
        raise ValueError(f"token id out of range [0, {config.vocab_size})")


def forward_sequence(ids, params, config: ModelConfig, states=None, training=False, rng=None):
    """Next-token logits, gate trace and final states for ``ids``.

    ``ids`` is ``(T,)`` or ``(T, B)``; logits at position ``t`` predict token
    ``t + 1``.  Dropout is applied only when ``training`` is set, with
    masks drawn from ``rng``.
    """
    arr = _as_batch(ids)
    _check_ids(arr, config)
    masks = sample_masks(config, arr.shape[1], rng, params["embedding"].dtype) if training else None
    logits, trace, states, _ = _forward(params, config, arr, states, masks, keep_cache=False)
    if np.ndim(ids) == 1:
        logits = logits[:, 0]
    return logits, trace, states


def loss_and_gradients(ids, params, config: ModelConfig, rng=None, states=None, targets=None, weights=None, masks=None):
    """Mean next-token cross-entropy and its gradient for every parameter.

    With only ``ids`` given, tokens ``1..n-1`` are predicted from their
    prefixes.  Batched training passes ``(T, B)`` ``ids`` with explicit
    ``targets`` and optional 0/1 ``weights``.  Dropout masks come from
    ``masks`` or are sampled from ``rng``; with neither the pass is
    deterministic and dropout-free.  Returns ``(loss, grads, final_states)``.
    """
    arr = _as_batch(ids)
    if targets is None:
        if arr.shape[0] < 2:
            raise ValueError("need at least two tokens")
        inputs, tgt = arr[:-1], arr[1:]
    else:
        inputs, tgt = arr, _as_batch(targets)
    _check_ids(inputs, config)
    _check_ids(tgt, config)
    dtype = params["embedding"].dtype
    if masks is None and rng is not None:
        masks = sample_masks(config, inputs.shape[1], rng, dtype)
    logits, _, new_states, cache = _forward(params, config, inputs, states, masks, keep_cache=True)
    nll = _nll(logits, tgt)
    w = np.ones(tgt.shape, dtype) if weights is None else np.asarray(weights, dtype)
    denom = w.sum()
    loss = float((nll * w).sum() / denom)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    dl = softmax(logits)
    ti, bi = np.indices(tgt.shape)
    dl[ti, bi, tgt] -= 1.0
    dl *= (w / denom)[..., None]
    grads, dx = _backward(params, config, inputs, cache, dl.astype(dtype, copy=False))
    if masks is not None and masks.input is not None:
        dx = dx * masks.input
    np.add.at(grads["embedding"], inputs, dx)
    return loss, grads, new_states


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    vocab: list  # id -> token
    meta: dict = field(default_factory=dict)


def _encode_checkpoint(ckpt: Checkpoint) -> bytes:
    names = sorted(ckpt.params)
    header = {
        "config": asdict(ckpt.config),
        "vocab": list(ckpt.vocab),
        "meta": ckpt.meta,
        "tensors": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(ckpt.params[n], dtype="<f4").tobytes() for n in names)
    blob = FORMAT_MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + body
    return blob + hashlib.sha256(blob).digest()


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    """Write atomically: magic, version, JSON header, float32 tensors, sha256."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_encode_checkpoint(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if not blob.startswith(FORMAT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    off = len(FORMAT_MAGIC)
    version, hlen = struct.unpack_from("<IQ", payload, off)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off += struct.calcsize("<IQ")
    header = json.loads(payload[off : off + hlen].decode("utf-8"))
    off += hlen
    params = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off).reshape(shape)
        params[t["name"]] = arr.astype(np.float32)
        off += 4 * count
    if off != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    config = ModelConfig(**header["config"])
    expected = param_shapes(config)
    for name, shape in expected.items():
        if name not in params or params[name].shape != tuple(shape):
            raise CheckpointError(f"{path}: tensor {name} missing or misshapen")
    return Checkpoint(config, params, header["vocab"], header["meta"])
