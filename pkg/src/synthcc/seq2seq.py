"""Record-to-text encoder-decoder.

A feedforward layer compresses the sparse record vector to the hidden size
and is fed to a single-layer LSTM once, before the token embeddings, at a
notional timestep of -1. The LSTM follows

    i_t = sigmoid(W_ix x_t + W_im m_{t-1} + b_i)
    f_t = sigmoid(W_fx x_t + W_fm m_{t-1} + b_f)
    o_t = sigmoid(W_ox x_t + W_om m_{t-1} + b_o)
    c_t = f_t * c_{t-1} + i_t * tanh(W_cx x_t + W_cm m_{t-1} + b_c)
    m_t = o_t * tanh(c_t)

with a linear projection + softmax head over the vocabulary. Training is
teacher-forced categorical cross-entropy over positions 1..content_len+1
(first content token through the end marker); pad positions contribute
nothing to loss or gradients. The record encoder can be warm-started by an
autoencoder that reconstructs the record bits through a sigmoid head.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .optim import AdamState, EarlyStopper, adam_step, shuffled_batches
from .textprep import PAD_ID, SOS_ID, TokenSequence

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = 128
GATES = ("i", "f", "o", "c")


@dataclass(frozen=True)
class Seq2SeqDims:
    total_dim: int
    vocab_size: int
    hidden: int = DEFAULT_HIDDEN


@dataclass
class TrainStats:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epochs: int = 0
    best_epoch: int = -1
    stop_reason: str = ""


def init_params(dims: Seq2SeqDims, seed: int = 0, dtype=np.float32) -> ParamStore:
    rng = np.random.default_rng(seed)
    p = ParamStore()
    ad.glorot_init(p, "enc_w", (dims.total_dim, dims.hidden), rng, dtype)
    ad.glorot_init(p, "enc_b", (dims.hidden,), rng, dtype)
    ad.glorot_init(p, "emb", (dims.vocab_size, dims.hidden), rng, dtype)
    for gate in GATES:
        ad.glorot_init(p, f"w_{gate}x", (dims.hidden, dims.hidden), rng, dtype)
        ad.glorot_init(p, f"w_{gate}m", (dims.hidden, dims.hidden), rng, dtype)
        ad.glorot_init(p, f"b_{gate}", (dims.hidden,), rng, dtype)
    ad.glorot_init(p, "proj_w", (dims.hidden, dims.vocab_size), rng, dtype)
    ad.glorot_init(p, "proj_b", (dims.vocab_size,), rng, dtype)
    return p


def dims_of(params: ParamStore) -> Seq2SeqDims:
    total_dim, hidden = params["enc_w"].data.shape
    vocab_size = params["emb"].data.shape[0]
    return Seq2SeqDims(total_dim=total_dim, vocab_size=vocab_size, hidden=hidden)


# ---------------------------------------------------------------------------
# raw-array forward path (inference)


def encode(record_bits: np.ndarray, params: ParamStore) -> np.ndarray:
    """Dense record vector x_{-1} = W_r R + b (linear in the record bits)."""
    w = params["enc_w"].data
    if record_bits.shape[-1] != w.shape[0]:
        raise ValueError(
            f"record length {record_bits.shape[-1]} != encoder input dim {w.shape[0]}"
        )
    return record_bits.astype(w.dtype) @ w + params["enc_b"].data


def lstm_step(
    x: np.ndarray, m: np.ndarray, c: np.ndarray, params: ParamStore
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step on raw arrays; x, m, c are (..., hidden)."""
    a = params.arrays()

    def gate(name):
        return x @ a[f"w_{name}x"] + m @ a[f"w_{name}m"] + a[f"b_{name}"]

    i = _sigmoid(gate("i"))
    f = _sigmoid(gate("f"))
    o = _sigmoid(gate("o"))
    c_new = f * c + i * np.tanh(gate("c"))
    m_new = o * np.tanh(c_new)
    if not (np.all(np.isfinite(m_new)) and np.all(np.isfinite(c_new))):
        raise FloatingPointError("non-finite LSTM state")
    return m_new, c_new


def step_logits(m: np.ndarray, params: ParamStore) -> np.ndarray:
    return m @ params["proj_w"].data + params["proj_b"].data


def step_distribution(m: np.ndarray, params: ParamStore) -> np.ndarray:
    """Next-token probability vector softmax(W_p m + b_p)."""
    z = step_logits(m, params)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=-1, keepdims=True)
    return z - zmax - np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_state(record_bits: np.ndarray, params: ParamStore) -> tuple[np.ndarray, np.ndarray]:
    """Zero state advanced by the record vector: the decoder's starting point."""
    hidden = params["enc_b"].data.shape[0]
    bits = np.atleast_2d(record_bits)
    m = np.zeros((bits.shape[0], hidden), dtype=params["enc_w"].data.dtype)
    c = np.zeros_like(m)
    x = encode(bits, params)
    return lstm_step(x, m, c, params)


# ---------------------------------------------------------------------------
# taped training path


def _lstm_step_taped(x: Tensor, m: Tensor, c: Tensor, params: ParamStore) -> tuple[Tensor, Tensor]:
    def gate(name):
        return ad.add(
            ad.add(ad.matmul(x, params[f"w_{name}x"]), ad.matmul(m, params[f"w_{name}m"])),
            params[f"b_{name}"],
        )

    i = ad.sigmoid(gate("i"))
    f = ad.sigmoid(gate("f"))
    o = ad.sigmoid(gate("o"))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, ad.tanh(gate("c"))))
    m_new = ad.mul(o, ad.tanh(c_new))
    return m_new, c_new


def batch_nll(
    records: np.ndarray, token_ids: np.ndarray, params: ParamStore
) -> tuple[Tensor, float]:
    """Summed negative log-likelihood over the batch, plus the target-token count.

    records: (B, total_dim) float; token_ids: (B, L) int with the start/end/pad
    convention. Targets are token_ids[:, 1:]; pad targets are masked out.
    """
    dtype = params["enc_w"].data.dtype
    b = records.shape[0]
    x_rec = ad.add(ad.matmul(Tensor(records.astype(dtype)), params["enc_w"]), params["enc_b"])
    zeros = Tensor(np.zeros((b, params["enc_b"].data.shape[0]), dtype=dtype))
    m, c = _lstm_step_taped(x_rec, zeros, zeros, params)

    targets = token_ids[:, 1:]
    n_steps = int((targets != PAD_ID).any(axis=0).sum())  # skip all-pad tail steps
    total: Tensor | None = None
    for t in range(n_steps):
        x = ad.embedding(params["emb"], token_ids[:, t])
        m, c = _lstm_step_taped(x, m, c, params)
        logits = ad.add(ad.matmul(m, params["proj_w"]), params["proj_b"])
        mask = (targets[:, t] != PAD_ID).astype(dtype)
        nll = ad.masked_cross_entropy(logits, targets[:, t], mask)
        total = nll if total is None else ad.add(total, nll)
    if total is None:
        raise ValueError("batch has no target tokens")
    n_tokens = float((targets[:, :n_steps] != PAD_ID).sum())
    return ad.sum_all(total), n_tokens


def batch_loss(records: np.ndarray, token_ids: np.ndarray, params: ParamStore) -> Tensor:
    """Mean over the batch of per-pair summed negative log-likelihood."""
    if records.shape[0] == 0:
        raise ValueError("empty batch")
    total, _ = batch_nll(records, token_ids, params)
    return ad.scale(total, 1.0 / records.shape[0])


def sequence_log_prob(
    record_bits: np.ndarray, seq: TokenSequence | np.ndarray, params: ParamStore
) -> float:
    """Teacher-forced log p(sentence | record), summed over non-pad targets."""
    ids = seq.ids if isinstance(seq, TokenSequence) else np.asarray(seq)
    if ids[0] != SOS_ID:
        raise ValueError("sequence must start with the start-of-sequence id")
    total, _ = batch_nll(np.atleast_2d(record_bits), ids[None, :], params)
    return -float(total.data)


# ---------------------------------------------------------------------------
# training


def _prepare_arrays(pairs: Sequence[tuple], total_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack (record_bits, TokenSequence) pairs into dense arrays."""
    n = len(pairs)
    cap = pairs[0][1].ids.shape[0] if n else 0
    records = np.zeros((n, total_dim), dtype=np.float32)
    ids = np.full((n, cap), PAD_ID, dtype=np.int32)
    for row, (bits, seq) in enumerate(pairs):
        records[row] = np.asarray(bits, dtype=np.float32)
        ids[row] = seq.ids
    return records, ids


def corpus_token_nll(records: np.ndarray, ids: np.ndarray, params: ParamStore, batch: int = 512) -> float:
    """Per-token cross-entropy over a corpus (forward only)."""
    total = 0.0
    tokens = 0.0
    for start in range(0, records.shape[0], batch):
        nll, n = batch_nll(records[start : start + batch], ids[start : start + batch], params)
        total += float(nll.data)
        tokens += n
    return total / tokens


def train(
    train_pairs: Sequence[tuple],
    valid_pairs: Sequence[tuple],
    params: ParamStore,
    lr: float = 0.001,
    batch: int = 512,
    patience: int = 2,
    max_epochs: int = 50,
    seed: int = 0,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[ParamStore, TrainStats]:
    """End-to-end training with seeded shuffling and early stopping.

    Stops when validation per-token cross-entropy fails to improve for
    `patience` consecutive epochs (or at max_epochs); returns the parameters
    from the best validation epoch.
    """
    if not train_pairs or not valid_pairs:
        raise ValueError("train and validation splits must be non-empty")
    dims = dims_of(params)
    train_rec, train_ids = _prepare_arrays(train_pairs, dims.total_dim)
    valid_rec, valid_ids = _prepare_arrays(valid_pairs, dims.total_dim)
    rng = np.random.default_rng(seed)
    adam = AdamState(lr=lr)
    stopper = EarlyStopper(patience=patience)
    stats = TrainStats()
    stop_reason = "max-epochs"
    for epoch in range(1, max_epochs + 1):
        epoch_nll = 0.0
        epoch_tokens = 0.0
        for idx in shuffled_batches(train_rec.shape[0], batch, rng):
            params.zero_grad()
            nll, n_tokens = batch_nll(train_rec[idx], train_ids[idx], params)
            loss = ad.scale(nll, 1.0 / idx.shape[0])
            ad.backprop(loss)
            adam_step(params, params.grads(), adam)
            epoch_nll += float(nll.data)
            epoch_tokens += n_tokens
        train_tok_nll = epoch_nll / epoch_tokens
        val_tok_nll = corpus_token_nll(valid_rec, valid_ids, params, batch)
        if not np.isfinite(val_tok_nll):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        stats.train_loss.append(train_tok_nll)
        stats.val_loss.append(val_tok_nll)
        stats.epochs = epoch
        stopper.update(epoch, val_tok_nll, params)
        if on_epoch is not None:
            on_epoch({"epoch": epoch, "train_loss": train_tok_nll, "val_loss": val_tok_nll})
        log.info("epoch %d: train %.4f valid %.4f", epoch, train_tok_nll, val_tok_nll)
        if stopper.should_stop:
            stop_reason = "patience-exhausted"
            break
    stats.stop_reason = stop_reason
    stats.best_epoch = stopper.best_epoch
    stopper.restore_best(params)
    return params, stats


# ---------------------------------------------------------------------------
# autoencoder pretraining of the record encoder


def pretrain_autoencoder(
    records: np.ndarray,
    hidden: int,
    epochs: int = 15,
    batch: int = 256,
    lr: float = 0.001,
    seed: int = 0,
    dtype=np.float32,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Warm-start weights for the record encoder.

    Trains encoder + linear sigmoid decoder to reconstruct the record bits
    under binary cross-entropy; returns (enc_w, enc_b, per-epoch losses). The
    decoder head is discarded.
    """
    records = np.asarray(records, dtype=dtype)
    total_dim = records.shape[1]
    rng = np.random.default_rng(seed)
    p = ParamStore()
    ad.glorot_init(p, "enc_w", (total_dim, hidden), rng, dtype)
    ad.glorot_init(p, "enc_b", (hidden,), rng, dtype)
    ad.glorot_init(p, "dec_w", (hidden, total_dim), rng, dtype)
    ad.glorot_init(p, "dec_b", (total_dim,), rng, dtype)
    adam = AdamState(lr=lr)
    losses: list[float] = []
    shuffle_rng = np.random.default_rng(seed + 1)
    for _ in range(epochs):
        epoch_loss = 0.0
        n_batches = 0
        for idx in shuffled_batches(records.shape[0], batch, shuffle_rng):
            p.zero_grad()
            h = ad.add(ad.matmul(Tensor(records[idx]), p["enc_w"]), p["enc_b"])
            logits = ad.add(ad.matmul(h, p["dec_w"]), p["dec_b"])
            loss = ad.bce_with_logits(logits, records[idx])
            ad.backprop(loss)
            adam_step(p, p.grads(), adam)
            epoch_loss += loss.item()
            n_batches += 1
        losses.append(epoch_loss / n_batches)
        if not np.isfinite(losses[-1]):
            raise FloatingPointError("autoencoder pretraining diverged")
    return p["enc_w"].data.copy(), p["enc_b"].data.copy(), losses
