"""Vocabulary construction and fixed-length integer encoding of chief complaints.

Tokenization is lowercase + whitespace split. Sequences carry a start token,
an end token, and zero padding out to a fixed capacity of max_len + 2; pad
positions are exactly those after the end token and are masked everywhere
downstream.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, SOS, EOS = "<pad>", "<sos>", "<eos>"
PAD_ID, SOS_ID, EOS_ID = 0, 1, 2
RESERVED = (PAD, SOS, EOS)

DEFAULT_MIN_FREQ = 10
DEFAULT_MAX_LEN = 18


class VocabError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass(frozen=True)
class Vocabulary:
    token_to_id: dict
    id_to_token: tuple[str, ...]
    freqs: dict
    min_freq: int

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        try:
            return self.token_to_id[token]
        except KeyError:
            raise VocabError(f"token {token!r} not in vocabulary")

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.id_to_token):
            raise VocabError(f"unknown token id {token_id}")
        return self.id_to_token[token_id]


def build_vocab(corpus: Iterable[str], min_freq: int = DEFAULT_MIN_FREQ) -> Vocabulary:
    """Count tokens over the corpus and keep those with frequency >= min_freq.

    Ids are assigned frequency-descending with alphabetical tie-break, after
    the reserved pad/start/end ids, so the mapping is deterministic.
    """
    counts = Counter()
    n_sentences = 0
    for sentence in corpus:
        counts.update(tokenize(sentence))
        n_sentences += 1
    if n_sentences == 0:
        raise VocabError("empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    id_to_token = RESERVED + tuple(kept)
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    freqs = {t: counts[t] for t in kept}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token, freqs=freqs, min_freq=min_freq)


@dataclass(frozen=True)
class TokenSequence:
    """Integer-coded sentence: [SOS, w_1..w_n, EOS, PAD...] with n = content_len."""

    ids: np.ndarray
    content_len: int

    @property
    def capacity(self) -> int:
        return len(self.ids)

    def content_ids(self) -> np.ndarray:
        return self.ids[1 : self.content_len + 1]


@dataclass
class DropReport:
    kept: int = 0
    dropped_oov: int = 0
    dropped_length: int = 0


def encode_sentence(text: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    tokens = tokenize(text)
    if len(tokens) > max_len:
        raise VocabError(f"sentence has {len(tokens)} tokens, max_len is {max_len}")
    ids = np.full(max_len + 2, PAD_ID, dtype=np.int32)
    ids[0] = SOS_ID
    for i, tok in enumerate(tokens):
        ids[i + 1] = vocab.id(tok)
    ids[len(tokens) + 1] = EOS_ID
    return TokenSequence(ids=ids, content_len=len(tokens))


def decode_tokens(seq: TokenSequence | np.ndarray | Sequence[int], vocab: Vocabulary) -> str:
    """Space-join the tokens strictly between the start and end markers."""
    ids = seq.ids if isinstance(seq, TokenSequence) else np.asarray(seq)
    out = []
    for token_id in ids[1:] if len(ids) and ids[0] == SOS_ID else ids:
        token_id = int(token_id)
        if token_id == EOS_ID or token_id == PAD_ID:
            break
        out.append(vocab.token(token_id))
    return " ".join(out)


def filter_corpus(
    pairs: Iterable[tuple], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN
) -> tuple[list, DropReport]:
    """Drop pairs whose sentence is over-length or contains an out-of-vocabulary token.

    Each pair is (anything, text); the text field drives the decision. Length
    is checked first, matching the generation-time cap on content tokens.
    """
    report = DropReport()
    kept = []
    for pair in pairs:
        tokens = tokenize(pair[1])
        if len(tokens) > max_len:
            report.dropped_length += 1
            continue
        if any(t not in vocab for t in tokens):
            report.dropped_oov += 1
            continue
        kept.append(pair)
        report.kept += 1
    return kept, report


def split_pairs(pairs: Sequence, seed: int, train_frac: float = 0.75) -> tuple[list, list]:
    """Seeded shuffle, then split into (train, validation)."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(pairs))
    cut = int(round(len(pairs) * train_frac))
    train = [pairs[i] for i in order[:cut]]
    valid = [pairs[i] for i in order[cut:]]
    return train, valid


def sample_test(valid: Sequence, size: int, seed: int) -> list:
    """Seeded sample (without replacement) of the validation pairs for final testing."""
    if size >= len(valid):
        return list(valid)
    idx = np.random.default_rng(seed).choice(len(valid), size=size, replace=False)
    return [valid[i] for i in sorted(int(i) for i in idx)]


# ---------------------------------------------------------------------------
# pair-file and vocabulary-file IO


def write_pairs(
    path: str | Path,
    pairs: Iterable[tuple[list[int], TokenSequence, str, int | None]],
    meta: dict | None = None,
) -> int:
    """Write tokenized pairs as JSON lines.

    Each line: record_bits (indices of set bits), token_ids, text, primary_dx
    (first-listed diagnosis code, null when the record has none).
    """
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        if meta is not None:
            f.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for record_bits, seq, text, primary_dx in pairs:
            obj = {
                "record_bits": list(record_bits),
                "token_ids": [int(i) for i in seq.ids],
                "content_len": seq.content_len,
                "text": text,
                "primary_dx": primary_dx,
            }
            f.write(json.dumps(obj, sort_keys=True) + "\n")
            n += 1
    return n


def read_pairs(path: str | Path) -> Iterator[dict]:
    """Yield pair objects from a pair file, skipping the meta header if present."""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "meta" in obj and "token_ids" not in obj:
                continue
            yield obj


def write_vocab(path: str | Path, vocab: Vocabulary) -> None:
    """Token-per-line with frequency; reserved tokens lead with frequency 0."""
    with open(path, "w", encoding="utf-8") as f:
        for token in vocab.id_to_token:
            freq = vocab.freqs.get(token, 0)
            f.write(f"{token}\t{freq}\n")


def read_vocab(path: str | Path, min_freq: int = DEFAULT_MIN_FREQ) -> Vocabulary:
    id_to_token = []
    freqs = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            token, _, freq = line.partition("\t")
            id_to_token.append(token)
            if token not in RESERVED:
                freqs[token] = int(freq) if freq else 0
    if tuple(id_to_token[:3]) != RESERVED:
        raise VocabError(f"{path}: reserved tokens missing or out of order")
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    return Vocabulary(
        token_to_id=token_to_id, id_to_token=tuple(id_to_token), freqs=freqs, min_freq=min_freq
    )
