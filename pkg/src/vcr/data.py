"""Corpus encoding: bit streams, character vocabularies, generic symbol streams.

Bit order is MSB-first throughout. Splits are contiguous (train | valid |
test) and never shuffled.
"""

import csv
import math
import os
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

UNK = "<unk>"
BIT_VOCAB = ("0", "1")
LEVELS = ("bit", "char", "generic")


@dataclass(frozen=True)
class PositionAnnotations:
    """Per-position boolean flags, e.g. ``is_buffer`` or ``is_whitespace``."""

    flags: dict = field(default_factory=dict)
    length: int = 0

    def __post_init__(self):
        for name, arr in self.flags.items():
            if len(arr) != self.length:
                raise ValueError(f"flag {name!r} has length {len(arr)}, expected {self.length}")

    @property
    def names(self):
        return sorted(self.flags)

    def slice(self, start, stop):
        return PositionAnnotations({k: v[start:stop] for k, v in self.flags.items()},
                                   max(0, min(stop, self.length) - start))


@dataclass(frozen=True)
class TokenStream:
    tokens: np.ndarray
    vocab: tuple
    level: str
    splits: dict = field(default_factory=dict)
    annotations: Optional[PositionAnnotations] = None

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown level {self.level!r}")
        if len(self.tokens) and (self.tokens.min() < 0 or self.tokens.max() >= len(self.vocab)):
            raise ValueError("token id outside vocabulary")

    def __len__(self):
        return len(self.tokens)

    @property
    def vocab_size(self):
        return len(self.vocab)

    def split(self, name):
        """Sub-stream for one split (annotations sliced to match)."""
        if name not in self.splits:
            raise KeyError(f"no split named {name!r}; have {sorted(self.splits)}")
        lo, hi = self.splits[name]
        ann = self.annotations.slice(lo, hi) if self.annotations is not None else None
        return TokenStream(self.tokens[lo:hi], self.vocab, self.level, {}, ann)

    def decode(self, ids=None):
        ids = self.tokens if ids is None else ids
        return [self.vocab[i] for i in ids]


def bytes_to_bits(data: bytes) -> TokenStream:
    if len(data) == 0:
        raise ValueError("cannot encode empty input")
    bits = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8)).astype(np.int64)
    return TokenStream(bits, BIT_VOCAB, "bit")


def bits_to_bytes(bits) -> bytes:
    bits = np.asarray(getattr(bits, "tokens", bits), dtype=np.uint8)
    if len(bits) % 8:
        raise ValueError(f"bit count {len(bits)} is not a multiple of 8")
    return np.packbits(bits).tobytes()


def parse_bitstring(text: str) -> TokenStream:
    """Read a stream written as ASCII '0'/'1' characters (whitespace ignored)."""
    chars = [c for c in text if not c.isspace()]
    if not chars:
        raise ValueError("empty bit string")
    bad = set(chars) - set(BIT_VOCAB)
    if bad:
        raise ValueError(f"bit string contains non-bit characters {sorted(bad)!r}")
    return TokenStream(np.array([c == "1" for c in chars], dtype=np.int64), BIT_VOCAB, "bit")


def format_bitstring(stream, width=64) -> str:
    s = "".join("1" if b else "0" for b in stream.tokens)
    return "\n".join(s[i:i + width] for i in range(0, len(s), width)) + "\n"


def insert_buffer_bits(stream: TokenStream, k: int):
    """Insert ``k`` zero bits after every 8 source bits.

    Returns the new stream and annotations with an ``is_buffer`` flag.
    """
    if stream.level != "bit":
        raise ValueError(f"buffer bits need a bit-level stream, got {stream.level!r}")
    if k < 0:
        raise ValueError(f"buffer length must be non-negative, got {k}")
    n = len(stream.tokens)
    n_full, tail = divmod(n, 8)
    body = stream.tokens[: n_full * 8].reshape(n_full, 8)
    blocks = np.concatenate([body, np.zeros((n_full, k), dtype=np.int64)], axis=1).ravel()
    tokens = np.concatenate([blocks, stream.tokens[n_full * 8:]])
    flag = np.concatenate([
        np.tile(np.r_[np.zeros(8, bool), np.ones(k, bool)], n_full),
        np.zeros(tail, bool),
    ])
    ann = PositionAnnotations({"is_buffer": flag}, len(tokens))
    return TokenStream(tokens, stream.vocab, "bit", {}, ann), ann


def bit_annotations(n, period=8):
    """``is_boundary`` marks the first bit of every ``period``-bit block."""
    return PositionAnnotations({"is_boundary": np.arange(n) % period == 0}, n)


def whitespace_annotations(chars):
    ws = np.array([c.isspace() for c in chars], dtype=bool)
    near = ws.copy()
    near[1:] |= ws[:-1]
    near[:-1] |= ws[1:]
    return PositionAnnotations({"is_whitespace": ws, "near_whitespace": near}, len(ws))


def _ordered_vocab(counts, key):
    return [tok for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], key(kv[0])))]


def build_char_stream(text: str, min_count: int = 1) -> TokenStream:
    """Character stream with vocabulary ordered by count (desc) then codepoint.

    Characters seen fewer than ``min_count`` times map to a trailing UNK token.
    """
    if not text:
        raise ValueError("cannot build a character stream from empty text")
    counts = Counter(text)
    kept = {c: n for c, n in counts.items() if n >= min_count}
    vocab = _ordered_vocab(kept, ord) + [UNK]
    index = {c: i for i, c in enumerate(vocab)}
    unk = index[UNK]
    tokens = np.array([index.get(c, unk) for c in text], dtype=np.int64)
    return TokenStream(tokens, tuple(vocab), "char", {}, whitespace_annotations(text))


def load_generic_tokens(lines) -> TokenStream:
    """One token per whitespace-separated symbol; vocabulary by count then lexicographic."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    symbols = [s for line in lines for s in line.split()]
    if not symbols:
        raise ValueError("no symbols in input")
    vocab = _ordered_vocab(Counter(symbols), lambda s: s)
    index = {s: i for i, s in enumerate(vocab)}
    return TokenStream(np.array([index[s] for s in symbols], dtype=np.int64),
                       tuple(vocab), "generic")


def encode_symbols(symbols, vocab):
    index = {s: i for i, s in enumerate(vocab)}
    try:
        return np.array([index[s] for s in symbols], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"symbol {exc.args[0]!r} not in vocabulary") from None


def split_corpus(stream: TokenStream, fractions=(0.8, 0.1, 0.1)) -> TokenStream:
    """Contiguous train/valid/test split.

    Train and valid sizes are ``floor(f * N)``; test receives everything up to
    ``floor(sum(fractions) * N)``, so rounding remainders land in test.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError(f"need three positive fractions, got {fractions}")
    total = sum(fractions)
    if total > 1.0 + 1e-12:
        raise ValueError(f"fractions sum to {total} > 1")
    n = len(stream.tokens)
    n_train = math.floor(fractions[0] * n + 1e-9)
    n_valid = math.floor(fractions[1] * n + 1e-9)
    n_used = min(n, math.floor(total * n + 1e-9))
    n_test = n_used - n_train - n_valid
    for name, size in (("train", n_train), ("valid", n_valid), ("test", n_test)):
        if size <= 0:
            raise ValueError(f"{name} split is empty for {n} tokens with fractions {fractions}")
    splits = {
        "train": (0, n_train),
        "valid": (n_train, n_train + n_valid),
        "test": (n_train + n_valid, n_used),
    }
    return replace(stream, splits=splits)


def escape_token(tok):
    return tok.encode("unicode_escape").decode("ascii")


def unescape_token(line):
    return line.encode("ascii").decode("unicode_escape")


def write_vocab(vocab, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for tok in vocab:
            fh.write(escape_token(tok) + "\n")


def read_vocab(path):
    with open(path, encoding="ascii") as fh:
        return tuple(unescape_token(line.rstrip("\n")) for line in fh)


def write_annotations(stream, annotations, path):
    """Annotation sidecar: ``t,token,<flag>...`` with 0/1 flags, one row per position."""
    names = annotations.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "token"] + names)
        for i, tok in enumerate(stream.tokens):
            w.writerow([i, int(tok)] + [int(bool(annotations.flags[n][i])) for n in names])


def read_annotations(path):
    """Read flags from a sidecar or an exported trace (value columns are skipped)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty annotation file") from None
        rows = list(reader)
    if "t" not in header:
        raise ValueError(f"{path}: annotation file needs a 't' column")
    skip = {"t", "token", "m", "active_dims", "ops"}
    flags = {}
    for j, name in enumerate(header):
        if name in skip:
            continue
        try:
            flags[name] = np.array([int(r[j]) for r in rows], dtype=np.int64).astype(bool)
        except (ValueError, IndexError):
            raise ValueError(f"{path}: column {name!r} must hold 0/1 flags") from None
    return PositionAnnotations(flags, len(rows))


def merge_annotations(a, b):
    if a is None:
        return b
    if b is None:
        return a
    if a.length != b.length:
        raise ValueError(f"annotation lengths differ: {a.length} vs {b.length}")
    return PositionAnnotations({**a.flags, **b.flags}, a.length)


def periodic_bits(length, period=8, seed=0):
    """Synthetic bits: a random bit at each block start, copied through the block.

    Only block starts carry information, so a well-trained scheduler should
    spend its computation there.
    """
    if period < 1 or length < 1:
        raise ValueError("period and length must be positive")
    rng = np.random.Generator(np.random.Philox(seed))
    heads = rng.integers(0, 2, size=-(-length // period))
    tokens = np.repeat(heads, period)[:length].astype(np.int64)
    ann = bit_annotations(length, period)
    return TokenStream(tokens, BIT_VOCAB, "bit", {}, ann), ann


_PUNCT = {"‘": "'", "’": "'", "“": '"', "”": '"',
          "–": "-", "—": "-", "…": "...", " ": " "}


def normalize_ascii(text):
    """ASCII-only text with runs of blanks collapsed and indentation removed."""
    for src, dst in _PUNCT.items():
        text = text.replace(src, dst)
    text = text.encode("ascii", "ignore").decode("ascii")
    text = re.sub(r"[ \t]+", " ", text)
    text = re.sub(r"\n ", "\n", text)
    return re.sub(r"\n{3,}", "\n\n", text)


def reference_text(max_chars=None):
    """English prose for desk-scale experiments.

    Reads the file named by ``VCR_CORPUS`` when set; otherwise falls back to
    the topic help shipped with CPython (``pydoc_data``), about 430 KB once
    normalised.
    """
    path = os.environ.get("VCR_CORPUS")
    if path:
        with open(path, encoding="utf-8", errors="replace") as fh:
            raw = fh.read()
    else:
        from pydoc_data.topics import topics
        raw = "\n".join(topics[k] for k in sorted(topics))
    text = normalize_ascii(raw)
    return text if max_chars is None else text[:max_chars]
