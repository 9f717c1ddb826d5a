"""Vocabulary, corpus files, the synthetic one-to-many corpus, and batching."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
DEFAULT_MAX_LEN = 50


class CorpusFormatError(ValueError):
    pass


class Vocab:
    """Token/id bijection; ids 0..3 are PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: list[str] = list(RESERVED) + [t for t in tokens]
        self.token_to_id: dict[str, int] = {}
        for i, tok in enumerate(self.id_to_token):
            if tok in self.token_to_id:
                raise ValueError(f"duplicate token {tok!r} in vocabulary")
            self.token_to_id[tok] = i

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token

    @property
    def tokens(self) -> list[str]:
        """Corpus tokens in id order, without the reserved entries."""
        return self.id_to_token[len(RESERVED):]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != RESERVED:
            raise CorpusFormatError(f"{path}: first four lines must be {', '.join(RESERVED)}")
        return cls(lines[4:])


@dataclass(frozen=True)
class PostResponsePair:
    post: tuple[int, ...]
    response: tuple[int, ...]
    mode_label: int | None = None


@dataclass
class Batch:
    posts: np.ndarray          # (B, T) ids, PAD after the true length
    post_lengths: np.ndarray   # (B,)
    dec_inputs: np.ndarray     # (B, T'+1) BOS y1 .. yT' PAD..
    targets: np.ndarray        # (B, T'+1) y1 .. yT' EOS PAD..
    response_lengths: np.ndarray  # (B,) true T' (without BOS/EOS)
    responses: np.ndarray      # (B, T') raw response ids for the response encoder
    mode_labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.posts.shape[0]

    @property
    def target_mask(self) -> np.ndarray:
        return self.targets != PAD


def tokenize(text: str) -> list[str]:
    return text.split()


def build_vocab(corpus: Iterable, max_size: int) -> Vocab:
    """Keep the ``max_size - 4`` most frequent tokens, ties broken lexicographically.

    ``corpus`` yields ``(post, response)`` strings (extra fields ignored).
    """
    if max_size <= len(RESERVED):
        raise ValueError("max_size must exceed the 4 reserved ids")
    counts: Counter[str] = Counter()
    n = 0
    for item in corpus:
        post, response = item[0], item[1]
        counts.update(tokenize(post))
        counts.update(tokenize(response))
        n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([tok for tok, _ in ranked[: max_size - len(RESERVED)]])


def encode_text(text: str, vocab: Vocab) -> list[int]:
    return [vocab.token_to_id.get(tok, UNK) for tok in tokenize(text)]


def decode_ids(ids: Iterable[int], vocab: Vocab) -> str:
    return " ".join(vocab.id_to_token[i] for i in ids if i not in (PAD, BOS, EOS))


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------


def read_corpus(path) -> list[tuple[str, str, int | None]]:
    """Read ``post<TAB>response[<TAB>mode]`` lines."""
    rows = []
    bad = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                bad.append(lineno)
                continue
            mode = None
            if len(fields) == 3:
                try:
                    mode = int(fields[2])
                except ValueError:
                    bad.append(lineno)
                    continue
            rows.append((fields[0], fields[1], mode))
    if bad:
        shown = ", ".join(map(str, bad[:20]))
        raise CorpusFormatError(f"{path}: malformed lines {shown}" + (" ..." if len(bad) > 20 else ""))
    return rows


def write_corpus(rows: Iterable[tuple], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            post, response, mode = (tuple(row) + (None,))[:3]
            fields = [post, response] + ([str(mode)] if mode is not None else [])
            fh.write("\t".join(fields) + "\n")


def encode_pairs(rows: Iterable[tuple], vocab: Vocab, max_len: int = DEFAULT_MAX_LEN) -> list[PostResponsePair]:
    """Turn text rows into id pairs, truncating to ``max_len`` and dropping empties."""
    pairs = []
    truncated = 0
    for row in rows:
        post, response, mode = (tuple(row) + (None,))[:3]
        p, r = encode_text(post, vocab), encode_text(response, vocab)
        if not p or not r:
            continue
        if len(p) > max_len or len(r) > max_len:
            truncated += 1
            p, r = p[:max_len], r[:max_len]
        pairs.append(PostResponsePair(tuple(p), tuple(r), mode))
    if truncated:
        log.warning("truncated %d pairs to max_len=%d", truncated, max_len)
    return pairs


# ---------------------------------------------------------------------------
# synthetic one-to-many corpus
# ---------------------------------------------------------------------------

ALPHABET = tuple("abcdefghijklmnopqrstuvwxyz")
QUESTION_PREFIX = ("what", "is")
OPINION_PREFIX = ("sounds", "like")
EXTRA_PREFIXES = (("wow",), ("well", "then"), ("haha",), ("indeed", "so"))


def _echo(post):
    return list(post)


def _reverse(post):
    return list(reversed(post))


def _question(post):
    return list(QUESTION_PREFIX) + list(post) + ["?"]


def _opinion(post):
    return list(OPINION_PREFIX) + [post[0]]


def _prefixed(prefix):
    return lambda post: list(prefix) + list(post)


MODE_FUNCTIONS = (_echo, _reverse, _question, _opinion) + tuple(_prefixed(p) for p in EXTRA_PREFIXES)
MODE_NAMES = ("echo", "reverse", "question", "opinion") + tuple("prefix-" + "-".join(p) for p in EXTRA_PREFIXES)


def mode_response(post_tokens: Sequence[str], mode: int) -> list[str]:
    """Apply synthetic mode function ``mode`` to a tokenized post."""
    if not 0 <= mode < len(MODE_FUNCTIONS):
        raise ValueError(f"mode {mode} not implemented (0..{len(MODE_FUNCTIONS) - 1})")
    return MODE_FUNCTIONS[mode](list(post_tokens))


def synth_corpus(num_posts: int, modes: int, seed: int,
                 min_len: int = 3, max_len: int = 8) -> list[tuple[str, str, int]]:
    """Random posts over a small alphabet, each answered once by every mode.

    Returns ``(post, response, mode)`` text rows grouped by post, modes in order.
    """
    if modes < 2:
        raise ValueError("synthetic corpus needs at least 2 modes")
    if modes > len(MODE_FUNCTIONS):
        raise ValueError(f"only {len(MODE_FUNCTIONS)} mode functions are implemented, asked for {modes}")
    if num_posts < 1:
        raise ValueError("num_posts must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(num_posts):
        n = int(rng.integers(min_len, max_len + 1))
        post = [ALPHABET[i] for i in rng.integers(0, len(ALPHABET), size=n)]
        for mode in range(modes):
            rows.append((" ".join(post), " ".join(mode_response(post, mode)), mode))
    return rows


def split_by_post(rows: Sequence[tuple], fractions: Sequence[float]) -> list[list[tuple]]:
    """Split rows into contiguous groups of distinct posts (all responses of a post stay together)."""
    order: list[str] = []
    groups: dict[str, list[tuple]] = {}
    for row in rows:
        if row[0] not in groups:
            groups[row[0]] = []
            order.append(row[0])
        groups[row[0]].append(row)
    bounds = np.round(np.cumsum([0.0, *fractions]) / np.sum(fractions) * len(order)).astype(int)
    return [[r for post in order[a:b] for r in groups[post]] for a, b in zip(bounds[:-1], bounds[1:])]


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def make_batch(pairs: Sequence[PostResponsePair]) -> Batch:
    b = len(pairs)
    plen = np.array([len(p.post) for p in pairs], dtype=np.int64)
    rlen = np.array([len(p.response) for p in pairs], dtype=np.int64)
    if b == 0 or plen.min() < 1 or rlen.min() < 1:
        raise ValueError("batches need non-empty posts and responses")
    posts = np.full((b, plen.max()), PAD, dtype=np.int64)
    responses = np.full((b, rlen.max()), PAD, dtype=np.int64)
    dec_in = np.full((b, rlen.max() + 1), PAD, dtype=np.int64)
    targets = np.full((b, rlen.max() + 1), PAD, dtype=np.int64)
    for i, p in enumerate(pairs):
        posts[i, : plen[i]] = p.post
        responses[i, : rlen[i]] = p.response
        dec_in[i, 0] = BOS
        dec_in[i, 1 : rlen[i] + 1] = p.response
        targets[i, : rlen[i]] = p.response
        targets[i, rlen[i]] = EOS
    labels = None
    if all(p.mode_label is not None for p in pairs):
        labels = np.array([p.mode_label for p in pairs], dtype=np.int64)
    return Batch(posts, plen, dec_in, targets, rlen, responses, labels)


def batches(pairs: Sequence[PostResponsePair], batch_size: int,
            shuffle_seed: int | None = None) -> Iterator[Batch]:
    """Yield batches in a seeded shuffled order (or corpus order when seed is None)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(pairs))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(pairs))
    for start in range(0, len(order), batch_size):
        yield make_batch([pairs[i] for i in order[start : start + batch_size]])
