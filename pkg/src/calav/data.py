"""Corpus ingestion, disjoint splitting, tokenization, and numeric encoding.

Documents carry an author and a topical community ("fandom") label. Training
and test sides of a split share neither authors nor fandoms. Text becomes a
grid of overlapping sentence-like units of token IDs plus per-token character
IDs, with rare symbols masked to UNK.
"""

from __future__ import annotations

import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path

import numpy as np

UNK_ID = 0
PAD_ID = 1
UNK_TOKEN = "<UNK>"
PAD_TOKEN = "<PAD>"


class ParseError(ValueError):
    """A corpus record could not be parsed; message names the line."""


class ValidationError(ValueError):
    """Parsed input violates a corpus-level invariant."""


class SplitError(ValueError):
    """A train/test split left one side empty."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    author_id: str
    fandom_id: str
    text: str


@dataclass(frozen=True)
class CorpusSplit:
    train: list[Document]
    test: list[Document]


@dataclass(frozen=True)
class Vocabulary:
    """Dense symbol-to-ID maps with reserved UNK (0) and PAD (1) entries."""

    token_to_id: dict[str, int]
    char_to_id: dict[str, int]

    @property
    def n_tokens(self) -> int:
        return len(self.token_to_id)

    @property
    def n_chars(self) -> int:
        return len(self.char_to_id)

    def token_id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def char_id(self, ch: str) -> int:
        return self.char_to_id.get(ch, UNK_ID)

    def to_json(self) -> str:
        tokens = sorted(self.token_to_id, key=self.token_to_id.get)
        chars = sorted(self.char_to_id, key=self.char_to_id.get)
        return json.dumps({"tokens": tokens, "chars": chars},
                          ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, payload: str) -> "Vocabulary":
        raw = json.loads(payload)
        return cls(token_to_id={t: i for i, t in enumerate(raw["tokens"])},
                   char_to_id={c: i for i, c in enumerate(raw["chars"])})

    def content_hash(self) -> str:
        return sha256(self.to_json().encode("utf-8")).hexdigest()


@dataclass
class EncodedDocument:
    """Sliding-window grids of token and character IDs for one document."""

    sentences: np.ndarray  # (n_sentences, T_w) int32
    chars: np.ndarray      # (n_sentences, T_w, T_c) int32
    n_sentences: int


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Whitespace split, then peel leading/trailing punctuation into
    standalone tokens. No lowercasing: orthography is a stylistic signal."""
    tokens: list[str] = []
    for chunk in text.split():
        lead: list[str] = []
        while chunk and _is_punct(chunk[0]):
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: list[str] = []
        while chunk and _is_punct(chunk[-1]):
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


def sliding_window(tokens: list[str], t_w: int = 30, hop: int = 26,
                   t_s_max: int = 210) -> list[list[str | None]]:
    """Cut a token stream into overlapping units of length `t_w` with hop
    `hop`; unit count is ceil((N - t_w + hop) / hop), capped at `t_s_max`.

    Streams shorter than one window (including empty ones) yield a single
    padded unit; `None` marks padding slots.
    """
    if not 0 < hop <= t_w:
        raise ValueError("hop must satisfy 0 < hop <= t_w")
    if t_s_max < 1:
        raise ValueError("t_s_max must be >= 1")
    n = len(tokens)
    if n < t_w:
        return [list(tokens) + [None] * (t_w - n)]
    count = min(math.ceil((n - t_w + hop) / hop), t_s_max)
    units: list[list[str | None]] = []
    for i in range(count):
        window: list[str | None] = list(tokens[i * hop:i * hop + t_w])
        window.extend([None] * (t_w - len(window)))
        units.append(window)
    return units


def build_vocabulary(train_docs: list[Document], v_tok: int = 5000,
                     v_chr: int = 300) -> Vocabulary:
    """Keep the top-`v_tok` tokens and top-`v_chr` characters by training
    frequency (ties broken lexicographically); everything else maps to UNK."""
    tok_counts: Counter[str] = Counter()
    chr_counts: Counter[str] = Counter()
    for doc in train_docs:
        toks = tokenize(doc.text)
        tok_counts.update(toks)
        for tok in toks:
            chr_counts.update(tok)
    tok_counts.pop(UNK_TOKEN, None)
    tok_counts.pop(PAD_TOKEN, None)

    def top(counts: Counter[str], k: int) -> list[str]:
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [sym for sym, _ in ranked[:k]]

    token_to_id = {UNK_TOKEN: UNK_ID, PAD_TOKEN: PAD_ID}
    for tok in top(tok_counts, v_tok):
        token_to_id[tok] = len(token_to_id)
    char_to_id = {UNK_TOKEN: UNK_ID, PAD_TOKEN: PAD_ID}
    for ch in top(chr_counts, v_chr):
        char_to_id[ch] = len(char_to_id)
    return Vocabulary(token_to_id=token_to_id, char_to_id=char_to_id)


def encode_document(doc: Document, vocab: Vocabulary, t_w: int = 30,
                    hop: int = 26, t_c: int = 12,
                    t_s_max: int = 210) -> EncodedDocument:
    """Tokenize, window, and map to ID grids; characters of each token are
    truncated or PAD-padded to `t_c`."""
    units = sliding_window(tokenize(doc.text), t_w=t_w, hop=hop, t_s_max=t_s_max)
    n = len(units)
    sentences = np.full((n, t_w), PAD_ID, dtype=np.int32)
    chars = np.full((n, t_w, t_c), PAD_ID, dtype=np.int32)
    for i, unit in enumerate(units):
        for j, tok in enumerate(unit):
            if tok is None:
                continue
            sentences[i, j] = vocab.token_id(tok)
            for k, ch in enumerate(tok[:t_c]):
                chars[i, j, k] = vocab.char_id(ch)
    return EncodedDocument(sentences=sentences, chars=chars, n_sentences=n)


# ingestion -------------------------------------------------------------------

def _load_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as err:
                raise ParseError(f"{path}: line {lineno}: invalid JSON ({err.msg})") from err


def _require(record: dict, key: str, path: Path, lineno: int):
    if key not in record:
        raise ParseError(f"{path}: line {lineno}: missing field '{key}'")
    return record[key]


def ingest_corpus(path: str | Path, corpus_format: str = "docs-jsonl",
                  truth_path: str | Path | None = None) -> list[Document]:
    """Load a corpus file into Documents, dropping exact-text duplicates
    (first occurrence wins).

    Formats: "docs-jsonl" has one flat document record per line;
    "pan-jsonl" has one document *pair* per line with a sibling truth file
    (default: truth.jsonl next to the pairs file) carrying authors.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if corpus_format == "docs-jsonl":
        docs = _ingest_docs_jsonl(path)
    elif corpus_format == "pan-jsonl":
        docs = _ingest_pan_jsonl(path, truth_path)
    else:
        raise ValueError(f"unknown corpus format: {corpus_format!r}")

    seen_ids: set[str] = set()
    seen_texts: set[str] = set()
    unique: list[Document] = []
    for doc in docs:
        if doc.doc_id in seen_ids:
            raise ValidationError(f"duplicate doc_id: {doc.doc_id!r}")
        seen_ids.add(doc.doc_id)
        if doc.text in seen_texts:
            continue
        seen_texts.add(doc.text)
        unique.append(doc)
    return unique


def _ingest_docs_jsonl(path: Path) -> list[Document]:
    docs = []
    for lineno, rec in _load_jsonl(path):
        doc = Document(
            doc_id=str(_require(rec, "doc_id", path, lineno)),
            author_id=str(_require(rec, "author_id", path, lineno)),
            fandom_id=str(_require(rec, "fandom_id", path, lineno)),
            text=str(_require(rec, "text", path, lineno)),
        )
        if not doc.text.strip():
            raise ParseError(f"{path}: line {lineno}: empty text")
        docs.append(doc)
    return docs


def _ingest_pan_jsonl(path: Path, truth_path: str | Path | None) -> list[Document]:
    if truth_path is None:
        truth_path = path.parent / "truth.jsonl"
    truth_path = Path(truth_path)
    if not truth_path.exists():
        raise FileNotFoundError(truth_path)

    truth: dict[str, dict] = {}
    for lineno, rec in _load_jsonl(truth_path):
        pid = str(_require(rec, "id", truth_path, lineno))
        authors = _require(rec, "authors", truth_path, lineno)
        same = _require(rec, "same", truth_path, lineno)
        if len(authors) != 2:
            raise ParseError(f"{truth_path}: line {lineno}: need exactly 2 authors")
        if bool(same) != (authors[0] == authors[1]):
            raise ValidationError(
                f"{truth_path}: line {lineno}: 'same' flag contradicts authors")
        truth[pid] = rec

    docs = []
    for lineno, rec in _load_jsonl(path):
        pid = str(_require(rec, "id", path, lineno))
        fandoms = _require(rec, "fandoms", path, lineno)
        pair = _require(rec, "pair", path, lineno)
        if len(fandoms) != 2 or len(pair) != 2:
            raise ParseError(f"{path}: line {lineno}: need 2 fandoms and 2 texts")
        if pid not in truth:
            raise ValidationError(f"{path}: line {lineno}: no truth record for id {pid!r}")
        authors = truth[pid]["authors"]
        for k in range(2):
            text = str(pair[k])
            if not text.strip():
                raise ParseError(f"{path}: line {lineno}: empty text")
            docs.append(Document(doc_id=f"{pid}_{k + 1}",
                                 author_id=str(authors[k]),
                                 fandom_id=str(fandoms[k]),
                                 text=text))
    return docs


# splitting --------------------------------------------------------------------

def split_disjoint(docs: list[Document], test_fandom_fraction: float,
                   seed: int) -> CorpusSplit:
    """Partition fandoms into train/test by the given fraction, then drop any
    test document whose author also writes on the train side, so that the two
    sides share neither authors nor fandoms."""
    if not docs:
        raise SplitError("no documents to split")
    if not 0.0 < test_fandom_fraction < 1.0:
        raise ValueError("test_fandom_fraction must be in (0, 1)")
    fandoms = sorted({d.fandom_id for d in docs})
    if len(fandoms) < 2:
        raise SplitError("need at least two fandoms for a disjoint split")
    rng = np.random.default_rng(seed)
    order = [fandoms[i] for i in rng.permutation(len(fandoms))]
    n_test = min(max(round(test_fandom_fraction * len(fandoms)), 1), len(fandoms) - 1)
    test_fandoms = set(order[:n_test])

    train = [d for d in docs if d.fandom_id not in test_fandoms]
    train_authors = {d.author_id for d in train}
    test = [d for d in docs
            if d.fandom_id in test_fandoms and d.author_id not in train_authors]
    if not train or not test:
        raise SplitError("split produced an empty side")
    return CorpusSplit(train=train, test=test)


def split_stats(split: CorpusSplit) -> dict:
    def side(docs: list[Document]) -> dict:
        return {"documents": len(docs),
                "authors": len({d.author_id for d in docs}),
                "fandoms": len({d.fandom_id for d in docs})}
    return {"train": side(split.train), "test": side(split.test)}
