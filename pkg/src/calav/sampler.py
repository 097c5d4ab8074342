"""Epoch-wise re-sampling of training document pairs.

Every epoch each document lands in at most one pair. A first pass walks the
authors: with probability delta_1 the author's next document tries to form a
same-author pair (same fandom with probability delta_2, otherwise different
fandom), and otherwise the document joins a different-author candidate pool.
A second pass matches pool documents across authors, preferring same-fandom
partners with probability delta_3.

Failed attempts degrade rather than abort: a same-author same-fandom attempt
falls back to a different-fandom partner; a same-author attempt with no
partner at all turns the document into a different-author candidate; in the
pool, the fandom preference degrades in both directions so a document is only
dropped when no other author has documents left. Pool documents are matched
majority-author first, which keeps the number of unpaired documents minimal.
"""

from __future__ import annotations

import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .data import Document

SUBSET_TAGS = ("SA_SF", "SA_DF", "DA_SF", "DA_DF")


def pair_tag(a: int, f: int) -> str:
    return ("SA" if a else "DA") + "_" + ("SF" if f else "DF")


@dataclass(frozen=True)
class DocumentPair:
    doc_1: str
    doc_2: str
    a: int  # 1 iff same author
    f: int  # 1 iff same fandom

    @property
    def tag(self) -> str:
        return pair_tag(self.a, self.f)


@dataclass(frozen=True)
class SamplerConfig:
    delta_1: float = 0.7
    delta_2: float = 0.6
    delta_3: float = 0.6
    seed: int = 0

    def __post_init__(self):
        for name in ("delta_1", "delta_2", "delta_3"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def _make_pair(rng, d1: Document, d2: Document) -> DocumentPair:
    if rng.random() < 0.5:
        d1, d2 = d2, d1
    return DocumentPair(doc_1=d1.doc_id, doc_2=d2.doc_id,
                        a=int(d1.author_id == d2.author_id),
                        f=int(d1.fandom_id == d2.fandom_id))


def resample_epoch(docs: list[Document], cfg: SamplerConfig) -> list[DocumentPair]:
    """Sample one epoch of document pairs; deterministic in (docs, cfg)."""
    if len(docs) < 2:
        raise ValueError("need at least two documents to sample pairs")
    rng = np.random.default_rng(cfg.seed)
    ordered = sorted(docs, key=lambda d: (d.author_id, d.fandom_id, d.doc_id))

    by_author: dict[str, list[Document]] = defaultdict(list)
    for doc in ordered:
        by_author[doc.author_id].append(doc)
    authors = sorted(by_author)
    authors = [authors[i] for i in rng.permutation(len(authors))]
    for author in authors:
        pool = by_author[author]
        by_author[author] = [pool[i] for i in rng.permutation(len(pool))]

    pairs: list[DocumentPair] = []
    da_pool: list[Document] = []

    # pass 1: same-author pairs / different-author candidates
    live = list(authors)
    while live:
        still_live = []
        for author in live:
            remaining = by_author[author]
            focal = remaining.pop()
            if rng.random() < cfg.delta_1:
                prefer_same_fandom = rng.random() < cfg.delta_2
                partner_idx = _find_author_partner(
                    rng, remaining, focal, prefer_same_fandom)
                if partner_idx is not None:
                    partner = remaining.pop(partner_idx)
                    pairs.append(_make_pair(rng, focal, partner))
                else:
                    da_pool.append(focal)
            else:
                da_pool.append(focal)
            if remaining:
                still_live.append(author)
        live = still_live

    # pass 2: different-author pairs from the candidate pool
    pairs.extend(_match_da_pool(rng, da_pool, cfg.delta_3))
    return pairs


def _find_author_partner(rng, remaining: list[Document], focal: Document,
                         prefer_same_fandom: bool) -> int | None:
    if not remaining:
        return None
    same = [i for i, d in enumerate(remaining) if d.fandom_id == focal.fandom_id]
    diff = [i for i, d in enumerate(remaining) if d.fandom_id != focal.fandom_id]
    if prefer_same_fandom:
        candidates = same or diff  # failed SA_SF degrades to SA_DF
    else:
        candidates = diff  # failed SA_DF makes the document a DA candidate
    if not candidates:
        return None
    return candidates[rng.integers(len(candidates))]


class _DaPool:
    """Different-author candidate pool with lazy deletion, so partner lookups
    stay cheap on large corpora."""

    def __init__(self, rng, docs: list[Document]):
        self.rng = rng
        self.consumed: set[str] = set()
        self.by_author: dict[str, list[Document]] = defaultdict(list)
        self.by_fandom: dict[str, list[Document]] = defaultdict(list)
        self.everything: list[Document] = list(docs)
        self.live_count: Counter[str] = Counter()
        self.first_seen: dict[str, int] = {}
        for rank, doc in enumerate(docs):
            self.by_author[doc.author_id].append(doc)
            self.by_fandom[doc.fandom_id].append(doc)
            self.live_count[doc.author_id] += 1
            self.first_seen.setdefault(doc.author_id, rank)
        self.n_live = len(docs)
        self.heap = [(-c, self.first_seen[a], a) for a, c in self.live_count.items()]
        heapq.heapify(self.heap)

    def consume(self, doc: Document) -> None:
        self.consumed.add(doc.doc_id)
        self.live_count[doc.author_id] -= 1
        self.n_live -= 1
        heapq.heappush(self.heap, (-self.live_count[doc.author_id],
                                   self.first_seen[doc.author_id], doc.author_id))

    def pop_focal(self) -> Document | None:
        """Take a document of the author with the most live documents."""
        while self.heap:
            neg, _, author = heapq.heappop(self.heap)
            if -neg != self.live_count[author] or self.live_count[author] == 0:
                continue  # stale heap entry
            stack = self.by_author[author]
            while stack and stack[-1].doc_id in self.consumed:
                stack.pop()
            doc = stack.pop()
            self.consumed.add(doc.doc_id)
            self.live_count[author] -= 1
            self.n_live -= 1
            if self.live_count[author]:
                heapq.heappush(self.heap, (-self.live_count[author],
                                           self.first_seen[author], author))
            return doc
        return None

    def _draw(self, bucket: list[Document], valid) -> Document | None:
        """Rejection-sample a valid live document from a bucket; falls back to
        compaction plus a full scan when rejections pile up."""
        for _ in range(8):
            if not bucket:
                return None
            i = int(self.rng.integers(len(bucket)))
            doc = bucket[i]
            if doc.doc_id in self.consumed:
                bucket[i] = bucket[-1]
                bucket.pop()
                continue
            if valid(doc):
                return doc
        live = [d for d in bucket if d.doc_id not in self.consumed]
        bucket[:] = live
        ok = [d for d in live if valid(d)]
        if not ok:
            return None
        return ok[int(self.rng.integers(len(ok)))]

    def take_partner(self, focal: Document, prefer_same_fandom: bool
                     ) -> Document | None:
        def other_author(d: Document) -> bool:
            return d.author_id != focal.author_id

        def same_fandom() -> Document | None:
            return self._draw(self.by_fandom[focal.fandom_id], other_author)

        def diff_fandom() -> Document | None:
            return self._draw(self.everything,
                              lambda d: other_author(d)
                              and d.fandom_id != focal.fandom_id)

        first, second = ((same_fandom, diff_fandom) if prefer_same_fandom
                         else (diff_fandom, same_fandom))
        partner = first() or second()  # fandom preference degrades both ways
        if partner is not None:
            self.consume(partner)
        return partner


def _match_da_pool(rng, pool_docs: list[Document], delta_3: float
                   ) -> list[DocumentPair]:
    """Pair pool documents across authors, same-fandom first with probability
    delta_3. Always matching from the author with the most live documents
    leaves at most one document unpaired whenever no author holds more than
    half of the pool."""
    shuffled = [pool_docs[i] for i in rng.permutation(len(pool_docs))]
    pool = _DaPool(rng, shuffled)
    pairs: list[DocumentPair] = []
    while pool.n_live >= 2:
        focal = pool.pop_focal()
        if focal is None:
            break
        prefer_same_fandom = rng.random() < delta_3
        partner = pool.take_partner(focal, prefer_same_fandom)
        if partner is None:
            continue  # no other author has documents left; drop the focal doc
        pairs.append(_make_pair(rng, focal, partner))
    return pairs


def sample_fixed_test_pairs(docs: list[Document], seed: int,
                            keep: set[str] | None = None,
                            deltas: tuple[float, float, float] = (0.7, 0.6, 0.6),
                            ) -> list[DocumentPair]:
    """One-time pair generation for a test split; the result is meant to be
    serialized and reused. `keep` optionally restricts the subset tags (e.g.
    {"SA_DF", "DA_SF"} for the cross-topic evaluation condition)."""
    cfg = SamplerConfig(delta_1=deltas[0], delta_2=deltas[1],
                        delta_3=deltas[2], seed=seed)
    pairs = resample_epoch(docs, cfg)
    if keep is not None:
        unknown = set(keep) - set(SUBSET_TAGS)
        if unknown:
            raise ValueError(f"unknown subset tags: {sorted(unknown)}")
        pairs = [p for p in pairs if p.tag in keep]
    return pairs


def pair_count_histogram(epochs: list[list[DocumentPair]]
                         ) -> list[tuple[str, str, int]]:
    """How often each unordered pair occurred across epochs, most frequent
    first (Zipf order); rows are (doc_1, doc_2, count) with doc ids sorted."""
    if not epochs:
        raise ValueError("need at least one epoch")
    counts: Counter[tuple[str, str]] = Counter()
    for pairs in epochs:
        for p in pairs:
            counts[tuple(sorted((p.doc_1, p.doc_2)))] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(a, b, c) for (a, b), c in ranked]


# pair file round-trip ---------------------------------------------------------

def pairs_to_jsonl(pairs: list[DocumentPair]) -> str:
    import json
    lines = [json.dumps({"doc_id_1": p.doc_1, "doc_id_2": p.doc_2,
                         "a": p.a, "f": p.f}) for p in pairs]
    return "\n".join(lines) + ("\n" if lines else "")


def pairs_from_jsonl(payload: str) -> list[DocumentPair]:
    import json
    pairs = []
    for line in payload.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        pairs.append(DocumentPair(doc_1=rec["doc_id_1"], doc_2=rec["doc_id_2"],
                                  a=int(rec["a"]), f=int(rec["f"])))
    return pairs
