"""Synthetic corpora with controllable style and topic signal.

Each author draws a sparse preference distribution over shared style-marker
tokens; each fandom owns a block of topic tokens that acts as a confounder.
Documents mix style, topic, and filler tokens, so verification has to key on
the author signal while ignoring the topical one. Useful for end-to-end
benchmarks and for trying the CLI without a real corpus.
"""

from __future__ import annotations

import numpy as np

from .data import Document

STYLE_TOKENS = 50
TOPIC_TOKENS_PER_FANDOM = 30
FILLER_TOKENS = 40


def make_style_corpus(n_authors: int = 200, docs_per_author: int = 4,
                      n_fandoms: int = 2, doc_len: int = 100,
                      style_frac: float = 0.5, topic_frac: float = 0.3,
                      style_concentration: float = 0.25,
                      seed: int = 0) -> list[Document]:
    """Author-identifiable documents with fandom confounders.

    A document is a bag of tokens: `style_frac` of them come from the
    author's Dirichlet-sampled style distribution, `topic_frac` from the
    fandom's topic distribution, and the rest from a global filler
    distribution. Documents alternate fandoms within each author, so both
    same-author/different-fandom and different-author/same-fandom pairs
    exist.
    """
    if not 0 <= style_frac + topic_frac <= 1:
        raise ValueError("style_frac + topic_frac must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    style_vocab = [f"st{i:02d}" for i in range(STYLE_TOKENS)]
    filler_vocab = [f"fl{i:02d}" for i in range(FILLER_TOKENS)]
    topic_vocab = {f: [f"tp{f}x{i:02d}" for i in range(TOPIC_TOKENS_PER_FANDOM)]
                   for f in range(n_fandoms)}
    filler_dist = rng.dirichlet(np.ones(FILLER_TOKENS))
    topic_dist = {f: rng.dirichlet(np.ones(TOPIC_TOKENS_PER_FANDOM) * 0.5)
                  for f in range(n_fandoms)}

    docs: list[Document] = []
    for a in range(n_authors):
        style_dist = rng.dirichlet(np.ones(STYLE_TOKENS) * style_concentration)
        for k in range(docs_per_author):
            fandom = k % n_fandoms
            n_style = int(round(style_frac * doc_len))
            n_topic = int(round(topic_frac * doc_len))
            n_fill = doc_len - n_style - n_topic
            tokens = list(rng.choice(style_vocab, size=n_style, p=style_dist))
            tokens += list(rng.choice(topic_vocab[fandom], size=n_topic,
                                      p=topic_dist[fandom]))
            tokens += list(rng.choice(filler_vocab, size=n_fill, p=filler_dist))
            order = rng.permutation(len(tokens))
            text = " ".join(tokens[i] for i in order)
            docs.append(Document(doc_id=f"a{a:04d}d{k}", author_id=f"a{a:04d}",
                                 fandom_id=f"f{fandom}", text=text))
    return docs


def make_sampler_corpus(n_docs: int = 10000, n_fandoms: int = 50,
                        doc_weights: tuple[float, ...] = (0.72, 0.24, 0.03, 0.01),
                        seed: int = 0) -> list[Document]:
    """Metadata-focused corpus whose author size distribution mirrors a large
    fan-fiction collection: mostly single-document authors, so re-sampling
    produces roughly 70% different-author pairs."""
    rng = np.random.default_rng(seed)
    docs: list[Document] = []
    author = 0
    sizes = np.arange(1, len(doc_weights) + 1)
    while len(docs) < n_docs:
        n = int(rng.choice(sizes, p=doc_weights))
        n = min(n, n_docs - len(docs))
        for k in range(n):
            docs.append(Document(doc_id=f"a{author:05d}d{k}",
                                 author_id=f"a{author:05d}",
                                 fandom_id=f"f{rng.integers(n_fandoms):02d}",
                                 text="placeholder"))
        author += 1
    return docs
