"""Pair re-sampling tests: determinism, per-epoch uniqueness, tag
consistency, delta semantics, and the Zipf histogram."""

import numpy as np
import pytest

from calav.data import Document
from calav.sampler import (DocumentPair, SamplerConfig, pair_count_histogram,
                           pair_tag, pairs_from_jsonl, pairs_to_jsonl,
                           resample_epoch, sample_fixed_test_pairs)


def corpus(spec):
    """spec: list of (author, fandom, n_docs)."""
    docs = []
    for author, fandom, n in spec:
        for k in range(n):
            docs.append(Document(doc_id=f"{author}-{fandom}-{k}", author_id=author,
                                 fandom_id=fandom, text="t"))
    return docs


def random_corpus(seed, n_authors=40, max_docs=4, n_fandoms=6):
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n_authors):
        n = int(rng.integers(1, max_docs + 1))
        for k, f in enumerate(rng.choice(n_fandoms, size=n)):
            docs.append(Document(doc_id=f"a{i}-{k}", author_id=f"a{i}",
                                 fandom_id=f"f{f}", text="t"))
    return docs


def check_epoch_invariants(docs, pairs):
    by_id = {d.doc_id: d for d in docs}
    used = [p.doc_1 for p in pairs] + [p.doc_2 for p in pairs]
    assert len(used) == len(set(used)), "a document was paired twice"
    unpaired = set(by_id) - set(used)
    assert len(unpaired) <= 1
    for p in pairs:
        d1, d2 = by_id[p.doc_1], by_id[p.doc_2]
        assert p.doc_1 != p.doc_2
        assert p.a == int(d1.author_id == d2.author_id)
        assert p.f == int(d1.fandom_id == d2.fandom_id)
        assert p.tag == pair_tag(p.a, p.f)


class TestResampleEpoch:
    def test_determinism(self):
        docs = random_corpus(0)
        cfg = SamplerConfig(seed=7)
        assert resample_epoch(docs, cfg) == resample_epoch(docs, cfg)

    def test_different_seeds_differ(self):
        docs = random_corpus(1)
        p1 = resample_epoch(docs, SamplerConfig(seed=1))
        p2 = resample_epoch(docs, SamplerConfig(seed=2))
        assert p1 != p2

    @pytest.mark.parametrize("seed", range(8))
    def test_invariants_random_corpora(self, seed):
        docs = random_corpus(seed)
        pairs = resample_epoch(docs, SamplerConfig(seed=seed))
        check_epoch_invariants(docs, pairs)

    def test_single_doc_authors_yield_only_da(self):
        docs = corpus([(f"a{i}", f"f{i % 3}", 1) for i in range(20)])
        pairs = resample_epoch(docs, SamplerConfig(seed=0))
        assert pairs, "expected pairs from 20 documents"
        assert all(p.a == 0 for p in pairs)

    def test_delta1_zero_means_no_sa_pairs(self):
        docs = corpus([("a0", "f0", 4), ("a1", "f0", 4), ("a2", "f1", 4)])
        pairs = resample_epoch(docs, SamplerConfig(delta_1=0.0, seed=3))
        assert pairs
        assert all(p.a == 0 for p in pairs)

    def test_delta1_delta2_one_means_only_sa_sf(self):
        # even per-author doc counts, one fandom per author: every attempt
        # can succeed, so nothing falls through to the DA pool
        docs = corpus([("a0", "f0", 4), ("a1", "f1", 2), ("a2", "f2", 6)])
        pairs = resample_epoch(docs, SamplerConfig(delta_1=1.0, delta_2=1.0, seed=4))
        assert len(pairs) == 6
        assert all(p.tag == "SA_SF" for p in pairs)

    def test_sa_sf_degrades_to_sa_df(self):
        # one author, two docs in different fandoms: same-fandom attempts
        # must degrade, plus a filler author so the corpus is pairable
        docs = corpus([("a0", "f0", 1), ("a0", "f1", 1)])
        pairs = resample_epoch(docs, SamplerConfig(delta_1=1.0, delta_2=1.0, seed=5))
        assert [p.tag for p in pairs] == ["SA_DF"]

    def test_da_fandom_preference_degrades(self):
        # two authors, same fandom: a DA_DF preference must still pair them
        docs = corpus([("a0", "f0", 1), ("a1", "f0", 1)])
        pairs = resample_epoch(docs, SamplerConfig(delta_1=0.0, delta_3=0.0, seed=6))
        assert [p.tag for p in pairs] == ["DA_SF"]

    def test_needs_two_docs(self):
        with pytest.raises(ValueError):
            resample_epoch(corpus([("a", "f", 1)]), SamplerConfig())

    def test_order_randomized_within_pair(self):
        docs = corpus([("a0", "f0", 2)])
        seen_first = set()
        for seed in range(20):
            (pair,) = resample_epoch(docs, SamplerConfig(delta_1=1.0, delta_2=1.0,
                                                         seed=seed))
            seen_first.add(pair.doc_1)
        assert len(seen_first) == 2  # both orders occur across seeds


class TestFixedTestPairs:
    def test_deterministic(self):
        docs = random_corpus(2)
        p1 = sample_fixed_test_pairs(docs, seed=11)
        p2 = sample_fixed_test_pairs(docs, seed=11)
        assert p1 == p2

    def test_filter_excludes_tags(self):
        docs = random_corpus(3, n_authors=60)
        pairs = sample_fixed_test_pairs(docs, seed=1, keep={"SA_DF", "DA_SF"})
        assert pairs
        assert all(p.tag in {"SA_DF", "DA_SF"} for p in pairs)
        assert not any((p.a, p.f) == (1, 1) for p in pairs)

    def test_unknown_tag_rejected(self):
        with pytest.raises(ValueError):
            sample_fixed_test_pairs(random_corpus(4), seed=0, keep={"XX"})

    def test_jsonl_roundtrip(self):
        docs = random_corpus(5)
        pairs = sample_fixed_test_pairs(docs, seed=2)
        assert pairs_from_jsonl(pairs_to_jsonl(pairs)) == pairs


class TestHistogram:
    def test_single_epoch_counts_one(self):
        docs = random_corpus(6)
        pairs = resample_epoch(docs, SamplerConfig(seed=0))
        rows = pair_count_histogram([pairs])
        assert all(c == 1 for _, _, c in rows)
        assert len(rows) == len(pairs)

    def test_two_identical_epochs(self):
        docs = random_corpus(7)
        pairs = resample_epoch(docs, SamplerConfig(seed=0))
        rows = pair_count_histogram([pairs, pairs])
        assert all(c == 2 for _, _, c in rows)

    def test_forced_repeat_dominates(self):
        # one 2-doc author among many 1-doc authors: its SA pair is the only
        # pair that can repeat every epoch
        docs = corpus([("big", "f0", 2)] + [(f"s{i}", f"f{i % 4}", 1)
                                            for i in range(30)])
        epochs = [resample_epoch(docs, SamplerConfig(delta_1=1.0, delta_2=1.0,
                                                     seed=s))
                  for s in range(25)]
        rows = pair_count_histogram(epochs)
        top = rows[0]
        assert {top[0], top[1]} == {"big-f0-0", "big-f0-1"}
        assert top[2] == 25
        assert top[2] > rows[1][2]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pair_count_histogram([])

    def test_ordering_is_zipf(self):
        docs = random_corpus(8)
        epochs = [resample_epoch(docs, SamplerConfig(seed=s)) for s in range(6)]
        rows = pair_count_histogram(epochs)
        counts = [c for _, _, c in rows]
        assert counts == sorted(counts, reverse=True)
