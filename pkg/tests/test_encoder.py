"""Encoder tests: embedding lookup, attention pooling invariants, padding
behavior, and finite-difference gradients."""

import numpy as np
import pytest

from calav.data import (PAD_ID, Document, EncodedDocument, build_vocabulary,
                        encode_document)
from calav.encoder import (EmbeddingTables, attention_weights, embed, encode,
                           encode_batch, encoder_backward,
                           init_embedding_tables, init_encoder_params,
                           load_word_table, stack_documents)
from fdcheck import assert_grads_close, numeric_grads

DIMS = dict(d_w=5, d_c=3, d_r=4, d_x=6)


def tiny_setup(seed=0):
    docs = [Document("d0", "a", "f", "alpha beta gamma delta alpha beta "
                                     "epsilon zeta eta theta")]
    vocab = build_vocabulary(docs, v_tok=12, v_chr=20)
    rng = np.random.default_rng(seed)
    tables = init_embedding_tables(rng, vocab.n_tokens, vocab.n_chars,
                                   DIMS["d_w"], DIMS["d_c"])
    params = init_encoder_params(rng, **DIMS)
    return docs, vocab, tables, params


def encode_text(text, vocab, t_w=4, hop=3, t_c=5):
    return encode_document(Document("x", "a", "f", text) if text.strip()
                           else EmptyDoc(), vocab, t_w=t_w, hop=hop, t_c=t_c)


class EmptyDoc:
    text = ""


class TestEmbed:
    def test_shapes(self):
        docs, vocab, tables, _ = tiny_setup()
        enc = encode_document(docs[0], vocab, t_w=4, hop=3, t_c=5)
        words, chars = embed(enc, tables)
        assert words.shape == enc.sentences.shape + (DIMS["d_w"],)
        assert chars.shape == enc.chars.shape + (DIMS["d_c"],)

    def test_pad_is_zero(self):
        docs, vocab, tables, _ = tiny_setup()
        enc = encode_text("eta", vocab)  # padded unit; 3-char token, t_c=5
        words, chars = embed(enc, tables)
        np.testing.assert_array_equal(words[0, 1], 0.0)
        np.testing.assert_array_equal(chars[0, 0, 3:], 0.0)

    def test_lookup_deterministic(self):
        docs, vocab, tables, _ = tiny_setup()
        enc = encode_text("alpha alpha", vocab)
        words, _ = embed(enc, tables)
        np.testing.assert_array_equal(words[0, 0], words[0, 1])

    def test_out_of_range_raises(self):
        docs, vocab, tables, _ = tiny_setup()
        enc = encode_text("alpha", vocab)
        enc.sentences[0, 0] = tables.word.shape[0] + 5
        with pytest.raises(IndexError):
            embed(enc, tables)


class TestEncode:
    def test_repeated_sentences_collapse(self):
        docs, vocab, tables, params = tiny_setup()
        one = encode_text("alpha beta gamma delta", vocab, t_w=4, hop=4)
        # same unit repeated: windows at hop=4 tile the stream exactly
        three = encode_text("alpha beta gamma delta " * 3, vocab, t_w=4, hop=4)
        assert three.n_sentences == 3
        x1 = encode(one, tables, params)
        x3 = encode(three, tables, params)
        np.testing.assert_allclose(x3, x1, atol=1e-12)

    def test_all_pad_document_is_deterministic_zero_input_encoding(self):
        docs, vocab, tables, params = tiny_setup()
        enc = encode_document(EmptyDoc(), vocab, t_w=4, hop=3, t_c=5)
        x = encode(enc, tables, params)
        np.testing.assert_array_equal(x, np.zeros(DIMS["d_x"]))

    def test_invariant_to_trailing_pad_units(self):
        docs, vocab, tables, params = tiny_setup()
        enc = encode_text("alpha beta gamma delta alpha", vocab)
        x = encode(enc, tables, params)
        padded = EncodedDocument(
            sentences=np.vstack([enc.sentences,
                                 np.full((2, 4), PAD_ID, np.int32)]),
            chars=np.vstack([enc.chars,
                             np.full((2, 4, 5), PAD_ID, np.int32)]),
            n_sentences=enc.n_sentences + 2)
        x_padded = encode(padded, tables, params)
        np.testing.assert_array_equal(x_padded, x)

    def test_attention_weights_normalized_over_unmasked(self):
        docs, vocab, tables, params = tiny_setup()
        enc = encode_text("alpha beta gamma delta alpha beta", vocab)
        w_char, w_tok, w_sent = attention_weights(enc, tables, params)
        assert np.all(w_char >= 0) and np.all(w_tok >= 0) and np.all(w_sent >= 0)
        # 6 tokens, t_w=4, hop=3: unit 1 holds 3 real tokens out of 4 slots
        np.testing.assert_allclose(w_tok[1].sum(), 1.0, atol=1e-12)
        np.testing.assert_array_equal(w_tok[1, 3:], 0.0)
        np.testing.assert_allclose(w_sent.sum(), 1.0, atol=1e-12)

    def test_batch_matches_single(self):
        docs, vocab, tables, params = tiny_setup()
        enc1 = encode_text("alpha beta gamma", vocab)
        enc2 = encode_text("delta epsilon zeta eta theta alpha beta", vocab)
        batch = encode_batch([enc1, enc2], tables, params)
        np.testing.assert_allclose(batch[0], encode(enc1, tables, params),
                                   atol=1e-12)
        np.testing.assert_allclose(batch[1], encode(enc2, tables, params),
                                   atol=1e-12)

    def test_finite_output(self):
        docs, vocab, tables, params = tiny_setup()
        enc = encode_text("alpha beta gamma delta " * 10, vocab)
        assert np.all(np.isfinite(encode(enc, tables, params)))


class TestStackDocuments:
    def test_pads_to_longest(self):
        docs, vocab, _, _ = tiny_setup()
        enc1 = encode_text("alpha beta", vocab)
        enc2 = encode_text("alpha beta gamma delta alpha beta gamma", vocab)
        tokens, chars = stack_documents([enc1, enc2])
        assert tokens.shape[0] == 2
        assert tokens.shape[1] == enc2.n_sentences
        assert np.all(tokens[0, enc1.n_sentences:] == PAD_ID)


class TestEncoderBackward:
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference(self, seed):
        docs, vocab, tables, params = tiny_setup(seed)
        enc = encode_text("alpha beta gamma delta alpha zeta", vocab)
        rng = np.random.default_rng(seed + 100)
        grad_x = rng.normal(size=DIMS["d_x"])
        table_grads, param_grads = encoder_backward(enc, tables, params, grad_x)

        arrays = {"word": tables.word.copy(), "char": tables.char.copy()}
        for name in param_grads:
            arrays[name] = getattr(params, name).copy()

        def forward(arrs):
            tb = EmbeddingTables(word=arrs["word"], char=arrs["char"])
            pm = init_encoder_params(np.random.default_rng(0), **DIMS)
            for name in param_grads:
                setattr(pm, name, arrs[name])
            return float(np.dot(grad_x, encode(enc, tb, pm)))

        numeric = numeric_grads(forward, arrays)
        # the frozen PAD row is excluded from the comparison
        numeric["word"][PAD_ID] = 0.0
        numeric["char"][PAD_ID] = 0.0
        assert_grads_close({**table_grads, **param_grads}, numeric)

    def test_zero_seed_gives_zero_grads(self):
        docs, vocab, tables, params = tiny_setup()
        enc = encode_text("alpha beta", vocab)
        table_grads, param_grads = encoder_backward(enc, tables, params,
                                                    np.zeros(DIMS["d_x"]))
        for g in list(table_grads.values()) + list(param_grads.values()):
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_pad_row_gradient_never_applied(self):
        docs, vocab, tables, params = tiny_setup()
        enc = encode_text("alpha beta gamma", vocab)
        table_grads, _ = encoder_backward(enc, tables, params,
                                          np.ones(DIMS["d_x"]))
        np.testing.assert_array_equal(table_grads["word"][PAD_ID], 0.0)
        np.testing.assert_array_equal(table_grads["char"][PAD_ID], 0.0)


class TestWordTableImport:
    def test_known_tokens_loaded(self, tmp_path):
        docs, vocab, _, _ = tiny_setup()
        path = tmp_path / "vecs.txt"
        vec = " ".join(str(v) for v in range(DIMS["d_w"]))
        path.write_text(f"alpha {vec}\nunseen {vec}\n")
        table = load_word_table(path, vocab, DIMS["d_w"],
                                np.random.default_rng(0))
        np.testing.assert_array_equal(table[vocab.token_to_id["alpha"]],
                                      np.arange(DIMS["d_w"], dtype=float))
        np.testing.assert_array_equal(table[PAD_ID], 0.0)

    def test_bad_width_rejected(self, tmp_path):
        docs, vocab, _, _ = tiny_setup()
        path = tmp_path / "vecs.txt"
        path.write_text("alpha 1.0 2.0\n")
        with pytest.raises(ValueError, match="line 1"):
            load_word_table(path, vocab, DIMS["d_w"], np.random.default_rng(0))
