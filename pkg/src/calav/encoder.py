"""Reference document encoder: two-tier attention pooling over token and
character embeddings.

Each token gets a character-level vector (attention-weighted sum of its
projected character embeddings) fused with its word embedding through a tanh
affine map; attention pooling over tokens yields sentence-unit vectors, and
attention pooling over units yields the document embedding. PAD positions are
masked out of every attention normalization, so the encoding is invariant to
trailing padding.

The encoder sits behind a small interface (init + encode + backward), so a
recurrent or transformer encoder could be swapped in without touching the
downstream scoring stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import PAD_ID, EncodedDocument


@dataclass
class EmbeddingTables:
    word: np.ndarray  # (V_tok, D_w); PAD row all-zero and frozen
    char: np.ndarray  # (V_chr, D_c); PAD row all-zero and frozen


@dataclass
class EncoderParams:
    w_char_proj: np.ndarray  # (D_c, D_r)
    b_char_proj: np.ndarray  # (D_r,)
    a_char: np.ndarray       # (D_r,) character attention scores
    w_tok_word: np.ndarray   # (D_w, D_x)
    w_tok_char: np.ndarray   # (D_r, D_x)
    b_tok: np.ndarray        # (D_x,)
    a_tok: np.ndarray        # (D_x,) token attention scores
    a_sent: np.ndarray       # (D_x,) sentence-unit attention scores

    @property
    def output_dim(self) -> int:
        return self.b_tok.shape[0]


TABLE_INIT_RANGE = 0.1


def init_embedding_tables(rng: np.random.Generator, n_tokens: int,
                          n_chars: int, d_w: int, d_c: int) -> EmbeddingTables:
    word = rng.uniform(-TABLE_INIT_RANGE, TABLE_INIT_RANGE, size=(n_tokens, d_w))
    char = rng.uniform(-TABLE_INIT_RANGE, TABLE_INIT_RANGE, size=(n_chars, d_c))
    word[PAD_ID] = 0.0
    char[PAD_ID] = 0.0
    return EmbeddingTables(word=word, char=char)


def _glorot(rng, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def init_encoder_params(rng: np.random.Generator, d_w: int, d_c: int,
                        d_r: int, d_x: int) -> EncoderParams:
    return EncoderParams(
        w_char_proj=_glorot(rng, d_c, d_r),
        b_char_proj=np.zeros(d_r),
        a_char=_glorot(rng, d_r, 1)[:, 0],
        w_tok_word=_glorot(rng, d_w, d_x),
        w_tok_char=_glorot(rng, d_r, d_x),
        b_tok=np.zeros(d_x),
        a_tok=_glorot(rng, d_x, 1)[:, 0],
        a_sent=_glorot(rng, d_x, 1)[:, 0],
    )


def load_word_table(path, vocab, d_w: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Build a word table from a whitespace text file (token then d_w floats
    per line). Tokens absent from the file keep their random initialization;
    the PAD row stays zero."""
    table = rng.uniform(-TABLE_INIT_RANGE, TABLE_INIT_RANGE,
                        size=(vocab.n_tokens, d_w))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != d_w + 1:
                raise ValueError(f"{path}: line {lineno}: expected a token "
                                 f"and {d_w} floats")
            token = parts[0]
            if token in vocab.token_to_id:
                table[vocab.token_to_id[token]] = [float(v) for v in parts[1:]]
    table[PAD_ID] = 0.0
    return table


# forward graph ----------------------------------------------------------------

def _masked_softmax(scores: ad.Tensor, mask: np.ndarray, axis: int) -> ad.Tensor:
    """Softmax over unmasked positions; rows with no unmasked position get
    all-zero weights."""
    masked_scores = np.where(mask > 0, scores.data, -np.inf)
    shift = np.max(masked_scores, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    # masked positions are pinned at the shift value before exp, so huge
    # off-mask scores cannot overflow into inf * 0
    pinned = scores * ad.constant(mask) + ad.constant(shift * (1.0 - mask))
    e = ad.exp(pinned - ad.constant(shift)) * ad.constant(mask)
    denom = ad.sum_(e, axis=axis, keepdims=True)
    empty = (mask.sum(axis=axis, keepdims=True) == 0).astype(np.float64)
    return e / (denom + ad.constant(empty))


def _attend(values: ad.Tensor, scores: ad.Tensor, mask: np.ndarray,
            axis: int) -> tuple[ad.Tensor, ad.Tensor]:
    weights = _masked_softmax(scores, mask, axis=axis)
    pooled = ad.sum_(ad.expand_last(weights) * values, axis=axis)
    return pooled, weights


def encode_graph(tokens: np.ndarray, chars: np.ndarray,
                 tables: dict[str, ad.Tensor], params: dict[str, ad.Tensor],
                 return_attention: bool = False):
    """Batched encoder forward pass.

    tokens: (B, S, T_w) int32; chars: (B, S, T_w, T_c) int32. Returns the
    document embeddings (B, D_x), plus the three attention-weight tensors
    when requested.
    """
    tok_mask = (tokens != PAD_ID).astype(np.float64)
    chr_mask = (chars != PAD_ID).astype(np.float64)
    sent_mask = tok_mask.max(axis=2)

    e_w = ad.gather(tables["word"], tokens)                     # (B,S,Tw,Dw)
    e_c = ad.gather(tables["char"], chars)                      # (B,S,Tw,Tc,Dc)

    proj = ad.tanh(ad.dot(e_c, params["w_char_proj"]) + params["b_char_proj"])
    char_scores = ad.sum_(proj * params["a_char"], axis=-1)     # (B,S,Tw,Tc)
    char_vec, w_char = _attend(proj, char_scores, chr_mask, axis=3)

    tok = ad.tanh(ad.dot(e_w, params["w_tok_word"])
                  + ad.dot(char_vec, params["w_tok_char"]) + params["b_tok"])
    tok_scores = ad.sum_(tok * params["a_tok"], axis=-1)        # (B,S,Tw)
    sent_vec, w_tok = _attend(tok, tok_scores, tok_mask, axis=2)

    sent_scores = ad.sum_(sent_vec * params["a_sent"], axis=-1)  # (B,S)
    doc_vec, w_sent = _attend(sent_vec, sent_scores, sent_mask, axis=1)

    if return_attention:
        return doc_vec, (w_char, w_tok, w_sent)
    return doc_vec


def tables_as_tensors(tables: EmbeddingTables, trainable: bool = False
                      ) -> dict[str, ad.Tensor]:
    make = ad.leaf if trainable else ad.constant
    return {"word": make(tables.word), "char": make(tables.char)}


def params_as_tensors(params: EncoderParams, trainable: bool = False
                      ) -> dict[str, ad.Tensor]:
    make = ad.leaf if trainable else ad.constant
    return {name: make(getattr(params, name)) for name in (
        "w_char_proj", "b_char_proj", "a_char", "w_tok_word", "w_tok_char",
        "b_tok", "a_tok", "a_sent")}


def stack_documents(docs: list[EncodedDocument]) -> tuple[np.ndarray, np.ndarray]:
    """Pad a batch of encoded documents to a common unit count; the padding
    units are all-PAD and therefore invisible to the encoder."""
    s_max = max(d.n_sentences for d in docs)
    t_w = docs[0].sentences.shape[1]
    t_c = docs[0].chars.shape[2]
    tokens = np.full((len(docs), s_max, t_w), PAD_ID, dtype=np.int32)
    chars = np.full((len(docs), s_max, t_w, t_c), PAD_ID, dtype=np.int32)
    for i, d in enumerate(docs):
        tokens[i, :d.n_sentences] = d.sentences
        chars[i, :d.n_sentences] = d.chars
    return tokens, chars


# public operations ------------------------------------------------------------

def embed(doc: EncodedDocument, tables: EmbeddingTables
          ) -> tuple[np.ndarray, np.ndarray]:
    """Raw embedding lookup: word grid (T_s, T_w, D_w) and char grid
    (T_s, T_w, T_c, D_c). PAD maps to the frozen zero row."""
    for ids, table, name in ((doc.sentences, tables.word, "token"),
                             (doc.chars, tables.char, "char")):
        if ids.min() < 0 or ids.max() >= table.shape[0]:
            raise IndexError(f"{name} id out of range for embedding table")
    return tables.word[doc.sentences], tables.char[doc.chars]


def encode(doc: EncodedDocument, tables: EmbeddingTables,
           params: EncoderParams) -> np.ndarray:
    """Encode a single document to its embedding vector."""
    tokens, chars = stack_documents([doc])
    out = encode_graph(tokens, chars, tables_as_tensors(tables),
                       params_as_tensors(params))
    return out.data[0]


def encode_batch(docs: list[EncodedDocument], tables: EmbeddingTables,
                 params: EncoderParams) -> np.ndarray:
    tokens, chars = stack_documents(docs)
    out = encode_graph(tokens, chars, tables_as_tensors(tables),
                       params_as_tensors(params))
    return out.data


def attention_weights(doc: EncodedDocument, tables: EmbeddingTables,
                      params: EncoderParams):
    """Char/token/sentence attention weights for one document (diagnostics)."""
    tokens, chars = stack_documents([doc])
    _, weights = encode_graph(tokens, chars, tables_as_tensors(tables),
                              params_as_tensors(params), return_attention=True)
    return tuple(w.data[0] for w in weights)


def encoder_backward(doc: EncodedDocument, tables: EmbeddingTables,
                     params: EncoderParams, grad_x: np.ndarray
                     ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Exact gradients of grad_x . x w.r.t. the embedding tables and encoder
    parameters. The PAD table rows are frozen: their gradient is zeroed."""
    tokens, chars = stack_documents([doc])
    table_t = tables_as_tensors(tables, trainable=True)
    param_t = params_as_tensors(params, trainable=True)
    out = encode_graph(tokens, chars, table_t, param_t)
    out.backward(seed=np.asarray(grad_x, dtype=np.float64)[None, :])

    def grad_of(t: ad.Tensor) -> np.ndarray:
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    table_grads = {name: grad_of(t) for name, t in table_t.items()}
    for g in table_grads.values():
        g[PAD_ID] = 0.0
    param_grads = {name: grad_of(t) for name, t in param_t.items()}
    return table_grads, param_grads
