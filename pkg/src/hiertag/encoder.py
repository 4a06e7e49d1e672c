"""Hierarchical memory stack: encode a document into word-, sentence- and
paragraph-level memory matrices.

Word level: token embeddings run through a shared bi-LSTM, one independent run
per sentence, rows concatenated in document order.  Sentence level: element-wise
max-pool over each sentence's word rows gives a sentence vector; a second
bi-LSTM over those vectors (one run across the whole document) gives the
sentence memory.  Paragraph level: element-wise max-pool over each paragraph's
sentence-memory rows; no parameters, so its width equals the sentence width.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import numerics as nm
from .numerics import (
    BiLstmParams,
    ParamSet,
    Tensor,
    bilstm_sequence,
    elementwise_max_pool,
)


class VocabularyError(ValueError):
    """A token id falls outside the embedding table."""


@dataclass
class HierMemory:
    """The (word, sentence, paragraph) memory triple for one document."""

    words: Tensor  # N_w x d_w
    sentences: Tensor  # N_s x d_s
    paragraphs: Tensor  # N_p x d_p

    def as_triple(self):
        return [self.words, self.sentences, self.paragraphs]


@dataclass
class EncoderParams:
    embedding: Tensor  # vocab x d_e
    word: BiLstmParams
    sent: BiLstmParams

    @property
    def vocab_size(self):
        return self.embedding.data.shape[0]

    @property
    def word_width(self):
        return 2 * self.word.hidden_size

    @property
    def sent_width(self):
        return 2 * self.sent.hidden_size

    @staticmethod
    def build(ps: ParamSet, vocab_size, embed_dim, word_hidden, sent_hidden, rng):
        embedding = ps.add(
            "encoder.embed.table", nm.uniform_init((vocab_size, embed_dim), embed_dim, rng)
        )
        word = BiLstmParams(
            fwd=nm.init_cell_params(ps, "encoder.word.fwd", embed_dim, word_hidden, rng),
            bwd=nm.init_cell_params(ps, "encoder.word.bwd", embed_dim, word_hidden, rng),
        )
        sent_in = 2 * word_hidden
        sent = BiLstmParams(
            fwd=nm.init_cell_params(ps, "encoder.sent.fwd", sent_in, sent_hidden, rng),
            bwd=nm.init_cell_params(ps, "encoder.sent.bwd", sent_in, sent_hidden, rng),
        )
        return EncoderParams(embedding, word, sent)

    @staticmethod
    def from_paramset(ps: ParamSet):
        return EncoderParams(
            embedding=ps["encoder.embed.table"],
            word=BiLstmParams(
                nm.cell_params_from(ps, "encoder.word.fwd"),
                nm.cell_params_from(ps, "encoder.word.bwd"),
            ),
            sent=BiLstmParams(
                nm.cell_params_from(ps, "encoder.sent.fwd"),
                nm.cell_params_from(ps, "encoder.sent.bwd"),
            ),
        )


def encode_words(doc, params):
    """Word memory: per-sentence bi-LSTM runs over embeddings, rows in
    document order.  Sentences are independent given the shared weights."""
    vocab = params.vocab_size
    for i, t in enumerate(doc.tokens):
        if t >= vocab:
            raise VocabularyError(f"token id {t} at position {i} >= vocabulary size {vocab}")
    blocks = []
    for s in range(doc.n_sentences):
        a, b = doc.sentence_word_span(s)
        embedded = nm.gather_rows(params.embedding, doc.tokens[a:b])
        xs = [nm.row(embedded, t) for t in range(b - a)]
        blocks.append(bilstm_sequence(xs, params.word))
    return blocks[0] if len(blocks) == 1 else nm.vstack(blocks)


def encode_sentences(word_memory, doc, params):
    """Sentence vectors (max-pool per sentence over word memory) and the
    sentence memory (one document-wide bi-LSTM over those vectors)."""
    if word_memory.data.shape[0] != doc.n_words:
        raise nm.ShapeError("word memory row count != word count")
    vectors = []
    for s in range(doc.n_sentences):
        a, b = doc.sentence_word_span(s)
        pooled, _ = elementwise_max_pool(nm.row_range(word_memory, a, b))
        vectors.append(pooled)
    sentence_vectors = nm.stack_rows(vectors)
    sentence_memory = bilstm_sequence(vectors, params.sent)
    return sentence_vectors, sentence_memory


def encode_paragraphs(sentence_memory, doc):
    """Paragraph memory: element-wise max over each paragraph's sentence rows."""
    if sentence_memory.data.shape[0] != doc.n_sentences:
        raise nm.ShapeError("sentence memory row count != sentence count")
    rows = []
    for p in range(doc.n_paragraphs):
        a, b = doc.paragraph_sentence_span(p)
        pooled, _ = elementwise_max_pool(nm.row_range(sentence_memory, a, b))
        rows.append(pooled)
    return nm.stack_rows(rows)


def encode_document(doc, params):
    """Full memory stack for one document; deterministic for fixed params."""
    word_memory = encode_words(doc, params)
    _, sentence_memory = encode_sentences(word_memory, doc, params)
    paragraph_memory = encode_paragraphs(sentence_memory, doc)
    return HierMemory(word_memory, sentence_memory, paragraph_memory)
