"""Document data model, gold-tag validation, the synthetic corpus generator,
and corpus/vocabulary file I/O.

A document is a flat token-id sequence plus two boundary index lists: word
indexes where sentences start and sentence indexes where paragraphs start.
Gold tags label each word with -1 (non-event) or a positive event id; ids
must first appear in the order 1,2,3,... and may never come back after a
larger id has appeared, which is exactly the set of labelings the controller's
action grammar can emit.

Corpus files are UTF-8 JSON Lines with fields ``tokens``, ``sentence_starts``,
``paragraph_starts`` and ``gold_tags`` (array or null), one document per line.
The vocabulary file maps token id i to the surface form on line i.
"""

from __future__ import annotations

import json
import os
import tempfile
from bisect import bisect_right
from dataclasses import dataclass, replace

import numpy as np


class ValidationError(ValueError):
    """A record violates the document invariants; names the offending field."""

    def __init__(self, field_name, message):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


class ConfigError(ValueError):
    """Generator configuration is unsatisfiable."""


@dataclass(frozen=True)
class Document:
    """Tokens plus sentence/paragraph boundary indexes and optional gold tags.

    Treat instances as immutable; use :func:`dataclasses.replace` to derive
    variants (e.g. attaching predicted tags).
    """

    tokens: list
    sentence_starts: list
    paragraph_starts: list
    gold_tags: list = None

    @property
    def n_words(self):
        return len(self.tokens)

    @property
    def n_sentences(self):
        return len(self.sentence_starts)

    @property
    def n_paragraphs(self):
        return len(self.paragraph_starts)

    def sentence_index(self, w):
        """Index of the sentence containing word w."""
        return bisect_right(self.sentence_starts, w) - 1

    def paragraph_index(self, s):
        """Index of the paragraph containing sentence s."""
        return bisect_right(self.paragraph_starts, s) - 1

    def sentence_word_span(self, s):
        """Half-open word range [a, b) of sentence s."""
        a = self.sentence_starts[s]
        b = self.sentence_starts[s + 1] if s + 1 < self.n_sentences else self.n_words
        return a, b

    def paragraph_sentence_span(self, p):
        """Half-open sentence range [a, b) of paragraph p."""
        a = self.paragraph_starts[p]
        b = self.paragraph_starts[p + 1] if p + 1 < self.n_paragraphs else self.n_sentences
        return a, b

    def paragraph_word_span(self, p):
        """Half-open word range [a, b) of paragraph p."""
        sa, sb = self.paragraph_sentence_span(p)
        return self.sentence_starts[sa], self.sentence_word_span(sb - 1)[1]


def validate_tags(tags, n_words, field_name="gold_tags"):
    """Check tag values and action-grammar representability."""
    if len(tags) != n_words:
        raise ValidationError(field_name, f"length {len(tags)} != token count {n_words}")
    top = 0
    for i, t in enumerate(tags):
        if t == -1:
            continue
        if t < 1:
            raise ValidationError(field_name, f"entry {i} is {t}; must be -1 or positive")
        if t == top + 1:
            top += 1
        elif t != top:
            raise ValidationError(
                field_name,
                f"non-representable tags: id {t} at position {i} after max id {top}",
            )


def validate_document(doc):
    """Raise ValidationError if any Document invariant fails; return doc."""
    n_w = doc.n_words
    if n_w == 0:
        raise ValidationError("tokens", "document has no tokens")
    for i, t in enumerate(doc.tokens):
        if not isinstance(t, int) or t < 0:
            raise ValidationError("tokens", f"entry {i} is {t!r}; must be a non-negative int")
    ss = doc.sentence_starts
    if not ss or ss[0] != 0:
        raise ValidationError("sentence_starts", "must begin with 0")
    for a, b in zip(ss, ss[1:]):
        if b <= a:
            raise ValidationError("sentence_starts", f"not strictly increasing at {a} -> {b}")
    if ss[-1] >= n_w:
        raise ValidationError("sentence_starts", f"start {ss[-1]} out of range for {n_w} tokens")
    ps = doc.paragraph_starts
    if not ps or ps[0] != 0:
        raise ValidationError("paragraph_starts", "must begin with 0")
    for a, b in zip(ps, ps[1:]):
        if b <= a:
            raise ValidationError("paragraph_starts", f"not strictly increasing at {a} -> {b}")
    if ps[-1] >= len(ss):
        raise ValidationError(
            "paragraph_starts", f"start {ps[-1]} out of range for {len(ss)} sentences"
        )
    if doc.gold_tags is not None:
        validate_tags(doc.gold_tags, n_w)
    return doc


def parse_record(record):
    """Build a validated Document from a decoded JSON record."""
    if not isinstance(record, dict):
        raise ValidationError("record", "not a JSON object")
    for key in ("tokens", "sentence_starts", "paragraph_starts"):
        if key not in record:
            raise ValidationError(key, "missing field")
        if not isinstance(record[key], list):
            raise ValidationError(key, "must be an array")
    tags = record.get("gold_tags")
    if tags is not None and not isinstance(tags, list):
        raise ValidationError("gold_tags", "must be an array or null")
    doc = Document(
        tokens=[int(t) for t in record["tokens"]],
        sentence_starts=[int(i) for i in record["sentence_starts"]],
        paragraph_starts=[int(i) for i in record["paragraph_starts"]],
        gold_tags=None if tags is None else [int(t) for t in tags],
    )
    return validate_document(doc)


def document_to_record(doc):
    return {
        "tokens": list(doc.tokens),
        "sentence_starts": list(doc.sentence_starts),
        "paragraph_starts": list(doc.paragraph_starts),
        "gold_tags": None if doc.gold_tags is None else list(doc.gold_tags),
    }


# ---------------------------------------------------------------------------
# tag utilities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Span:
    """One event occurrence: inclusive word range plus its event id."""

    start: int
    end: int
    event_id: int


def spans_from_tags(tags):
    """Maximal runs of one positive id, ordered by start; -1 contributes nothing."""
    spans = []
    start = None
    current = None
    for i, t in enumerate(tags):
        if t == current and t != -1:
            continue
        if current is not None and current != -1:
            spans.append(Span(start, i - 1, current))
        start, current = i, t
    if current is not None and current != -1:
        spans.append(Span(start, len(tags) - 1, current))
    return spans


def normalize_event_ids(tags):
    """Rename positive ids to 1,2,3,... in first-appearance order; idempotent."""
    mapping = {}
    out = []
    for t in tags:
        if t == -1:
            out.append(-1)
        else:
            if t not in mapping:
                mapping[t] = len(mapping) + 1
            out.append(mapping[t])
    return out


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenConfig:
    """Synthetic corpus shape.  Token ids are laid out as three bands:
    [0, trigger_pool) onset triggers, then shared_pool ids usable by both
    events and fillers, then filler_pool filler-only ids.

    With shared_pool = 0 every event word is an onset-band token and events
    are arbitrary sub-spans of one sentence (at most one per sentence), so
    membership is decidable from the word alone.  With shared_pool > 0 each
    event starts at an onset-band token and runs to the end of its sentence
    or of its whole paragraph — the onset id's sub-band (lower/upper half)
    says which — while the remaining event words come from the shared band
    and are lexically indistinguishable from fillers: membership and extent
    are then properties of document structure, not of the word.  Tags are
    always representable by the action grammar.
    """

    docs: int = 100
    vocab_size: int = 160
    paragraphs: tuple = (3, 4)
    sentences_per_paragraph: tuple = (4, 6)
    words_per_sentence: tuple = (9, 16)
    events_per_doc: tuple = (1, 8)
    trigger_pool: int = 16
    shared_pool: int = 0
    filler_pool: int = 120
    seed: int = 0

    def validate(self):
        for name in ("paragraphs", "sentences_per_paragraph", "words_per_sentence"):
            lo, hi = getattr(self, name)
            if not (1 <= lo <= hi):
                raise ConfigError(f"{name} range ({lo}, {hi}) is empty or non-positive")
        lo, hi = self.events_per_doc
        if not (0 <= lo <= hi <= 74):
            raise ConfigError(f"events_per_doc range ({lo}, {hi}) must lie within [0, 74]")
        if self.docs < 0:
            raise ConfigError("docs must be non-negative")
        if self.trigger_pool < 1 or self.filler_pool < 1:
            raise ConfigError("token pools must be non-empty")
        if self.shared_pool < 0:
            raise ConfigError("shared_pool must be non-negative")
        if self.shared_pool > 0 and self.trigger_pool < 2:
            raise ConfigError("structural mode needs both onset sub-bands (trigger_pool >= 2)")
        if self.trigger_pool + self.shared_pool + self.filler_pool > self.vocab_size:
            raise ConfigError(
                f"vocabulary size {self.vocab_size} smaller than the token pools "
                f"({self.trigger_pool} + {self.shared_pool} + {self.filler_pool})"
            )
        min_sentences = self.paragraphs[0] * self.sentences_per_paragraph[0]
        if hi > min_sentences:
            raise ConfigError(
                f"events_per_doc max {hi} exceeds the minimum sentence count "
                f"{min_sentences} (one event per sentence)"
            )
        return self


def _rand_range(rng, bounds):
    lo, hi = bounds
    return int(rng.integers(lo, hi + 1))


def _structural_runs(rng, n_events, sentence_starts, sentence_lens, paragraph_starts, n_words):
    """Place shared-pool events: each a fair coin between sentence scale
    (onset to sentence end) and paragraph scale (onset to paragraph end).

    Paragraph placements must leave one free sentence per still-unplaced
    event, so every drawn event gets placed (n_events <= sentence count is
    checked by GenConfig.validate); they fall back to sentence scale when no
    paragraph has room.  Returns (start, length, paragraph_scale) triples.
    """
    n_sentences = len(sentence_starts)
    n_paragraphs = len(paragraph_starts)
    free = [True] * n_sentences
    n_free = n_sentences
    runs = []
    for k in range(n_events):
        remaining = n_events - k - 1
        chosen = None
        para_scale = False
        if rng.integers(0, 2):
            cands = []
            for p in range(n_paragraphs):
                a = paragraph_starts[p]
                b = paragraph_starts[p + 1] if p + 1 < n_paragraphs else n_sentences
                s = b - 1
                while s >= a and free[s]:
                    s -= 1
                for s0 in range(s + 1, b):  # onsets whose whole tail is free
                    if n_free - (b - s0) >= remaining:
                        cands.append((s0, b))
            if cands:
                chosen = cands[int(rng.integers(0, len(cands)))]
                para_scale = True
        if chosen is None:
            frees = [s for s in range(n_sentences) if free[s]]
            s0 = frees[int(rng.integers(0, len(frees)))]
            chosen = (s0, s0 + 1)
        s0, s_end = chosen
        for s in range(s0, s_end):
            free[s] = False
        n_free -= s_end - s0
        offset = int(rng.integers(0, sentence_lens[s0]))
        start = sentence_starts[s0] + offset
        end_word = sentence_starts[s_end] if s_end < n_sentences else n_words
        runs.append((start, end_word - start, para_scale))
    return runs


def generate_document(config, rng):
    """One synthetic document drawn from ``rng``."""
    n_paragraphs = _rand_range(rng, config.paragraphs)
    paragraph_starts = []
    sentence_starts = []
    sentence_lens = []
    for _ in range(n_paragraphs):
        paragraph_starts.append(len(sentence_starts))
        for _ in range(_rand_range(rng, config.sentences_per_paragraph)):
            sentence_starts.append(sum(sentence_lens))
            sentence_lens.append(_rand_range(rng, config.words_per_sentence))
    n_words = sum(sentence_lens)
    n_sentences = len(sentence_starts)

    n_events = _rand_range(rng, config.events_per_doc)
    if config.shared_pool > 0:
        event_runs = _structural_runs(
            rng, n_events, sentence_starts, sentence_lens, paragraph_starts, n_words
        )
    else:
        event_sentences = sorted(rng.choice(n_sentences, size=n_events, replace=False).tolist())
        event_runs = []
        for s in event_sentences:
            slen = sentence_lens[s]
            length = int(rng.integers(1, slen + 1))
            offset = int(rng.integers(0, slen - length + 1))
            event_runs.append((sentence_starts[s] + offset, length, False))
    gold = [-1] * n_words
    for eid, (start, length, _) in enumerate(sorted(event_runs), start=1):
        for w in range(start, start + length):
            gold[w] = eid

    trig_hi = config.trigger_pool
    shared_hi = trig_hi + config.shared_pool
    tokens = rng.integers(trig_hi, shared_hi + config.filler_pool, size=n_words).tolist()
    for start, length, para_scale in event_runs:
        if config.shared_pool > 0:
            half = trig_hi // 2
            onset_lo, onset_hi = (half, trig_hi) if para_scale else (0, half)
            tokens[start] = int(rng.integers(onset_lo, onset_hi))
            for w in range(start + 1, start + length):
                tokens[w] = int(rng.integers(trig_hi, shared_hi))
        else:
            for w in range(start, start + length):
                tokens[w] = int(rng.integers(0, trig_hi))

    return Document(
        tokens=[int(t) for t in tokens],
        sentence_starts=sentence_starts,
        paragraph_starts=paragraph_starts,
        gold_tags=gold,
    )


def generate_corpus(config):
    """Generate ``config.docs`` documents, byte-deterministic for a given seed.

    Each document draws from its own child seed, so generation order (or a
    parallel map) cannot change the output.
    """
    config.validate()
    seeds = np.random.SeedSequence(config.seed).spawn(config.docs)
    return [generate_document(config, np.random.default_rng(s)) for s in seeds]


def token_surface(token_id, trigger_pool):
    """Readable surface form for a token id (triggers vs fillers)."""
    if token_id < trigger_pool:
        return f"ev{token_id:03d}"
    return f"w{token_id:04d}"


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def atomic_write_text(path, text):
    """Write via a temp file + rename so failures leave no partial output."""
    _atomic_write(path, text, "w", encoding="utf-8")


def atomic_write_bytes(path, data):
    _atomic_write(path, data, "wb")


def _atomic_write(path, payload, mode, encoding=None):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, mode, encoding=encoding) as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def corpus_to_jsonl(docs):
    lines = [
        json.dumps(document_to_record(d), separators=(",", ":"), ensure_ascii=False)
        for d in docs
    ]
    return "".join(line + "\n" for line in lines)


def write_corpus(docs, path):
    atomic_write_text(path, corpus_to_jsonl(docs))


def read_corpus(path):
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError("record", f"line {lineno}: invalid JSON ({exc})")
            try:
                docs.append(parse_record(record))
            except ValidationError as exc:
                raise ValidationError(exc.field_name, f"line {lineno}: {exc}")
    return docs


def write_vocab(path, vocab_size, trigger_pool):
    atomic_write_text(
        path, "".join(token_surface(i, trigger_pool) + "\n" for i in range(vocab_size))
    )


def read_vocab(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def strip_tags(doc):
    return replace(doc, gold_tags=None)


def with_tags(doc, tags):
    return replace(doc, gold_tags=list(tags))
