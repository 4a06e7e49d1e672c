"""Greedy-decode metrics: micro token accuracy, exact-boundary span P/R/F1
after event-id normalization, and actions-per-word cost."""

from __future__ import annotations

from dataclasses import dataclass, field

from .controller import run_episode
from .corpus import ValidationError, normalize_event_ids, spans_from_tags


def token_accuracy(pred_tags, gold_tags):
    """Fraction of positions with identical tags after id normalization."""
    if len(pred_tags) != len(gold_tags):
        raise ValidationError("tags", "predicted and gold lengths differ")
    if not gold_tags:
        raise ValidationError("tags", "empty tag lists")
    pred = normalize_event_ids(pred_tags)
    gold = normalize_event_ids(gold_tags)
    return sum(p == g for p, g in zip(pred, gold)) / len(gold)


def _span_triples(tags):
    return {(s.start, s.end, s.event_id) for s in spans_from_tags(normalize_event_ids(tags))}


def span_counts(pred_tags, gold_tags):
    """(correct, predicted, gold) span counts; a prediction is correct only
    when the same (start, end, normalized id) triple appears in gold."""
    if len(pred_tags) != len(gold_tags):
        raise ValidationError("tags", "predicted and gold lengths differ")
    pred = _span_triples(pred_tags)
    gold = _span_triples(gold_tags)
    return len(pred & gold), len(pred), len(gold)


def _prf(correct, n_pred, n_gold):
    p = correct / n_pred if n_pred else 0.0
    r = correct / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def span_prf(pred_tags, gold_tags):
    return _prf(*span_counts(pred_tags, gold_tags))


@dataclass
class DocEval:
    index: int
    n_words: int
    n_actions: int
    token_acc: float
    correct_spans: int
    pred_spans: int
    gold_spans: int

    @property
    def actions_per_word(self):
        return self.n_actions / self.n_words

    def to_dict(self):
        return {
            "index": self.index,
            "n_words": self.n_words,
            "n_actions": self.n_actions,
            "actions_per_word": self.actions_per_word,
            "token_acc": self.token_acc,
            "correct_spans": self.correct_spans,
            "pred_spans": self.pred_spans,
            "gold_spans": self.gold_spans,
        }


@dataclass
class EvalReport:
    token_accuracy: float
    span_precision: float
    span_recall: float
    span_f1: float
    mean_actions_per_word: float
    per_document: list = field(default_factory=list)

    @property
    def n_documents(self):
        return len(self.per_document)

    def to_dict(self):
        return {
            "n_documents": self.n_documents,
            "token_accuracy": self.token_accuracy,
            "span_precision": self.span_precision,
            "span_recall": self.span_recall,
            "span_f1": self.span_f1,
            "mean_actions_per_word": self.mean_actions_per_word,
            "per_document": [row.to_dict() for row in self.per_document],
        }


def evaluate(corpus, model):
    """Greedy episode per labelled document, metrics pooled over the corpus.

    Token accuracy is micro-averaged over words; span precision/recall pool
    the per-document span counts; actions-per-word is averaged per document.
    """
    if not corpus:
        raise ValidationError("corpus", "cannot evaluate an empty corpus")
    rows = []
    word_hits = 0
    word_total = 0
    correct = n_pred = n_gold = 0
    for i, doc in enumerate(corpus):
        if doc.gold_tags is None:
            raise ValidationError("gold_tags", f"document {i} has no gold tags")
        trace = run_episode(
            doc, model.encoder, model.controller, mode="greedy", level_mask=model.level_mask
        )
        acc = token_accuracy(trace.predicted_tags, doc.gold_tags)
        c, p, g = span_counts(trace.predicted_tags, doc.gold_tags)
        rows.append(DocEval(i, doc.n_words, trace.n_actions, acc, c, p, g))
        word_hits += acc * doc.n_words
        word_total += doc.n_words
        correct += c
        n_pred += p
        n_gold += g
    precision, recall, f1 = _prf(correct, n_pred, n_gold)
    apw = sum(r.actions_per_word for r in rows) / len(rows)
    return EvalReport(word_hits / word_total, precision, recall, f1, apw, rows)


def format_report(report):
    """Plain-text rendering of the pooled metrics."""
    lines = [
        f"documents            {report.n_documents}",
        f"token accuracy       {report.token_accuracy:.4f}",
        f"span precision       {report.span_precision:.4f}",
        f"span recall          {report.span_recall:.4f}",
        f"span f1              {report.span_f1:.4f}",
        f"actions per word     {report.mean_actions_per_word:.4f}",
    ]
    return "\n".join(lines)
