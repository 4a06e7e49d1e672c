"""Decision loop over the hierarchical memory stack: read one row per level at
the current location, score nine actions, expand the chosen action into a tag
segment, advance the read-heads, stop at end of text.

The nine actions are the cross product of level (word, sentence, paragraph)
and kind (non-event, current-event, new-event), in that order.  A word action
covers one word; sentence/paragraph actions cover the words remaining in the
current unit, so an action taken mid-unit tags the rest of it.  ``mark`` is
the running event counter: current-event tags with it, new-event increments
it first.  Current-event actions are masked until the first event exists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .encoder import encode_document
from .numerics import (
    CellParams,
    NoValidActionError,
    ParamSet,
    Tensor,
    lstm_cell_forward,
    masked_softmax,
    nine_head_scores,
)

WORD, SENTENCE, PARAGRAPH = "word", "sentence", "paragraph"
NON_EVENT, CURRENT_EVENT, NEW_EVENT = "non-event", "current-event", "new-event"

LEVELS = (WORD, SENTENCE, PARAGRAPH)
KINDS = (NON_EVENT, CURRENT_EVENT, NEW_EVENT)


class EndOfTextError(IndexError):
    """Read requested at or past the end of the document."""


class InvalidActionError(ValueError):
    """An action was applied while masked."""


class ModeError(RuntimeError):
    """A trace recorded in the wrong mode for the requested use."""


@dataclass(frozen=True)
class Action:
    level: str
    kind: str

    @property
    def index(self):
        return LEVELS.index(self.level) * 3 + KINDS.index(self.kind)

    def __str__(self):
        return f"{self.level}-{self.kind}"


ACTIONS = tuple(Action(lv, kd) for lv in LEVELS for kd in KINDS)
N_ACTIONS = len(ACTIONS)
WORD_LEVEL_MASK = np.array([a.level == WORD for a in ACTIONS])


@dataclass(frozen=True)
class Location:
    """Synchronized read-heads: word index plus its containing sentence and
    paragraph.  w == n_words marks the terminal location."""

    w: int
    s: int
    p: int

    @staticmethod
    def start():
        return Location(0, 0, 0)

    @staticmethod
    def at_word(doc, w):
        if w >= doc.n_words:
            return Location(doc.n_words, doc.n_sentences, doc.n_paragraphs)
        s = doc.sentence_index(w)
        return Location(w, s, doc.paragraph_index(s))

    def is_terminal(self, doc):
        return self.w >= doc.n_words


@dataclass
class ControllerParams:
    """Controller LSTM cell plus the bank of nine scoring heads.

    The heads are stored fused: head k owns columns [k*hh, (k+1)*hh) of
    ``head_W1``/``head_b1``/``head_W2`` and entry k of ``head_b2``, in the
    fixed action order of ``ACTIONS``.
    """

    cell: CellParams
    head_W1: Tensor
    head_b1: Tensor
    head_W2: Tensor
    head_b2: Tensor

    @property
    def hidden_size(self):
        return self.cell.hidden_size

    @property
    def head_hidden(self):
        return self.head_W1.data.shape[1] // N_ACTIONS

    @staticmethod
    def build(ps: ParamSet, read_size, hidden_size, head_hidden, rng):
        cell = nm.init_cell_params(ps, "controller.cell", read_size, hidden_size, rng)
        total = N_ACTIONS * head_hidden
        return ControllerParams(
            cell=cell,
            head_W1=ps.add(
                "controller.heads.W1", nm.uniform_init((hidden_size, total), hidden_size, rng)
            ),
            head_b1=ps.add("controller.heads.b1", nm.uniform_init(total, hidden_size, rng)),
            head_W2=ps.add("controller.heads.W2", nm.uniform_init(total, head_hidden, rng)),
            head_b2=ps.add("controller.heads.b2", nm.uniform_init(N_ACTIONS, head_hidden, rng)),
        )

    @staticmethod
    def from_paramset(ps: ParamSet):
        return ControllerParams(
            cell=nm.cell_params_from(ps, "controller.cell"),
            head_W1=ps["controller.heads.W1"],
            head_b1=ps["controller.heads.b1"],
            head_W2=ps["controller.heads.W2"],
            head_b2=ps["controller.heads.b2"],
        )


def read_memory(mem, loc):
    """Concatenate the word/sentence/paragraph memory rows at the location."""
    if loc.w >= mem.words.data.shape[0]:
        raise EndOfTextError(f"read at word {loc.w} of {mem.words.data.shape[0]}")
    return nm.concat(
        [nm.row(mem.words, loc.w), nm.row(mem.sentences, loc.s), nm.row(mem.paragraphs, loc.p)]
    )


def controller_step(state, read, params):
    """Advance the controller LSTM on one read vector and score all actions."""
    h, c = state
    h_next, c_next = lstm_cell_forward(read, h, c, params.cell)
    scores = nine_head_scores(
        h_next, params.head_W1, params.head_b1, params.head_W2, params.head_b2
    )
    return (h_next, c_next), scores


def initial_state(params):
    hs = params.hidden_size
    return nm.zeros(hs), nm.zeros(hs)


def valid_action_mask(loc, mark):
    """All nine actions except the current-event ones while no event exists."""
    mask = np.ones(N_ACTIONS, dtype=bool)
    if mark == 0:
        for i, a in enumerate(ACTIONS):
            if a.kind == CURRENT_EVENT:
                mask[i] = False
    return mask


def _segment_end(action, loc, doc):
    if action.level == WORD:
        return loc.w + 1
    if action.level == SENTENCE:
        return doc.sentence_word_span(loc.s)[1]
    return doc.paragraph_word_span(loc.p)[1]


def expand_action(action, loc, doc, mark):
    """Tag segment an action emits at the location, plus the updated mark.

    Word actions cover one word; sentence/paragraph actions cover the words
    remaining in the current sentence/paragraph.
    """
    if action.kind == CURRENT_EVENT and mark == 0:
        raise InvalidActionError("current-event action before any event exists")
    if loc.w >= doc.n_words:
        raise EndOfTextError("expand past end of text")
    length = _segment_end(action, loc, doc) - loc.w
    if action.kind == NON_EVENT:
        return [-1] * length, mark
    if action.kind == CURRENT_EVENT:
        return [mark] * length, mark
    return [mark + 1] * length, mark + 1


def advance_location(loc, action, doc):
    """Next word for word actions; first word of the next unit otherwise."""
    return Location.at_word(doc, _segment_end(action, loc, doc))


def masked_argmax(scores, mask):
    """Index of the best unmasked score; ties break to the lowest index."""
    masked = np.where(mask, scores, -np.inf)
    return int(np.argmax(masked))


def masked_softmax_values(scores, mask):
    """Plain-array masked softmax (no tape) for sampling decisions."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise NoValidActionError("all actions masked")
    shifted = scores - scores[m].max()
    e = np.where(m, np.exp(shifted), 0.0)
    return e / e.sum()


def select_action(scores, mask, mode="greedy", rng=None):
    """Greedy: unmasked argmax.  Sample: draw from the masked softmax."""
    values = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=float)
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise NoValidActionError("all actions masked")
    if mode == "greedy":
        return ACTIONS[masked_argmax(values, m)]
    if mode == "sample":
        probs = masked_softmax_values(values, m)
        return ACTIONS[int(rng.choice(N_ACTIONS, p=probs))]
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class TraceStep:
    step: int
    location: Location
    scores: list
    mask: list
    action: Action
    segment_len: int
    mark_before: int
    mark_after: int


@dataclass
class Trace:
    """Complete episode record: per-step decisions plus the final tags.

    ``log_probs`` (tape tensors of the chosen actions' log-probabilities) and
    ``tape`` are only populated when the episode ran in sample mode under an
    active gradient tape; they power the policy-gradient update.
    """

    steps: list
    predicted_tags: list
    mode: str
    log_probs: list = None
    tape: object = None

    @property
    def n_actions(self):
        return len(self.steps)


def run_episode(doc, encoder_params, controller_params, mode="greedy", rng=None, level_mask=None):
    """Encode the document, then loop read -> step -> select -> expand ->
    advance from the start location until the read-head passes the last word.

    ``level_mask`` further restricts the valid actions (the word-actions-only
    ablation passes ``WORD_LEVEL_MASK``).  When a gradient tape is active and
    mode is "sample", the trace retains per-step log-probabilities for the
    policy-gradient update.
    """
    mem = encode_document(doc, encoder_params)
    state = initial_state(controller_params)
    loc = Location.start()
    mark = 0
    steps = []
    tags = []
    log_probs = []
    recording = nm.active_tape() is not None and mode == "sample"
    while not loc.is_terminal(doc):
        read = read_memory(mem, loc)
        state, scores = controller_step(state, read, controller_params)
        mask = valid_action_mask(loc, mark)
        if level_mask is not None:
            mask &= level_mask
        if mode == "greedy":
            idx = masked_argmax(scores.data, mask)
        else:
            probs = masked_softmax(scores, mask)
            idx = int(rng.choice(N_ACTIONS, p=probs.data))
            if recording:
                log_probs.append(nm.log(nm.pick(probs, idx)))
        action = ACTIONS[idx]
        segment, new_mark = expand_action(action, loc, doc, mark)
        steps.append(
            TraceStep(
                step=len(steps),
                location=loc,
                scores=[float(v) for v in scores.data],
                mask=[bool(b) for b in mask],
                action=action,
                segment_len=len(segment),
                mark_before=mark,
                mark_after=new_mark,
            )
        )
        tags.extend(segment)
        loc = advance_location(loc, action, doc)
        mark = new_mark
    return Trace(
        steps=steps,
        predicted_tags=tags,
        mode=mode,
        log_probs=log_probs if recording else None,
        tape=nm.active_tape() if recording else None,
    )


def replay_actions(doc, actions, start_mark=0):
    """Drive expand/advance with a fixed action sequence from the start.

    Returns (tags, final mark).  Used for forced-policy checks and for
    verifying that a trace's recorded actions reproduce its tag sequence.
    """
    loc = Location.start()
    mark = start_mark
    tags = []
    for action in actions:
        if loc.is_terminal(doc):
            raise EndOfTextError("action sequence runs past end of text")
        segment, mark = expand_action(action, loc, doc, mark)
        tags.extend(segment)
        loc = advance_location(loc, action, doc)
    return tags, mark


# ---------------------------------------------------------------------------
# trace export
# ---------------------------------------------------------------------------


def trace_to_jsonl(trace):
    """One step per line, final line carries the predicted tag array."""
    lines = []
    for st in trace.steps:
        lines.append(
            json.dumps(
                {
                    "step": st.step,
                    "location": [st.location.w, st.location.s, st.location.p],
                    "scores": st.scores,
                    "mask": st.mask,
                    "action_level": st.action.level,
                    "action_kind": st.action.kind,
                    "segment_len": st.segment_len,
                    "mark": st.mark_after,
                },
                separators=(",", ":"),
            )
        )
    lines.append(json.dumps({"predicted_tags": trace.predicted_tags}, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)
