"""Two training signals: supervised teacher forcing over the set of correct
actions (sampled multinomially, so the episode always stays on the gold path)
and REINFORCE fine-tuning with a reward that trades token accuracy against
the number of actions spent per word.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .controller import (
    ACTIONS,
    CURRENT_EVENT,
    NEW_EVENT,
    NON_EVENT,
    PARAGRAPH,
    SENTENCE,
    WORD,
    Location,
    ModeError,
    advance_location,
    controller_step,
    expand_action,
    initial_state,
    masked_softmax,
    read_memory,
    run_episode,
    valid_action_mask,
)
from .corpus import ValidationError
from .encoder import encode_document
from .evaluation import evaluate, token_accuracy
from .model import build_model
from .numerics import GradTape, backward


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    sup_epochs: int = 4
    rl_epochs: int = 2
    learning_rate: float = 0.05
    batch_size: int = 4
    reward_beta: float = 0.1
    baseline_alpha: float = 0.9
    seed: int = 0
    clip_norm: float = 5.0
    metrics_eval_docs: int = 100  # per-epoch greedy-eval subset cap; 0 skips it

    def validate(self):
        if self.sup_epochs < 0 or self.rl_epochs < 0:
            raise TrainError("epoch counts must be non-negative")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.clip_norm <= 0:
            raise TrainError("learning rate, batch size and clip norm must be positive")
        if not 0.0 <= self.reward_beta <= 1.0:
            raise TrainError("reward_beta must lie in [0, 1]")
        if not 0.0 < self.baseline_alpha < 1.0:
            raise TrainError("baseline_alpha must lie in (0, 1)")
        if self.metrics_eval_docs < 0:
            raise TrainError("metrics_eval_docs must be non-negative")
        return self


def correct_action_set(loc, doc, mark):
    """Unmasked actions whose whole emitted segment matches the gold tags.

    ``mark`` must be the event counter reached by following gold so far.  The
    result is ordered by action index and is never empty for representable
    gold (some word-level action always matches).
    """
    gold = doc.gold_tags
    if gold is None:
        raise ValidationError("gold_tags", "correct actions need a labelled document")
    out = []
    spans = {
        WORD: (loc.w, loc.w + 1),
        SENTENCE: (loc.w, doc.sentence_word_span(loc.s)[1]),
        PARAGRAPH: (loc.w, doc.paragraph_word_span(loc.p)[1]),
    }
    for action in ACTIONS:
        a, b = spans[action.level]
        segment = gold[a:b]
        first = segment[0]
        if any(t != first for t in segment):
            continue
        if action.kind == NON_EVENT and first == -1:
            out.append(action)
        elif action.kind == CURRENT_EVENT and mark > 0 and first == mark:
            out.append(action)
        elif action.kind == NEW_EVENT and first == mark + 1:
            out.append(action)
    return out


def sample_teacher_action(actions, rng):
    """Uniform draw over the correct-action set."""
    if not actions:
        raise TrainError("empty correct-action set (gold not representable?)")
    return actions[int(rng.integers(len(actions)))]


def _teacher_episode(doc, model, rng):
    """Teacher-forced episode; returns (summed NLL loss, emitted tags, steps).

    At every step the target is sampled uniformly from the correct-action set
    and then followed, so the emitted tags equal gold throughout.
    """
    mem = encode_document(doc, model.encoder)
    state = initial_state(model.controller)
    loc = Location.start()
    mark = 0
    level_mask = model.level_mask
    losses = []
    tags = []
    while not loc.is_terminal(doc):
        read = read_memory(mem, loc)
        state, scores = controller_step(state, read, model.controller)
        mask = valid_action_mask(loc, mark)
        if level_mask is not None:
            mask &= level_mask
        correct = correct_action_set(loc, doc, mark)
        if level_mask is not None:
            correct = [a for a in correct if level_mask[a.index]]
        target = sample_teacher_action(correct, rng)
        probs = masked_softmax(scores, mask)
        losses.append(nm.neg(nm.log(nm.pick(probs, target.index))))
        segment, mark = expand_action(target, loc, doc, mark)
        tags.extend(segment)
        loc = advance_location(loc, target, doc)
    return nm.add_n(losses), tags, len(losses)


def supervised_episode_loss(doc, model, rng):
    """Summed negative log-likelihood of sampled correct actions along the
    teacher-forced path (recorded on the active tape, if any)."""
    loss, _, _ = _teacher_episode(doc, model, rng)
    return loss


def episode_reward(trace, doc, beta=0.1):
    """Token accuracy minus ``beta`` times the actions-per-word ratio."""
    if doc.gold_tags is None:
        raise ValidationError("gold_tags", "reward needs a labelled document")
    acc = token_accuracy(trace.predicted_tags, doc.gold_tags)
    return acc - beta * (trace.n_actions / doc.n_words)


class RewardBaseline:
    """Exponential moving average of episode rewards, seeded by the first one."""

    def __init__(self, alpha=0.9):
        self.alpha = alpha
        self.value = None

    def advantage(self, reward):
        return 0.0 if self.value is None else reward - self.value

    def update(self, reward):
        if self.value is None:
            self.value = reward
        else:
            self.value = self.alpha * self.value + (1.0 - self.alpha) * reward
        return self.value


def reinforce_gradient(trace, reward, baseline):
    """Accumulate -(reward - baseline) * sum_t grad log pi(a_t) into the
    parameter gradients of the trace's tape, then update the baseline.

    Returns the scalar surrogate loss value (for logging).
    """
    if trace.mode != "sample" or trace.log_probs is None or trace.tape is None:
        raise ModeError("policy gradient needs a sample-mode trace with a retained tape")
    advantage = baseline.advantage(reward)
    with trace.tape:
        surrogate = nm.scale(nm.add_n(trace.log_probs), -advantage)
    backward(trace.tape, surrogate)
    baseline.update(reward)
    return float(surrogate.data)


@dataclass
class EpochMetrics:
    """One metrics-log row (written out as CSV by the CLI)."""

    epoch: int
    phase: str
    mean_loss: float
    mean_reward: float
    token_acc: float
    span_f1: float
    actions_per_word: float


METRICS_COLUMNS = (
    "epoch",
    "phase",
    "mean_loss",
    "mean_reward",
    "token_acc",
    "span_f1",
    "actions_per_word",
)


def _epoch_eval(corpus, model, config):
    if config.metrics_eval_docs == 0:
        return float("nan"), float("nan"), float("nan")
    subset = corpus[: min(len(corpus), config.metrics_eval_docs)]
    report = evaluate(subset, model)
    return report.token_accuracy, report.span_f1, report.mean_actions_per_word


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i : i + size]


def train(corpus, config, dims=None, init_model=None):
    """Supervised phase then policy-gradient phase; returns (model, metrics).

    ``init_model`` continues training from existing parameters (e.g. applying
    the RL phase to a supervised checkpoint); otherwise parameters are built
    fresh from ``dims`` with ``config.seed``.  Deterministic end to end:
    document order, teacher sampling and policy sampling each draw from their
    own stream derived from the seed.
    """
    config.validate()
    if not corpus:
        raise TrainError("empty corpus")
    for i, doc in enumerate(corpus):
        if doc.gold_tags is None:
            raise TrainError(f"document {i} has no gold tags")
    if init_model is not None:
        model = init_model.copy()
    elif dims is not None:
        model = build_model(dims, config.seed)
    else:
        raise TrainError("either dims or init_model is required")

    order_rng, teacher_rng, rl_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)
    )
    metrics = []

    for epoch in range(1, config.sup_epochs + 1):
        order = order_rng.permutation(len(corpus))
        losses = []
        rewards = []
        for batch in _batches(order, config.batch_size):
            model.params.zero_grads()
            for di in batch:
                doc = corpus[di]
                with GradTape() as tape:
                    loss, _, n_steps = _teacher_episode(doc, model, teacher_rng)
                backward(tape, loss)
                losses.append(float(loss.data))
                # teacher forcing tags exactly match gold, so accuracy is 1
                rewards.append(1.0 - config.reward_beta * n_steps / doc.n_words)
            model.params.sgd_step(
                config.learning_rate, config.clip_norm, grad_scale=1.0 / len(batch)
            )
        acc, f1, apw = _epoch_eval(corpus, model, config)
        metrics.append(
            EpochMetrics(epoch, "supervised", _mean(losses), _mean(rewards), acc, f1, apw)
        )

    baseline = RewardBaseline(config.baseline_alpha)
    for epoch in range(1, config.rl_epochs + 1):
        order = order_rng.permutation(len(corpus))
        surrogates = []
        rewards = []
        for batch in _batches(order, config.batch_size):
            model.params.zero_grads()
            for di in batch:
                doc = corpus[di]
                with GradTape() as tape:
                    trace = run_episode(
                        doc,
                        model.encoder,
                        model.controller,
                        mode="sample",
                        rng=rl_rng,
                        level_mask=model.level_mask,
                    )
                reward = episode_reward(trace, doc, config.reward_beta)
                surrogates.append(reinforce_gradient(trace, reward, baseline))
                rewards.append(reward)
            model.params.sgd_step(
                config.learning_rate, config.clip_norm, grad_scale=1.0 / len(batch)
            )
        acc, f1, apw = _epoch_eval(corpus, model, config)
        metrics.append(EpochMetrics(epoch, "rl", _mean(surrogates), _mean(rewards), acc, f1, apw))

    return model, metrics


def _mean(values):
    return float(np.mean(values)) if values else 0.0
