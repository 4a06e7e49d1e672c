"""Shared helpers: document construction, finite-difference gradient checks,
and scalar reference implementations used as oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from hiertag.corpus import Document
from hiertag.numerics import GradTape, backward


def make_doc(sentence_lens, paragraph_starts, tokens=None, gold=None, vocab=12, seed=0):
    """Document with explicit sentence lengths; tokens default to a seeded draw."""
    starts = []
    total = 0
    for n in sentence_lens:
        starts.append(total)
        total += n
    if tokens is None:
        tokens = np.random.default_rng(seed).integers(0, vocab, size=total).tolist()
    return Document(
        tokens=list(tokens),
        sentence_starts=starts,
        paragraph_starts=list(paragraph_starts),
        gold_tags=list(gold) if gold is not None else None,
    )


def fd_gradient_check(params, loss_fn, h=1e-3, rtol=1e-4, atol=1e-6, names=None):
    """Compare tape gradients of ``loss_fn()`` against central differences.

    Entries whose analytic gradient magnitude is below ``atol`` are compared
    absolutely (within ``atol``); the rest by symmetric relative error.
    Returns the worst relative error seen.
    """
    params.zero_grads()
    with GradTape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    worst = 0.0
    failures = []
    check = params.items() if names is None else [(n, params[n]) for n in names]
    for name, t in check:
        flat = t.data.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn().data)
            flat[i] = orig - h
            down = float(loss_fn().data)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            a = grad[i]
            if abs(a) < atol and abs(fd) < atol:
                continue
            rel = abs(fd - a) / max(abs(a), abs(fd))
            worst = max(worst, rel)
            if rel > rtol:
                failures.append(f"{name}[{i}]: analytic {a:.8g} vs fd {fd:.8g} (rel {rel:.3g})")
    assert not failures, "gradient mismatches:\n" + "\n".join(failures[:20])
    return worst


# ---- scalar reference implementations (independent of the library code) ----


def ref_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def ref_lstm_cell(x, h, c, Wx, Wh, b):
    """One LSTM step computed scalar-by-scalar; gate order i, f, g, o."""
    H = len(h)
    z = [0.0] * (4 * H)
    for j in range(4 * H):
        acc = b[j]
        for k in range(len(x)):
            acc += x[k] * Wx[k][j]
        for k in range(H):
            acc += h[k] * Wh[k][j]
        z[j] = acc
    h_new = [0.0] * H
    c_new = [0.0] * H
    for j in range(H):
        i_g = ref_sigmoid(z[j])
        f_g = ref_sigmoid(z[H + j])
        g_g = math.tanh(z[2 * H + j])
        o_g = ref_sigmoid(z[3 * H + j])
        c_new[j] = f_g * c[j] + i_g * g_g
        h_new[j] = o_g * math.tanh(c_new[j])
    return h_new, c_new


def ref_bilstm(rows, fwd, bwd):
    """Bidirectional pass over a list of row vectors; returns per-step
    [forward_h ; backward_h] lists.  ``fwd``/``bwd`` are (Wx, Wh, b) triples
    given as nested Python lists."""
    n = len(rows)
    H = len(fwd[2]) // 4
    out_f = []
    h = [0.0] * H
    c = [0.0] * H
    for t in range(n):
        h, c = ref_lstm_cell(rows[t], h, c, *fwd)
        out_f.append(h)
    out_b = [None] * n
    h = [0.0] * H
    c = [0.0] * H
    for t in reversed(range(n)):
        h, c = ref_lstm_cell(rows[t], h, c, *bwd)
        out_b[t] = h
    return [out_f[t] + out_b[t] for t in range(n)]


def ref_max_pool(rows):
    """Column-wise max over a list of equal-length rows, scalar loops."""
    n, d = len(rows), len(rows[0])
    out = [0.0] * d
    arg = [0] * d
    for j in range(d):
        best = rows[0][j]
        best_i = 0
        for i in range(1, n):
            if rows[i][j] > best:
                best = rows[i][j]
                best_i = i
        out[j] = best
        arg[j] = best_i
    return out, arg


@pytest.fixture
def rng():
    return np.random.default_rng(0)
