"""Independent reference implementations used as test oracles.

Written with scalar Python loops and ``math`` so they share no code path with
the vectorised library.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def matvec(row, mat):
    """row (k) @ mat (k x m) with plain loops."""
    return [sum(row[k] * mat[k][j] for k in range(len(row))) for j in range(len(mat[0]))]


def lstm_pass(xs, w_in, w_rec, bias, reverse=False):
    """One LSTM direction over a list of input vectors; gate order i, f, g, o."""
    n = len(w_rec)
    h, c = [0.0] * n, [0.0] * n
    out = [None] * len(xs)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    for t in order:
        px = matvec(xs[t], w_in)
        ph = matvec(h, w_rec)
        z = [px[j] + ph[j] + bias[j] for j in range(4 * n)]
        i = [sigmoid(z[j]) for j in range(n)]
        f = [sigmoid(z[n + j]) for j in range(n)]
        g = [math.tanh(z[2 * n + j]) for j in range(n)]
        o = [sigmoid(z[3 * n + j]) for j in range(n)]
        c = [f[j] * c[j] + i[j] * g[j] for j in range(n)]
        h = [o[j] * math.tanh(c[j]) for j in range(n)]
        out[t] = h
    return out


def gru_pass(xs, w_in, w_gates, w_cand, bias, reverse=False):
    n = len(w_cand)
    h = [0.0] * n
    out = [None] * len(xs)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    for t in order:
        px = matvec(xs[t], w_in)
        pg = matvec(h, w_gates)
        z = [sigmoid(px[j] + bias[j] + pg[j]) for j in range(n)]
        r = [sigmoid(px[n + j] + bias[n + j] + pg[n + j]) for j in range(n)]
        rh = [r[j] * h[j] for j in range(n)]
        pc = matvec(rh, w_cand)
        cand = [math.tanh(px[2 * n + j] + bias[2 * n + j] + pc[j]) for j in range(n)]
        h = [h[j] + z[j] * (cand[j] - h[j]) for j in range(n)]
        out[t] = h
    return out


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def attention(h_a, h_b):
    """Row/column-normalised scaled dot-product alignment of two token lists."""
    d = len(h_a[0])
    e = [[sum(x * y for x, y in zip(a, b)) / math.sqrt(d) for b in h_b] for a in h_a]
    a2b = [softmax(row) for row in e]
    cols = [softmax([e[i][j] for i in range(len(h_a))]) for j in range(len(h_b))]
    tilde_a = [[sum(a2b[i][j] * h_b[j][k] for j in range(len(h_b))) for k in range(d)]
               for i in range(len(h_a))]
    tilde_b = [[sum(cols[j][i] * h_a[i][k] for i in range(len(h_a))) for k in range(d)]
               for j in range(len(h_b))]
    return e, a2b, cols, tilde_a, tilde_b


def attention_pool(h, W, b, u_w):
    u = [[max(0.0, sum(row[k] * W[k][j] for k in range(len(row))) + b[j])
          for j in range(len(b))] for row in h]
    alpha = softmax([sum(x * y for x, y in zip(ui, u_w)) for ui in u])
    return [sum(alpha[i] * u[i][j] for i in range(len(u))) for j in range(len(b))], alpha


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def info_nce(anchor, positive, negatives, tau):
    sp = math.exp(cosine(anchor, positive) / tau)
    sn = sum(math.exp(cosine(anchor, n) / tau) for n in negatives)
    return -math.log(sp / (sp + sn))


def mlp_probability(diff, w1, b1, w2, b2):
    hidden = [math.tanh(sum(diff[k] * w1[k][j] for k in range(len(diff))) + b1[j])
              for j in range(len(b1))]
    logits = [sum(hidden[k] * w2[k][j] for k in range(len(hidden))) + b2[j] for j in range(2)]
    return softmax(logits)[1]


def brute_force_best(candidates, p):
    """Max satisfied-pair count over all orders and the lexicographically first order achieving it."""
    best, best_order = -1, None
    for order in sorted(itertools.permutations(candidates)):
        count = 0
        for x in range(len(order)):
            for y in range(x + 1, len(order)):
                if p[(order[x], order[y])] > 0.5:
                    count += 1
        if count > best:
            best, best_order = count, order
    return best, best_order


def satisfied(order, p):
    return sum(1 for x in range(len(order)) for y in range(x + 1, len(order))
               if p[(order[x], order[y])] > 0.5)


def macro(predictions, labels):
    """(acc, MaP, MaR, MaF) from explicit per-class loops."""
    ps, rs, fs = [], [], []
    for cls in (0, 1):
        tp = sum(1 for p, y in zip(predictions, labels) if p == cls and y == cls)
        pred = sum(1 for p in predictions if p == cls)
        true = sum(1 for y in labels if y == cls)
        prec = tp / pred if pred else 0.0
        rec = tp / true if true else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        ps.append(prec)
        rs.append(rec)
        fs.append(f1)
    acc = sum(1 for p, y in zip(predictions, labels) if p == y) / len(labels)
    return acc, sum(ps) / 2, sum(rs) / 2, sum(fs) / 2


def random_preferences(rng, n, strict=False):
    """Candidate ids and p over ordered pairs; values snap to 0.5 now and then unless strict."""
    cands = [chr(ord("A") + k) for k in range(n)]
    p = {}
    for x, y in itertools.combinations(cands, 2):
        v = float(rng.uniform(0.0, 1.0))
        if not strict and rng.uniform() < 0.1:
            v = 0.5
        p[(x, y)], p[(y, x)] = v, 1.0 - v
    return cands, p


def transitive_preferences(rng, n):
    """Strongly transitive preferences from Bradley-Terry scores: a hidden total
    order, every p off 0.5, and p(i, k) >= max(p(i, j), p(j, k)) whenever i > j > k."""
    cands = [chr(ord("A") + k) for k in range(n)]
    gaps = rng.uniform(0.05, 2.0, size=n)
    scores = dict(zip([cands[i] for i in rng.permutation(n)], -np.cumsum(gaps)))
    p = {(x, y): 1.0 / (1.0 + math.exp(scores[y] - scores[x]))
         for x in cands for y in cands if x != y}
    return cands, p, tuple(sorted(cands, key=lambda c: -scores[c]))


# (tp, fp, tn, fn) for class 1, picked by hand to cover empty classes and extremes
CONFUSION_FIXTURES = [
    (2, 0, 2, 0), (1, 1, 1, 1), (0, 0, 1, 1), (0, 0, 5, 0), (0, 0, 0, 4),
    (3, 0, 0, 0), (0, 3, 0, 0), (0, 2, 0, 2), (5, 1, 3, 2), (1, 4, 2, 7),
    (10, 0, 0, 1), (0, 1, 10, 0), (4, 4, 4, 4), (7, 2, 9, 1), (1, 0, 0, 0),
    (0, 0, 0, 1), (2, 3, 5, 7), (6, 6, 1, 0), (0, 5, 5, 0), (9, 1, 1, 9),
]


def fraction_metrics(tp, fp, tn, fn):
    """(acc, MaP, MaR, MaF) in exact rational arithmetic."""
    from fractions import Fraction as F

    def div(a, b):
        return F(a, b) if b else F(0)

    def prf(tp_, fp_, fn_):
        p, r = div(tp_, tp_ + fp_), div(tp_, tp_ + fn_)
        return p, r, (2 * p * r / (p + r) if p + r else F(0))

    p1, r1, f1 = prf(tp, fp, fn)
    p0, r0, f0 = prf(tn, fn, fp)
    return F(tp + tn, tp + fp + tn + fn), (p0 + p1) / 2, (r0 + r1) / 2, (f0 + f1) / 2


def confusion_to_lists(tp, fp, tn, fn):
    preds = [1] * tp + [1] * fp + [0] * tn + [0] * fn
    labels = [1] * tp + [0] * fp + [0] * tn + [1] * fn
    return preds, labels


def _term_matrix(docs):
    vocab = sorted({t for d in docs for t in d})
    tf = np.array([[d.count(t) for t in vocab] for d in docs], dtype=float)
    return vocab, tf


def tfidf_oracle(docs, qi, di):
    """Cosine of count-times-smoothed-idf rows of a dense term matrix."""
    _, tf = _term_matrix(docs)
    df = (tf > 0).sum(axis=0)
    w = tf * (np.log((len(docs) + 1) / (df + 1)) + 1)
    q, d = w[qi], w[di]
    denom = np.linalg.norm(q) * np.linalg.norm(d)
    return float(q @ d / denom) if denom else 0.0


def bm25_oracle(docs, qi, di, k1=1.2, b=0.75):
    """Okapi BM25 of document qi (as a query, token by token) against document di."""
    vocab, tf = _term_matrix(docs)
    n = len(docs)
    df = (tf > 0).sum(axis=0)
    idf = np.log((n - df + 0.5) / (df + 0.5) + 1)
    lengths = tf.sum(axis=1)
    norm = k1 * (1 - b + b * lengths[di] / lengths.mean())
    per_term = idf * tf[di] * (k1 + 1) / (tf[di] + norm)
    return float(tf[qi] @ per_term)
