"""Brute-force reference implementations, written with plain loops and ``math``.

They share no code with the package and are deliberately naive.
"""

import math

NEG = float("-inf")


def spherical_mask(centroids, r):
    k = len(centroids)
    out = [[0.0] * k for _ in range(k)]
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            d = math.sqrt(sum((centroids[i][a] - centroids[j][a]) ** 2 for a in range(3)))
            out[i][j] = 0.0 if d < r else NEG
    return out


def masked_softmax_row(logits, blocked):
    """Softmax over the entries whose ``blocked`` flag is False; blocked get 0."""
    keep = [x for x, b in zip(logits, blocked) if not b]
    top = max(keep)
    total = math.fsum(math.exp(x - top) for x in keep)
    return [0.0 if b else math.exp(x - top) / total for x, b in zip(logits, blocked)]


def mean_pool(features, masks):
    out = []
    for row in masks:
        members = [features[n] for n in range(len(row)) if row[n]]
        out.append([math.fsum(f[c] for f in members) / len(members) for c in range(len(features[0]))])
    return out


def selection_loss(logits, target):
    top = max(logits)
    return -(logits[target] - top - math.log(math.fsum(math.exp(x - top) for x in logits)))


def offset_loss(offsets, centroids, target):
    k = len(centroids)
    total = 0.0
    for i in range(k):
        goal = [centroids[i][a] - centroids[target][a] for a in range(3)]
        total += math.sqrt(sum((offsets[i][a] - goal[a]) ** 2 for a in range(3)))
    return total / k


def _log_sigmoid(x):
    return -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))


def span_loss(logits, labels, pad):
    terms = []
    for x, y, p in zip(logits, labels, pad):
        if p:
            continue
        terms.append(-(y * _log_sigmoid(x) + (1 - y) * _log_sigmoid(-x)))
    return math.fsum(terms) / len(terms)


def argmax_lowest(values):
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def _affine(x, w, b):
    return [math.fsum(x[i] * w[i][j] for i in range(len(x))) + b[j] for j in range(len(b))]


def attention(queries, keys, wq, bq, wk, bk, wv, bv, wo, bo, blocked):
    """Single-head scaled dot-product attention over lists; ``blocked[i][j]`` hides key j from query i."""
    q = [_affine(x, wq, bq) for x in queries]
    k = [_affine(x, wk, bk) for x in keys]
    v = [_affine(x, wv, bv) for x in keys]
    scale = 1.0 / math.sqrt(len(bq))
    out = []
    for i, qi in enumerate(q):
        logits = [math.fsum(a * b for a, b in zip(qi, kj)) * scale for kj in k]
        p = masked_softmax_row(logits, blocked[i])
        mixed = [math.fsum(p[j] * v[j][c] for j in range(len(v))) for c in range(len(bv))]
        out.append(_affine(mixed, wo, bo))
    return out
