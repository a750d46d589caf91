"""Slow, independent reference implementations used only by the tests.

Everything here is written with plain Python loops and the ``math`` module so
it shares no code path with the package under test.
"""

import itertools
import math


def rows(X):
    return [[float(v) for v in r] for r in X]


def sq_dist(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b))


def pairwise_sq(X):
    P = rows(X)
    return [[sq_dist(p, q) for q in P] for p in P]


def means_by_label(X, labels, k):
    P = rows(X)
    d = len(P[0])
    sums = [[0.0] * d for _ in range(k)]
    counts = [0] * k
    for p, l in zip(P, labels):
        counts[l] += 1
        for j in range(d):
            sums[l][j] += p[j]
    return [[s / counts[i] for s in sums[i]] for i in range(k)]


def dispersion(X, labels, C):
    return sum(sq_dist(p, C[l]) for p, l in zip(rows(X), labels))


def silhouette(X, labels):
    P = rows(X)
    n = len(P)
    labels = list(labels)
    clusters = sorted(set(labels))
    total = 0.0
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            continue  # singleton scores 0
        a = sum(math.dist(P[i], P[j]) for j in own) / len(own)
        b = math.inf
        for c in clusters:
            if c == labels[i]:
                continue
            members = [j for j in range(n) if labels[j] == c]
            b = min(b, sum(math.dist(P[i], P[j]) for j in members) / len(members))
        denom = max(a, b)
        total += 0.0 if denom == 0 else (b - a) / denom
    return total / n


def davies_bouldin(X, labels, C):
    P = rows(X)
    k = len(C)
    scatter = []
    for i in range(k):
        pts = [p for p, l in zip(P, labels) if l == i]
        scatter.append(sum(math.dist(p, C[i]) for p in pts) / len(pts))
    total = 0.0
    for i in range(k):
        worst = 0.0
        for j in range(k):
            if i != j:
                worst = max(worst, (scatter[i] + scatter[j]) / math.dist(C[i], C[j]))
        total += worst
    return total / k


def ccr_variance(X, labels, C):
    P = rows(X)
    per = []
    for i in range(len(C)):
        pts = [p for p, l in zip(P, labels) if l == i]
        per.append(sum(sq_dist(p, C[i]) for p in pts) / len(pts))
    return sum(per) / len(per)


def best_two_partition(X):
    """Global K-Means optimum for k = 2 by enumerating every split."""
    P = rows(X)
    n = len(P)
    best = (math.inf, None)
    for mask in itertools.product((0, 1), repeat=n):
        if len(set(mask)) < 2 or mask[0] == 1:
            continue
        C = means_by_label(P, mask, 2)
        w = dispersion(P, mask, C)
        if w < best[0]:
            best = (w, C)
    return best


def kde_value(x, points, h):
    norm = 1.0 / (len(points) * h * math.sqrt(2.0 * math.pi))
    return norm * sum(math.exp(-0.5 * ((x - p) / h) ** 2) for p in points)


def det(M):
    """Determinant by Gaussian elimination with partial pivoting."""
    A = [list(map(float, r)) for r in M]
    n = len(A)
    out = 1.0
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(A[r][c]))
        if A[p][c] == 0:
            return 0.0
        if p != c:
            A[c], A[p] = A[p], A[c]
            out = -out
        out *= A[c][c]
        for r in range(c + 1, n):
            f = A[r][c] / A[c][c]
            for j in range(c, n):
                A[r][j] -= f * A[c][j]
    return out
