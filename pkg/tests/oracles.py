"""Independent reference implementations used by the tests.

Plain Python loops over float64 numbers; nothing here calls into pmdg or
torch autograd, so agreement with the library is a real cross-check.
"""

import math

import numpy as np


def coral(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = a.shape[1]

    def moments(x):
        n = len(x)
        mean = [sum(x[i][j] for i in range(n)) / n for j in range(d)]
        cov = [[sum((x[i][p] - mean[p]) * (x[i][q] - mean[q]) for i in range(n)) / (n - 1)
                for q in range(d)] for p in range(d)]
        return mean, cov

    ma, ca = moments(a)
    mb, cb = moments(b)
    mean_term = sum((ma[j] - mb[j]) ** 2 for j in range(d)) / d
    cov_term = sum((ca[p][q] - cb[p][q]) ** 2 for p in range(d) for q in range(d)) / d**2
    return mean_term + cov_term


def mmd(a, b, gammas):
    a, b = np.asarray(a, float), np.asarray(b, float)

    def k(x, y):
        sq = sum((xi - yi) ** 2 for xi, yi in zip(x, y))
        return sum(math.exp(-g * sq) for g in gammas)

    def avg(x, y):
        return sum(k(p, q) for p in x for q in y) / (len(x) * len(y))

    return avg(a, a) + avg(b, b) - 2 * avg(a, b)


def variance(risks):
    mean = sum(risks) / len(risks)
    return sum((r - mean) ** 2 for r in risks) / len(risks)


def mean_square(logits):
    flat = [v for row in np.asarray(logits, float) for v in row]
    return sum(v * v for v in flat) / len(flat)


def softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def cross_entropy(logits, targets):
    """Mean CE; ``targets`` are ints or probability rows."""
    total = 0.0
    for z, t in zip(np.asarray(logits, float), targets):
        p = softmax(list(z))
        if np.ndim(t) == 0:
            total -= math.log(p[int(t)])
        else:
            total -= sum(tc * math.log(pc) for tc, pc in zip(t, p) if tc > 0)
    return total / len(logits)


def risk_scale_gradient(logits, targets):
    """d/dw of mean CE(w * z) at w = 1, in closed form: E_p[z] - E_t[z]."""
    total = 0.0
    for z, t in zip(np.asarray(logits, float), targets):
        p = softmax(list(z))
        ep = sum(pc * zc for pc, zc in zip(p, z))
        if np.ndim(t) == 0:
            et = z[int(t)]
        else:
            et = sum(tc * zc for tc, zc in zip(t, z))
        total += ep - et
    return total / len(logits)


def irm(logits, targets, mode):
    logits = np.asarray(logits, float)
    targets = list(targets)
    if mode == "plain":
        return risk_scale_gradient(logits, targets) ** 2
    g1 = risk_scale_gradient(logits[0::2], targets[0::2])
    g2 = risk_scale_gradient(logits[1::2], targets[1::2])
    return g1 * g2


def groupdro_step(q, losses, eta):
    w = [qk * math.exp(eta * lk) for qk, lk in zip(q, losses)]
    s = sum(w)
    return [v / s for v in w]


def pearson(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)
