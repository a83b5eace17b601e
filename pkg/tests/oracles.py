"""Scalar-loop reference implementations (pure Python, no torch)."""
import math

import numpy as np


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def clip_direction(za, zb, tau, include_positive=True, excluded=None):
    """sum_j -log(exp(s_jj) / sum_{k in D_j} exp(s_jk)), D_j per the rules."""
    n = len(za)
    total = 0.0
    for j in range(n):
        num = math.exp(dot(za[j], zb[j]) / tau)
        den = 0.0
        for k in range(n):
            if k == j and not include_positive:
                continue
            if excluded is not None and k != j and excluded[j][k]:
                continue
            den += math.exp(dot(za[j], zb[k]) / tau)
        total += -math.log(num / den)
    return total


def clip(zi, zt, tau, lam, include_positive=True, labels=None):
    n = len(zi)
    excluded = None
    if labels is not None:
        excluded = [[labels[j] == labels[k] for k in range(n)] for j in range(n)]
    l_it = clip_direction(zi, zt, tau, include_positive, excluded) / n
    l_ti = clip_direction(zt, zi, tau, include_positive, excluded) / n
    return lam * l_it + (1 - lam) * l_ti, l_it, l_ti


def ntxent(za, zb, tau):
    views = list(za) + list(zb)
    n = len(za)
    total = 0.0
    for a in range(2 * n):
        pos = a + n if a < n else a - n
        den = sum(math.exp(dot(views[a], views[k]) / tau) for k in range(2 * n) if k != a)
        total += -math.log(math.exp(dot(views[a], views[pos]) / tau) / den)
    return total / (2 * n)


def supcon(zi, zt, labels, tau):
    n = len(zi)

    def direction(za, zb):
        s = 0.0
        for j in range(n):
            den = sum(math.exp(dot(za[j], zb[k]) / tau) for k in range(n))
            positives = [k for k in range(n) if labels[k] == labels[j]]
            s += sum(-math.log(math.exp(dot(za[j], zb[k]) / tau) / den) for k in positives) / len(positives)
        return s

    return 0.5 * (direction(zi, zt) + direction(zt, zi)) / n


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y != 1]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else (0.5 if p == q else 0.0)
    return wins / (len(pos) * len(neg))


def central_difference(f, tensors, eps=1e-6):
    """Central finite-difference gradient of scalar f() wrt each tensor (modified in place)."""
    import torch

    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = f().item()
                flat[i] = old - eps
                down = f().item()
                flat[i] = old
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def relative_error(a, b):
    import torch

    a = torch.cat([x.reshape(-1) for x in a])
    b = torch.cat([x.reshape(-1) for x in b])
    return ((a - b).norm() / max(a.norm().item(), b.norm().item(), 1e-30)).item()


def ols_oracle(X, y, x_new):
    """Closed-form normal equations with intercept."""
    A = np.column_stack([np.ones(len(X)), X])
    beta = np.linalg.solve(A.T @ A, A.T @ y)
    return np.concatenate([[1.0], x_new]) @ beta
