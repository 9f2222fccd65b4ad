"""Vectorised numpy kernels. Reference path and fallback when numba is absent."""

from __future__ import annotations

import numpy as np


def dense_forward(X, W, b, relu):
    Z = X @ W + b
    A = np.maximum(Z, 0.0) if relu else Z
    return Z, A


def dense_backward(X, W, Z, dA, relu):
    dZ = dA * (Z > 0.0) if relu else dA
    return dZ @ W.T, X.T @ dZ, dZ.sum(axis=0)


def cosine_forward(F, W, eps):
    nf = np.sqrt((F * F).sum(axis=1)) + eps
    nw = np.sqrt((W * W).sum(axis=1)) + eps
    return (F @ W.T) / nf[:, None] / nw[None, :]


def cosine_backward(F, W, cos, dcos, eps):
    rf = np.sqrt((F * F).sum(axis=1))
    rw = np.sqrt((W * W).sum(axis=1))
    nf = rf + eps
    nw = rw + eps
    g = dcos / nf[:, None] / nw[None, :]
    gc = dcos * cos
    # d|v|/dv = v/|v| is taken as 0 at v = 0
    uf = np.divide(F, (nf * rf)[:, None], out=np.zeros_like(F), where=rf[:, None] > 0)
    uw = np.divide(W, (nw * rw)[:, None], out=np.zeros_like(W), where=rw[:, None] > 0)
    dF = g @ W - gc.sum(axis=1)[:, None] * uf
    dW = g.T @ F - gc.sum(axis=0)[:, None] * uw
    return dF, dW


def margin_ranking(cos, labels, mask, old_count, margin, top_k):
    """Hinge sum over (masked sample, hardest new-class negative) pairs.

    Returns ``(loss_sum, n_pairs, grad_cos)`` with ``grad_cos`` the gradient
    of ``loss_sum``.
    """
    B, C = cos.shape
    grad = np.zeros_like(cos)
    k = min(top_k, C - old_count)
    rows = np.flatnonzero(mask)
    if k <= 0 or rows.size == 0:
        return 0.0, 0, grad
    sub = cos[rows, old_count:]
    neg = np.argsort(-sub, axis=1, kind="stable")[:, :k] + old_count
    gt = cos[rows, labels[rows]]
    negv = np.take_along_axis(cos[rows], neg, axis=1)
    h = margin - gt[:, None] + negv
    active = h > 0.0
    loss = float(np.where(active, h, 0.0).sum())
    act = active.astype(cos.dtype)
    np.add.at(grad, (rows, labels[rows]), -act.sum(axis=1))
    np.add.at(grad, (np.repeat(rows, k), neg.ravel()), act.ravel())
    return loss, rows.size * k, grad


def herding_select(feats, k):
    n = feats.shape[0]
    mu = feats.mean(axis=0)
    taken = np.zeros(n, dtype=bool)
    running = np.zeros_like(mu)
    out = np.empty(k, dtype=np.int64)
    for j in range(k):
        cand = (running[None, :] + feats) / (j + 1)
        d = ((mu[None, :] - cand) ** 2).sum(axis=1)
        d[taken] = np.inf
        i = int(np.argmin(d))  # first minimum: lowest index on ties
        out[j] = i
        taken[i] = True
        running = running + feats[i]
    return out


def nearest_mean(F, means):
    d = ((F[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1).astype(np.int64)
