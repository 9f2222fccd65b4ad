"""Loop kernels compiled with numba.

Plain loops rather than ``np.dot`` keep the result independent of the BLAS
build and its thread count. Signatures mirror :mod:`sddr.kernels._numpy`.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def dense_forward(X, W, b, relu):
    B, n_in = X.shape
    n_out = W.shape[1]
    Z = np.empty((B, n_out))
    A = np.empty((B, n_out))
    for i in range(B):
        for o in range(n_out):
            Z[i, o] = b[o]
        for k in range(n_in):
            x = X[i, k]
            if x != 0.0:
                for o in range(n_out):
                    Z[i, o] += x * W[k, o]
        for o in range(n_out):
            z = Z[i, o]
            A[i, o] = z if (not relu or z > 0.0) else 0.0
    return Z, A


@njit(cache=True)
def dense_backward(X, W, Z, dA, relu):
    B, n_in = X.shape
    n_out = W.shape[1]
    dZ = np.empty((B, n_out))
    for i in range(B):
        for o in range(n_out):
            dZ[i, o] = dA[i, o] if (not relu or Z[i, o] > 0.0) else 0.0
    dX = np.zeros((B, n_in))
    dW = np.zeros((n_in, n_out))
    db = np.zeros(n_out)
    for i in range(B):
        for k in range(n_in):
            acc = 0.0
            x = X[i, k]
            for o in range(n_out):
                g = dZ[i, o]
                acc += g * W[k, o]
                dW[k, o] += x * g
            dX[i, k] = acc
        for o in range(n_out):
            db[o] += dZ[i, o]
    return dX, dW, db


@njit(cache=True)
def _row_norms(M):
    out = np.empty(M.shape[0])
    for i in range(M.shape[0]):
        s = 0.0
        for j in range(M.shape[1]):
            s += M[i, j] * M[i, j]
        out[i] = math.sqrt(s)
    return out


@njit(cache=True)
def cosine_forward(F, W, eps):
    B, d = F.shape
    C = W.shape[0]
    nf = _row_norms(F)
    nw = _row_norms(W)
    cos = np.empty((B, C))
    for i in range(B):
        for c in range(C):
            s = 0.0
            for k in range(d):
                s += F[i, k] * W[c, k]
            cos[i, c] = s / (nf[i] + eps) / (nw[c] + eps)
    return cos


@njit(cache=True)
def cosine_backward(F, W, cos, dcos, eps):
    B, d = F.shape
    C = W.shape[0]
    rf = _row_norms(F)
    rw = _row_norms(W)
    dF = np.zeros((B, d))
    dW = np.zeros((C, d))
    col_gc = np.zeros(C)
    for i in range(B):
        nf = rf[i] + eps
        row_gc = 0.0
        for c in range(C):
            g = dcos[i, c] / nf / (rw[c] + eps)
            gc = dcos[i, c] * cos[i, c]
            row_gc += gc
            col_gc[c] += gc
            for k in range(d):
                dF[i, k] += g * W[c, k]
                dW[c, k] += g * F[i, k]
        if rf[i] > 0.0:
            s = row_gc / (nf * rf[i])
            for k in range(d):
                dF[i, k] -= s * F[i, k]
    for c in range(C):
        if rw[c] > 0.0:
            s = col_gc[c] / ((rw[c] + eps) * rw[c])
            for k in range(d):
                dW[c, k] -= s * W[c, k]
    return dF, dW


@njit(cache=True)
def _margin_ranking(cos, labels, mask, old_count, margin, top_k):
    B, C = cos.shape
    grad = np.zeros((B, C))
    k = min(top_k, C - old_count)
    loss = 0.0
    pairs = 0
    if k <= 0:
        return loss, pairs, grad
    picked = np.empty(k, dtype=np.int64)
    for i in range(B):
        if not mask[i]:
            continue
        # partial selection sort; strict > keeps the lowest index on ties
        for r in range(k):
            best = -1
            for c in range(old_count, C):
                used = False
                for q in range(r):
                    if picked[q] == c:
                        used = True
                        break
                if used:
                    continue
                if best < 0 or cos[i, c] > cos[i, best]:
                    best = c
            picked[r] = best
        gt = cos[i, labels[i]]
        for r in range(k):
            h = margin - gt + cos[i, picked[r]]
            if h > 0.0:
                loss += h
                grad[i, labels[i]] -= 1.0
                grad[i, picked[r]] += 1.0
        pairs += k
    return loss, pairs, grad


def margin_ranking(cos, labels, mask, old_count, margin, top_k):
    loss, pairs, grad = _margin_ranking(
        cos, labels, mask, int(old_count), float(margin), int(top_k)
    )
    return float(loss), int(pairs), grad


@njit(cache=True)
def herding_select(feats, k):
    n, d = feats.shape
    mu = np.zeros(d)
    for i in range(n):
        for q in range(d):
            mu[q] += feats[i, q]
    for q in range(d):
        mu[q] /= n
    taken = np.zeros(n, dtype=np.bool_)
    running = np.zeros(d)
    out = np.empty(k, dtype=np.int64)
    for j in range(k):
        best = -1
        best_d = np.inf
        for i in range(n):
            if taken[i]:
                continue
            s = 0.0
            for q in range(d):
                diff = mu[q] - (running[q] + feats[i, q]) / (j + 1)
                s += diff * diff
            if s < best_d:
                best_d = s
                best = i
        out[j] = best
        taken[best] = True
        for q in range(d):
            running[q] += feats[best, q]
    return out


@njit(cache=True)
def nearest_mean(F, means):
    B, d = F.shape
    C = means.shape[0]
    out = np.empty(B, dtype=np.int64)
    for i in range(B):
        best = 0
        best_d = np.inf
        for c in range(C):
            s = 0.0
            for q in range(d):
                diff = F[i, q] - means[c, q]
                s += diff * diff
            if s < best_d:
                best_d = s
                best = c
        out[i] = best
    return out
