"""Slow, loop-based reference evaluators used as test oracles.

The evaluators never call into labelmend; each recomputes a quantity from its
definition with plain loops over dense arrays. ``graph_of`` and
``near_relu_kink`` at the bottom only build or screen inputs.
"""

import math

import numpy as np
from scipy import sparse

from labelmend import gat
from labelmend.graphbuild import ImageGraph


def cam_labels(features, weights, relevant, bg=0.05):
    K, H, W = features.shape
    C1 = weights.shape[0]
    planes = np.zeros((C1, H, W))
    for c in relevant:
        raw = np.zeros((H, W))
        for y in range(H):
            for x in range(W):
                s = 0.0
                for k in range(K):
                    s += weights[c - 1, k] * features[k, y, x]
                raw[y, x] = max(s, 0.0)
        lo, hi = raw.min(), raw.max()
        if hi > lo:
            planes[c - 1] = (raw - lo) / (hi - lo)
    labels = np.zeros((H, W), dtype=int)
    for y in range(H):
        for x in range(W):
            best, arg = -1.0, 0
            for c in sorted(relevant):
                if planes[c - 1, y, x] > best:
                    best, arg = planes[c - 1, y, x], c
            labels[y, x] = arg if best >= bg else 0
    return planes, labels


def semantic_dense(V, Wl):
    n, h = V.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if Wl[i, j]:
                d = math.sqrt(sum((V[i, k] - V[j, k]) ** 2 for k in range(h)))
                out[i, j] = math.exp(-d / (2 * h))
    return out


def adjacency_dense(Ws, Wl, symmetrize="or"):
    n = Wl.shape[0]
    vals = [Ws[i, j] for i in range(n) for j in range(i + 1, n) if Wl[i, j]]
    if vals:
        mu = sum(vals) / len(vals)
        gamma = mu - math.sqrt(sum((v - mu) ** 2 for v in vals) / len(vals))
    else:
        gamma = 0.0
    keep = np.zeros((n, n), bool)
    for i in range(n):
        nbr = [Ws[i, k] for k in range(n) if Wl[i, k] and k != i]
        top = max(nbr) if nbr else -math.inf
        for j in range(n):
            if Wl[i, j] and i != j:
                keep[i, j] = not (Ws[i, j] < gamma and Ws[i, j] < top)
    A = np.zeros((n, n), bool)
    for i in range(n):
        for j in range(n):
            A[i, j] = (keep[i, j] or keep[j, i]) if symmetrize == "or" else (keep[i, j] and keep[j, i])
        A[i, i] = True
    return A, gamma


def _head_dense(X, Wq, Wk, Wv, A):
    n = X.shape[0]
    out = np.zeros((n, Wv.shape[0]))
    for i in range(n):
        nbrs = [j for j in range(n) if A[i, j]]
        e = [float((Wq @ X[i]) @ (Wk @ X[j])) for j in nbrs]
        m = max(e)
        w = [math.exp(v - m) for v in e]
        s = sum(w)
        for j, wj in zip(nbrs, w):
            out[i] += (wj / s) * (Wv @ X[j])
    return out


def gat_dense(X, A, hidden, output):
    """``hidden`` is a list of (Wq, Wk, Wv) triples, ``output`` one triple."""
    H = np.hstack([_head_dense(X, *h, A) for h in hidden])
    R = np.maximum(H, 0.0)
    logits = _head_dense(R, *output, A)
    Z = np.zeros_like(logits)
    for i in range(len(Z)):
        m = logits[i].max()
        ex = np.exp(logits[i] - m)
        Z[i] = ex / ex.sum()
    return Z


def attention_rows_dense(X, Wq, Wk, A):
    n = X.shape[0]
    alpha = np.zeros((n, n))
    for i in range(n):
        nbrs = [j for j in range(n) if A[i, j]]
        e = np.array([(Wq @ X[i]) @ (Wk @ X[j]) for j in nbrs])
        ex = np.exp(e - e.max())
        alpha[i, nbrs] = ex / ex.sum()
    return alpha


def random_adjacency(rng, n, p=0.5):
    """Random symmetric boolean matrix with self-loops, connected via a path."""
    A = rng.random((n, n)) < p
    A = A | A.T
    for i in range(n - 1):
        A[i, i + 1] = A[i + 1, i] = True
    np.fill_diagonal(A, True)
    return A


def graph_of(X, A):
    A = sparse.csr_matrix(np.asarray(A, bool))
    return ImageGraph(np.asarray(X, float), A, A.astype(float), A, 0.0)


def dense_params(model):
    hidden = [(h.query, h.key, h.value) for h in model.hidden]
    o = model.output
    return hidden, (o.query, o.key, o.value)


def numeric_gradients(model, graph, seeds, eps=1e-4):
    """Central differences of the summed seeded cross-entropy, computed with
    the dense evaluator above."""
    labels = np.asarray(seeds)
    A = np.asarray(graph.adjacency.todense(), bool)

    def value():
        Z = gat_dense(graph.features, A, *dense_params(model))
        return -sum(math.log(Z[i, c]) for i, c in enumerate(labels) if c >= 0)

    out = []
    for P in model.parameters():
        G = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + eps
            up = value()
            P[idx] = old - eps
            down = value()
            P[idx] = old
            G[idx] = (up - down) / (2 * eps)
        out.append(G)
    return out


def near_relu_kink(model, graph, tol=1e-2):
    cache = gat.forward_cached(model, graph.features, gat.Neighborhoods(graph.adjacency))
    return bool((np.abs(cache.hidden_pre) < tol).any())
