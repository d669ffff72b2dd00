"""Compiled inner loops for tree growing and evaluation."""

from __future__ import annotations

import numpy as np
from numba import njit


def make_workspace(n, d):
    return np.empty((d, n)), np.empty((d, n))


@njit(cache=True)
def grow_tree(
    X, order, xs, g, h, active, max_depth, lam, gamma, min_child_weight, colsample, seed, work
):
    """Grow one regression tree level by level with exact greedy splits.

    ``order[f]`` lists sample indices sorted by ``X[:, f]`` and ``xs[f]`` the
    matching sorted values. Inactive samples are ignored. ``work`` holds two
    reusable ``(d, n)`` buffers from :func:`make_workspace`. Returns node
    arrays (BFS order) and the leaf id of every active sample (-1 for
    inactive ones).
    """
    n, d = X.shape
    gs, hs = work
    for f in range(d):
        for k in range(n):
            i = order[f, k]
            gs[f, k] = g[i]
            hs[f, k] = h[i]

    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    node_g = np.zeros(cap)
    node_h = np.zeros(cap)
    node_lo = np.full(cap, np.inf)
    node_hi = np.full(cap, -np.inf)

    node_of = np.full(n, -1, np.int64)
    for i in range(n):
        if active[i]:
            node_of[i] = 0
            node_g[0] += g[i]
            node_h[0] += h[i]
            r = -g[i] / h[i] if h[i] > 0 else 0.0
            node_lo[0] = min(node_lo[0], r)
            node_hi[0] = max(node_hi[0], r)
    n_nodes = 1
    if colsample < 1.0:
        np.random.seed(seed)
    n_cols = max(1, int(round(colsample * d)))

    frontier = np.zeros(1, np.int64)
    slot_of = np.full(n, -1, np.int32)
    for depth in range(max_depth):
        nf = frontier.shape[0]
        if nf == 0:
            break
        slot = np.full(n_nodes, -1, np.int32)
        for s in range(nf):
            slot[frontier[s]] = s
        for i in range(n):
            slot_of[i] = slot[node_of[i]] if node_of[i] >= 0 else -1
        allowed = np.ones((d, nf), np.bool_)
        if colsample < 1.0:
            for s in range(nf):
                allowed[:, s] = False
                perm = np.random.permutation(d)
                for k in range(n_cols):
                    allowed[perm[k], s] = True
        best_gain = np.full(nf, -np.inf)
        best_feat = np.full(nf, -1, np.int64)
        best_thr = np.zeros(nf)
        tot_g = np.empty(nf)
        tot_h = np.empty(nf)
        parent = np.empty(nf)
        for s in range(nf):
            nd = frontier[s]
            tot_g[s] = node_g[nd]
            tot_h[s] = node_h[nd]
            parent[s] = node_g[nd] * node_g[nd] / (node_h[nd] + lam)
        gl = np.zeros(nf)
        hl = np.zeros(nf)
        last = np.zeros(nf)
        seen = np.zeros(nf, np.bool_)
        for f in range(d):
            gl[:] = 0.0
            hl[:] = 0.0
            seen[:] = False
            of = order[f]
            xf = xs[f]
            gf = gs[f]
            hf = hs[f]
            af = allowed[f]
            for k in range(n):
                s = slot_of[of[k]]
                if s < 0 or not af[s]:
                    continue
                x = xf[k]
                if seen[s] and x != last[s]:
                    hr = tot_h[s] - hl[s]
                    if hl[s] >= min_child_weight and hr >= min_child_weight:
                        gr = tot_g[s] - gl[s]
                        gain = 0.5 * (
                            gl[s] * gl[s] / (hl[s] + lam) + gr * gr / (hr + lam) - parent[s]
                        ) - gamma
                        if gain > best_gain[s]:
                            best_gain[s] = gain
                            best_feat[s] = f
                            thr = last[s] + 0.5 * (x - last[s])
                            if thr >= x:
                                thr = last[s]
                            best_thr[s] = thr
                gl[s] += gf[k]
                hl[s] += hf[k]
                last[s] = x
                seen[s] = True

        n_split = 0
        for s in range(nf):
            nd = frontier[s]
            # Zero gain is accepted only for impure nodes (symmetric cases such as XOR).
            ok = best_feat[s] >= 0 and (
                best_gain[s] > 0.0
                or (best_gain[s] == 0.0 and gamma == 0.0 and node_hi[nd] > node_lo[nd])
            )
            if ok:
                feature[nd] = best_feat[s]
                threshold[nd] = best_thr[s]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                n_nodes += 2
                n_split += 1
            else:
                best_feat[s] = -1
        if n_split == 0:
            break
        for i in range(n):
            s = slot_of[i]
            if s < 0 or best_feat[s] < 0:
                continue
            nd = node_of[i]
            if X[i, best_feat[s]] <= best_thr[s]:
                c = left[nd]
            else:
                c = right[nd]
            node_of[i] = c
            node_g[c] += g[i]
            node_h[c] += h[i]
            r = -g[i] / h[i] if h[i] > 0 else 0.0
            node_lo[c] = min(node_lo[c], r)
            node_hi[c] = max(node_hi[c], r)
        nxt = np.empty(2 * n_split, np.int64)
        j = 0
        for s in range(nf):
            nd = frontier[s]
            if best_feat[s] >= 0:
                nxt[j] = left[nd]
                nxt[j + 1] = right[nd]
                j += 2
        frontier = nxt

    for nd in range(n_nodes):
        if feature[nd] < 0:
            den = node_h[nd] + lam
            value[nd] = -node_g[nd] / den if den > 0 else 0.0
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        node_of,
    )


@njit(cache=True)
def predict_forest(X, feature, threshold, left, right, value, offsets):
    """Per-row sum of tree outputs; trees are concatenated with ``offsets``."""
    n = X.shape[0]
    out = np.zeros(n)
    n_trees = offsets.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            nd = 0
            while feature[base + nd] >= 0:
                if X[i, feature[base + nd]] <= threshold[base + nd]:
                    nd = left[base + nd]
                else:
                    nd = right[base + nd]
            acc += value[base + nd]
        out[i] = acc
    return out
