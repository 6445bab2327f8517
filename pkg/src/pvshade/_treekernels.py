"""Compiled inner loops for exact greedy tree growth and tree traversal.

Both CART (variance reduction) and regularised boosting trees reduce to the
same scan: for a node holding target sum S over m rows, a candidate split
scores S_L^2/(m_L + l2) + S_R^2/(m_R + l2).  CART uses l2 = 0, where the score
gain equals the drop in squared error; boosting feeds the negative gradients
as targets.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


@njit(cache=True)
def _splitmix64(state):
    """One SplitMix64 step; returns (new_state, output)."""
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return state, z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def grow_tree(X, t, order, max_depth, min_leaf, max_features, l2, gamma, cart, seed):
    """Grow one tree depth-first.

    ``order[f]`` holds row indices sorted by feature ``f``; it is partitioned
    in place as nodes split, so every node owns the slice ``[start, end)`` of
    every feature's order.  Returns flat node arrays; leaves have feature -1.
    """
    n, p = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, np.int64)

    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    goes_left = np.zeros(n, np.bool_)
    buf = np.empty(n, np.int64)
    feats = np.empty(p, np.int64)
    state = np.uint64(seed)

    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_start[sp]
        e = st_end[sp]
        depth = st_depth[sp]
        m = e - s

        o0 = order[0]
        total = 0.0
        tmin = np.inf
        tmax = -np.inf
        for k in range(s, e):
            v = t[o0[k]]
            total += v
            if v < tmin:
                tmin = v
            if v > tmax:
                tmax = v
        value[node] = total / (m + l2)
        count[node] = m
        if depth >= max_depth or m < 2 * min_leaf or tmin == tmax:
            continue

        for j in range(p):
            feats[j] = j
        best_score = -np.inf
        best_f = -1
        best_thr = 0.0
        informative = 0
        for j in range(p):
            if informative >= max_features:
                break
            if max_features < p:
                state, r = _splitmix64(state)
                pick = j + np.int64(r % np.uint64(p - j))
                tmp = feats[j]
                feats[j] = feats[pick]
                feats[pick] = tmp
            f = feats[j]
            of = order[f]
            if X[of[s], f] == X[of[e - 1], f]:
                continue
            informative += 1
            sl = 0.0
            for k in range(s, e - 1):
                i = of[k]
                sl += t[i]
                nl = k - s + 1
                if nl < min_leaf:
                    continue
                if m - nl < min_leaf:
                    break
                xv = X[i, f]
                xn = X[of[k + 1], f]
                if xv == xn:
                    continue
                sr = total - sl
                score = sl * sl / (nl + l2) + sr * sr / (m - nl + l2)
                if score > best_score or (score == best_score and f < best_f):
                    best_score = score
                    best_f = f
                    mid = 0.5 * (xv + xn)
                    best_thr = mid if mid < xn else xv

        if best_f < 0:
            continue
        gain = 0.5 * (best_score - total * total / (m + l2)) - gamma
        if not cart and gain <= 0.0:
            continue

        of = order[best_f]
        nl = 0
        for k in range(s, e):
            i = of[k]
            gl = X[i, best_f] <= best_thr
            goes_left[i] = gl
            if gl:
                nl += 1
        for g in range(p):
            og = order[g]
            a = s
            b = 0
            for k in range(s, e):
                i = og[k]
                if goes_left[i]:
                    og[a] = i
                    a += 1
                else:
                    buf[b] = i
                    b += 1
            for k in range(b):
                og[a + k] = buf[k]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lid
        right[node] = rid

        st_node[sp] = rid
        st_start[sp] = s + nl
        st_end[sp] = e
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lid
        st_start[sp] = s
        st_end[sp] = s + nl
        st_depth[sp] = depth + 1
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), count[:n_nodes].copy())


@njit(cache=True, nogil=True)
def apply_tree(X, feature, threshold, left, right):
    """Leaf index reached by every row of ``X``."""
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out
