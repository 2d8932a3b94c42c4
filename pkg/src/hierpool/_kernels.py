"""Compiled inner loops for posting-list storage and scoring.

Every scorer accumulates min(q_w, p_w) in ascending word order per node, so
the inverted-index path and the direct path produce bit-identical scores.
"""
import numpy as np
from numba import njit

_INITIAL_CAP = 4


@njit(cache=True)
def postings_append(start, length, cap, pool_node, pool_w, used, node, ids, ws):
    """Append ``node`` to the posting list of every word in ``ids``.

    Lists live in one pool; a full list is moved to the end of the pool with
    doubled capacity. Returns the (possibly reallocated) pool and new fill.
    """
    for k in range(ids.size):
        w = ids[k]
        if length[w] == cap[w]:
            new_cap = _INITIAL_CAP if cap[w] == 0 else 2 * cap[w]
            if used + new_cap > pool_node.size:
                size = max(2 * pool_node.size, used + new_cap)
                grown_node = np.empty(size, np.int64)
                grown_w = np.empty(size, np.float64)
                grown_node[:used] = pool_node[:used]
                grown_w[:used] = pool_w[:used]
                pool_node = grown_node
                pool_w = grown_w
            s = start[w]
            for j in range(length[w]):
                pool_node[used + j] = pool_node[s + j]
                pool_w[used + j] = pool_w[s + j]
            start[w] = used
            cap[w] = new_cap
            used += new_cap
        pos = start[w] + length[w]
        pool_node[pos] = node
        pool_w[pos] = ws[k]
        length[w] += 1
    return pool_node, pool_w, used


@njit(cache=True)
def score_inverted(q_ids, q_w, start, length, pool_node, pool_w, acc, touched, mask, min_score):
    """Score every node sharing a word with the query, keep those >= min_score.

    ``acc`` is a zeroed scratch accumulator (length >= node count) and is
    zeroed again before returning; ``touched`` is scratch of the same length.
    ``mask`` restricts accumulation to candidate nodes; pass an empty array
    for no restriction. Returns (nodes, scores) in first-touch order.
    """
    use_mask = mask.size > 0
    n_touched = 0
    for k in range(q_ids.size):
        w = q_ids[k]
        if w >= start.size:
            continue
        qv = q_w[k]
        s = start[w]
        for j in range(s, s + length[w]):
            node = pool_node[j]
            if use_mask and not mask[node]:
                continue
            pv = pool_w[j]
            if acc[node] == 0.0:
                touched[n_touched] = node
                n_touched += 1
            acc[node] += qv if qv < pv else pv
    nodes = np.empty(n_touched, np.int64)
    scores = np.empty(n_touched)
    n_out = 0
    for i in range(n_touched):
        node = touched[i]
        a = acc[node]
        acc[node] = 0.0
        if a >= min_score:
            nodes[n_out] = node
            scores[n_out] = a
            n_out += 1
    return nodes[:n_out], scores[:n_out]


@njit(cache=True)
def score_direct(q_ids, q_w, dense, cand, indptr, words, weights, min_score):
    """Score the candidate nodes by walking their own histograms.

    ``dense`` is zeroed scratch of vocabulary length, restored on return.
    Returns (nodes, scores) for candidates scoring > 0 and >= min_score.
    """
    n_words = dense.size
    for k in range(q_ids.size):
        if q_ids[k] < n_words:
            dense[q_ids[k]] = q_w[k]
    nodes = np.empty(cand.size, np.int64)
    out = np.empty(cand.size)
    n_out = 0
    for i in range(cand.size):
        c = cand[i]
        s = 0.0
        for j in range(indptr[c], indptr[c + 1]):
            wd = words[j]
            if wd >= n_words:
                continue
            qv = dense[wd]
            if qv > 0.0:
                pv = weights[j]
                s += qv if qv < pv else pv
        if s > 0.0 and s >= min_score:
            nodes[n_out] = c
            out[n_out] = s
            n_out += 1
    for k in range(q_ids.size):
        if q_ids[k] < n_words:
            dense[q_ids[k]] = 0.0
    return nodes[:n_out], out[:n_out]


@njit(cache=True)
def score_subset(q_ids, q_w, start, length, pool_node, pool_w, acc, touched, mask,
                 dense, cand, indptr, words, weights, min_score):
    """Score only ``cand`` nodes by whichever path touches fewer entries.

    Posting traversal restricted by ``mask`` (zeroed scratch, node-count
    long, restored on return) or a direct walk of the candidates' own
    histograms. Both accumulate in ascending word order, so scores agree
    bit for bit.
    """
    postings = 0
    for k in range(q_ids.size):
        if q_ids[k] < start.size:
            postings += length[q_ids[k]]
    direct = 0
    for i in range(cand.size):
        direct += indptr[cand[i] + 1] - indptr[cand[i]]
    if postings <= direct:
        for i in range(cand.size):
            mask[cand[i]] = True
        nodes, scores = score_inverted(q_ids, q_w, start, length, pool_node, pool_w,
                                       acc, touched, mask, min_score)
        for i in range(cand.size):
            mask[cand[i]] = False
        return nodes, scores
    return score_direct(q_ids, q_w, dense, cand, indptr, words, weights, min_score)


@njit(cache=True)
def gather_children(parents, child_ptr, child_idx, extra_lo, extra_hi):
    """Children of ``parents`` followed by the node range [extra_lo, extra_hi)."""
    total = extra_hi - extra_lo
    for i in range(parents.size):
        p = parents[i]
        total += child_ptr[p + 1] - child_ptr[p]
    out = np.empty(total, np.int64)
    k = 0
    for i in range(parents.size):
        p = parents[i]
        for j in range(child_ptr[p], child_ptr[p + 1]):
            out[k] = child_idx[j]
            k += 1
    for node in range(extra_lo, extra_hi):
        out[k] = node
        k += 1
    return out
