"""Max-flow kernel: augmenting-path search with reused S/T trees.

Grow/augment/adopt search in the style of Boykov-Kolmogorov: two search
trees rooted at the terminals persist across augmentations; saturated
tree arcs create orphans that are re-adopted or freed.

Representation: arcs come in sister pairs (arc ``a ^ 1`` reverses arc
``a``); per-node terminal capacity ``tr_cap`` merges the two t-links
(positive = residual from source, negative = residual to sink).
"""

import numpy as np
from numba import njit

P_NONE = -1      # free node, no parent
P_TERMINAL = -2  # parent is the terminal itself
P_ORPHAN = -3    # waiting for adoption

_TREE_FREE = 0
_TREE_S = 1
_TREE_T = 2


@njit(cache=True)
def build_adjacency(n_nodes, tails):
    """Per-node singly linked arc lists: returns (first_arc, next_arc)."""
    n_arcs = tails.size
    first = np.full(n_nodes, -1, dtype=np.int64)
    nxt = np.empty(n_arcs, dtype=np.int64)
    for a in range(n_arcs):
        t = tails[a]
        nxt[a] = first[t]
        first[t] = a
    return first, nxt


@njit(cache=True)
def bk_maxflow(first, nxt, head, rcap, tr_cap):
    """Push the maximum flow between the merged terminals.

    Mutates rcap/tr_cap to the residual state and returns the flow added
    (the caller accounts separately for flow absorbed when merging t-links).
    """
    n = first.size
    tree = np.zeros(n, dtype=np.uint8)
    parent_arc = np.full(n, P_NONE, dtype=np.int64)
    dist = np.zeros(n, dtype=np.int64)
    ts = np.zeros(n, dtype=np.int64)
    path_buf = np.empty(n, dtype=np.int64)

    qcap = n + 1
    active = np.empty(qcap, dtype=np.int64)
    a_head = 0
    a_tail = 0
    a_count = 0
    in_active = np.zeros(n, dtype=np.uint8)

    orphans = np.empty(qcap, dtype=np.int64)
    o_head = 0
    o_tail = 0
    o_count = 0

    for v in range(n):
        if tr_cap[v] > 0.0:
            tree[v] = _TREE_S
        elif tr_cap[v] < 0.0:
            tree[v] = _TREE_T
        else:
            continue
        parent_arc[v] = P_TERMINAL
        dist[v] = 1
        active[a_tail] = v
        a_tail = (a_tail + 1) % qcap
        a_count += 1
        in_active[v] = 1

    flow = 0.0
    time = 0
    while True:
        # -- growth: expand both trees until they touch --
        conn = -1  # arc from an S-tree node into a T-tree node
        while a_count > 0:
            p = active[a_head]
            a_head = (a_head + 1) % qcap
            a_count -= 1
            in_active[p] = 0
            tp = tree[p]
            if tp == _TREE_FREE:
                continue
            a = first[p]
            while a != -1:
                if tp == _TREE_S:
                    res = rcap[a]
                else:
                    res = rcap[a ^ 1]  # T tree grows along arcs into p
                if res > 0.0:
                    j = head[a]
                    tj = tree[j]
                    if tj == _TREE_FREE:
                        tree[j] = tp
                        parent_arc[j] = a if tp == _TREE_S else a ^ 1
                        dist[j] = dist[p] + 1
                        ts[j] = ts[p]
                        if in_active[j] == 0:
                            active[a_tail] = j
                            a_tail = (a_tail + 1) % qcap
                            a_count += 1
                            in_active[j] = 1
                    elif tj != tp:
                        conn = a if tp == _TREE_S else a ^ 1
                        break
                a = nxt[a]
            if conn != -1:
                # p keeps unscanned arcs; requeue it and augment now
                if in_active[p] == 0:
                    active[a_tail] = p
                    a_tail = (a_tail + 1) % qcap
                    a_count += 1
                    in_active[p] = 1
                break
        if conn == -1:
            break  # no augmenting path remains

        time += 1

        # -- augment: bottleneck over source path, conn arc, sink path --
        u = head[conn ^ 1]
        v = head[conn]
        f = rcap[conn]
        w = u
        while parent_arc[w] != P_TERMINAL:
            pa = parent_arc[w]  # arc parent -> w
            if rcap[pa] < f:
                f = rcap[pa]
            w = head[pa ^ 1]
        if tr_cap[w] < f:
            f = tr_cap[w]
        w = v
        while parent_arc[w] != P_TERMINAL:
            pa = parent_arc[w]  # arc w -> parent
            if rcap[pa] < f:
                f = rcap[pa]
            w = head[pa]
        if -tr_cap[w] < f:
            f = -tr_cap[w]

        rcap[conn] -= f
        rcap[conn ^ 1] += f
        w = u
        while parent_arc[w] != P_TERMINAL:
            pa = parent_arc[w]
            rcap[pa] -= f
            rcap[pa ^ 1] += f
            nw = head[pa ^ 1]
            if rcap[pa] == 0.0:
                parent_arc[w] = P_ORPHAN
                orphans[o_tail] = w
                o_tail = (o_tail + 1) % qcap
                o_count += 1
            w = nw
        tr_cap[w] -= f
        if tr_cap[w] == 0.0:
            parent_arc[w] = P_ORPHAN
            orphans[o_tail] = w
            o_tail = (o_tail + 1) % qcap
            o_count += 1
        w = v
        while parent_arc[w] != P_TERMINAL:
            pa = parent_arc[w]
            rcap[pa] -= f
            rcap[pa ^ 1] += f
            nw = head[pa]
            if rcap[pa] == 0.0:
                parent_arc[w] = P_ORPHAN
                orphans[o_tail] = w
                o_tail = (o_tail + 1) % qcap
                o_count += 1
            w = nw
        tr_cap[w] += f
        if tr_cap[w] == 0.0:
            parent_arc[w] = P_ORPHAN
            orphans[o_tail] = w
            o_tail = (o_tail + 1) % qcap
            o_count += 1
        flow += f

        # -- adoption: re-hang or free every orphan --
        while o_count > 0:
            vo = orphans[o_head]
            o_head = (o_head + 1) % qcap
            o_count -= 1
            tv = tree[vo]

            best_arc = -1
            best_dist = np.int64(2**62)
            a = first[vo]
            while a != -1:
                j = head[a]
                if tree[j] == tv:
                    if tv == _TREE_S:
                        res = rcap[a ^ 1]  # arc j -> vo
                    else:
                        res = rcap[a]      # arc vo -> j
                    if res > 0.0:
                        # validate j's origin, stamping distances on the way
                        w = j
                        plen = 0
                        valid = False
                        while True:
                            if ts[w] == time:
                                base = dist[w]
                                valid = True
                                break
                            pa = parent_arc[w]
                            if pa == P_TERMINAL:
                                ts[w] = time
                                base = dist[w]
                                valid = True
                                break
                            if pa < 0:  # orphan or free ancestor
                                break
                            path_buf[plen] = w
                            plen += 1
                            w = head[pa ^ 1] if tv == _TREE_S else head[pa]
                        if valid:
                            for idx in range(plen - 1, -1, -1):
                                base += 1
                                nd = path_buf[idx]
                                dist[nd] = base
                                ts[nd] = time
                            if dist[j] < best_dist:
                                best_dist = dist[j]
                                best_arc = a
                a = nxt[a]

            if best_arc != -1:
                parent_arc[vo] = (best_arc ^ 1) if tv == _TREE_S else best_arc
                dist[vo] = best_dist + 1
                ts[vo] = time
            else:
                # vo leaves the tree: wake potential parents, orphan children
                a = first[vo]
                while a != -1:
                    j = head[a]
                    if tree[j] == tv:
                        if tv == _TREE_S:
                            res = rcap[a ^ 1]
                        else:
                            res = rcap[a]
                        if res > 0.0 and in_active[j] == 0:
                            active[a_tail] = j
                            a_tail = (a_tail + 1) % qcap
                            a_count += 1
                            in_active[j] = 1
                        pa_j = parent_arc[j]
                        if pa_j >= 0:
                            par = head[pa_j ^ 1] if tv == _TREE_S else head[pa_j]
                            if par == vo:
                                parent_arc[j] = P_ORPHAN
                                orphans[o_tail] = j
                                o_tail = (o_tail + 1) % qcap
                                o_count += 1
                    a = nxt[a]
                tree[vo] = _TREE_FREE
                parent_arc[vo] = P_NONE
    return flow


@njit(cache=True)
def residual_source_side(first, nxt, head, rcap, tr_cap):
    """Nodes reachable from the source in the residual graph (byte mask)."""
    n = first.size
    seen = np.zeros(n, dtype=np.uint8)
    stack = np.empty(n, dtype=np.int64)
    top = 0
    for v in range(n):
        if tr_cap[v] > 0.0:
            seen[v] = 1
            stack[top] = v
            top += 1
    while top > 0:
        top -= 1
        v = stack[top]
        a = first[v]
        while a != -1:
            if rcap[a] > 0.0:
                j = head[a]
                if seen[j] == 0:
                    seen[j] = 1
                    stack[top] = j
                    top += 1
            a = nxt[a]
    return seen
