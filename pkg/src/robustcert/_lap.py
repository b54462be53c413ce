"""Dense linear assignment by shortest augmenting paths (Jonker-Volgenant style).

Column reduction seeds a partial assignment with feasible duals; every row
left free is then inserted by one augmentation. A Dijkstra sweep over reduced costs
``c[i, j] - u[i] - v[j]`` finds the cheapest augmenting path to a free column;
the duals are then shifted so every reduced cost stays nonnegative and matched
pairs stay tight. The final ``(u, v)`` is an optimal dual certificate.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _column_reduction(cost, col4row, row4col, v):
    """Column minima as v, then hand each singly-claimed row its second best."""
    n = cost.shape[0]
    for j in range(n):
        v[j] = np.inf
    for i in range(n):
        for j in range(n):
            if cost[i, j] < v[j]:
                v[j] = cost[i, j]
                row4col[j] = i
    unique = np.ones(n, dtype=np.bool_)
    for j in range(n - 1, -1, -1):
        i = row4col[j]
        if col4row[i] < 0:
            col4row[i] = j
        else:
            unique[i] = False
            row4col[j] = -1
    free = np.empty(n, dtype=np.int64)
    nfree = 0
    for i in range(n):
        if col4row[i] < 0:
            free[nfree] = i
            nfree += 1
        elif unique[i] and n > 1:
            j = col4row[i]
            low = np.inf
            for j2 in range(n):
                if j2 != j and cost[i, j2] - v[j2] < low:
                    low = cost[i, j2] - v[j2]
            v[j] -= low
    return free, nfree


@njit(cache=True, nogil=True)
def solve_dense(cost):
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    shortest = np.empty(n)
    path = np.empty(n, dtype=np.int64)
    remaining = np.empty(n, dtype=np.int64)
    seen_row = np.zeros(n, dtype=np.bool_)
    seen_col = np.zeros(n, dtype=np.bool_)

    for i in range(n):
        for j in range(n):
            if not np.isfinite(cost[i, j]):
                return col4row, u, v, False
    free, nfree = _column_reduction(cost, col4row, row4col, v)
    for i in range(n):
        if col4row[i] >= 0:
            u[i] = cost[i, col4row[i]] - v[col4row[i]]

    for f in range(nfree):
        cur_row = free[f]
        for j in range(n):
            shortest[j] = np.inf
            path[j] = -1
            remaining[j] = n - j - 1
            seen_row[j] = False
            seen_col[j] = False
        num_remaining = n
        min_val = 0.0
        sink = -1
        i = cur_row
        while sink == -1:
            seen_row[i] = True
            index = -1
            lowest = np.inf
            for it in range(num_remaining):
                j = remaining[it]
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                if shortest[j] < lowest or (shortest[j] == lowest and row4col[j] == -1):
                    lowest = shortest[j]
                    index = it
            min_val = lowest
            if min_val == np.inf:
                return col4row, u, v, False
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            seen_col[j] = True
            num_remaining -= 1
            remaining[index] = remaining[num_remaining]

        u[cur_row] += min_val
        for r in range(n):
            if seen_row[r] and r != cur_row:
                u[r] += min_val - shortest[col4row[r]]
        for c in range(n):
            if seen_col[c]:
                v[c] -= min_val - shortest[c]

        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            tmp = col4row[i]
            col4row[i] = j
            j = tmp
            if i == cur_row:
                break
    return col4row, u, v, True


@njit(cache=True, nogil=True)
def euclidean_cost(a, b):
    n, d = a.shape
    m = b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = a[i, k] - b[j, k]
                s += t * t
            out[i, j] = np.sqrt(s)
    return out
