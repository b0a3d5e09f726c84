"""Compiled inner loops over flat edge lists (src, dst, cost, steps)."""
import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True)
def _pred_cycle(pred, src, V, stamp):
    """Return one edge of a cycle in the predecessor graph, or -1."""
    for s in range(V):
        stamp[s] = -1
    for start in range(V):
        if stamp[start] != -1:
            continue
        v = start
        while v != -1 and stamp[v] == -1:
            stamp[v] = start
            e = pred[v]
            if e < 0:
                v = -1
            else:
                v = src[e]
        if v != -1 and stamp[v] == start:
            return pred[v]
    return -1


@njit(cache=True)
def _walk_cycle(pred, src, e0):
    out = []
    e = e0
    while True:
        out.append(e)
        e = pred[src[e]]
        if e == e0:
            break
    return out


@njit(cache=True)
def negative_cycle(src, dst, cost, V, tiny, max_passes):
    """Bellman-Ford from a virtual source; returns (edges of a negative cycle, passes).

    An empty edge list certifies that no cycle has cost below about ``-tiny``
    per edge.
    """
    E = src.shape[0]
    dist = np.zeros(V)
    pred = -np.ones(V, dtype=np.int64)
    stamp = np.empty(V, dtype=np.int64)
    for it in range(max_passes):
        changed = False
        for e in range(E):
            nd = dist[src[e]] + cost[e]
            if nd < dist[dst[e]] - tiny:
                dist[dst[e]] = nd
                pred[dst[e]] = e
                changed = True
        if not changed:
            return np.empty(0, dtype=np.int64), it + 1
        e0 = _pred_cycle(pred, src, V, stamp)
        if e0 >= 0:
            cyc = _walk_cycle(pred, src, e0)
            tot = 0.0
            for e in cyc:
                tot += cost[e]
            if tot < 0.0:
                return np.array(cyc[::-1], dtype=np.int64), it + 1
    # still relaxing after max_passes: a negative cycle must exist
    e0 = _pred_cycle(pred, src, V, stamp)
    if e0 >= 0:
        return np.array(_walk_cycle(pred, src, e0)[::-1], dtype=np.int64), max_passes
    return -np.ones(1, dtype=np.int64), max_passes


@njit(cache=True)
def shortest_paths(src, dst, cost, V, source, tiny, max_passes):
    """Single-source costs of nonempty walks out of ``source``.

    Returns (dist, pred_edge, converged).  ``dist[source]`` is the cheapest
    closed walk through ``source``.
    """
    E = src.shape[0]
    dist = np.full(V, INF)
    pred = -np.ones(V, dtype=np.int64)
    for e in range(E):
        if src[e] == source and cost[e] < dist[dst[e]]:
            dist[dst[e]] = cost[e]
            pred[dst[e]] = e
    for it in range(max_passes):
        changed = False
        for e in range(E):
            du = dist[src[e]]
            if du == INF:
                continue
            nd = du + cost[e]
            if nd < dist[dst[e]] - tiny:
                dist[dst[e]] = nd
                pred[dst[e]] = e
                changed = True
        if not changed:
            return dist, pred, True
    return dist, pred, False


@njit(cache=True)
def min_plus(src, dst, cost, u, V):
    """One Lax-Oleinik step ``(T u)(y) = min_x u(x) + cost(x, y)``."""
    out = np.full(V, INF)
    for e in range(src.shape[0]):
        nd = u[src[e]] + cost[e]
        if nd < out[dst[e]]:
            out[dst[e]] = nd
    return out


@njit(cache=True)
def _karp_layer(src, dst, w, steps, ring, k, R, V):
    cur = ring[k % R]
    for v in range(V):
        cur[v] = INF
    for e in range(src.shape[0]):
        t = steps[e]
        if t > k:
            continue
        prev = ring[(k - t) % R][src[e]]
        if prev == INF:
            continue
        nd = prev + w[e]
        if nd < cur[dst[e]]:
            cur[dst[e]] = nd


@njit(cache=True)
def karp_min_ratio(src, dst, w, steps, V, J):
    """Minimum of cost/steps over cycles, for integer step counts in [1, J].

    Walks are indexed by total step count.  Each horizon ``H`` in
    ``[N - J + 1, N]`` plays the role of Karp's ``n``; the long-walk
    horizons all contain a cycle, so the classical min-max formula holds
    when the minimum also runs over horizons.  Two sweeps keep memory at
    O(J V).
    """
    N = J * (V + 1) - 1
    R = J + 1
    ring = np.full((R, V), INF)
    for v in range(V):
        ring[0][v] = 0.0
    top = np.full((J, V), INF)  # top[i] = D_{N - i}
    for k in range(1, N + 1):
        _karp_layer(src, dst, w, steps, ring, k, R, V)
        if k >= N - J + 1:
            top[N - k] = ring[k % R]
    best = np.full((J, V), -INF)
    ring[:] = INF
    for v in range(V):
        ring[0][v] = 0.0
    for k in range(0, N):
        if k > 0:
            _karp_layer(src, dst, w, steps, ring, k, R, V)
        cur = ring[k % R]
        for i in range(J):
            H = N - i
            if k >= H:
                continue
            for v in range(V):
                if cur[v] == INF or top[i][v] == INF:
                    continue
                r = (top[i][v] - cur[v]) / (H - k)
                if r > best[i][v]:
                    best[i][v] = r
    lam = INF
    for i in range(J):
        for v in range(V):
            if top[i][v] < INF and best[i][v] < lam:
                lam = best[i][v]
    return lam


@njit(cache=True)
def _curl(kf, cc, cs, x1, x2):
    """Magnetic field and its gradient from a flat term list."""
    w = 0.0
    g1 = 0.0
    g2 = 0.0
    tp = 2.0 * np.pi
    for i in range(kf.shape[0]):
        th = tp * (kf[i, 0] * x1 + kf[i, 1] * x2)
        c = np.cos(th)
        s = np.sin(th)
        w += cc[i] * c + cs[i] * s
        d = tp * (cs[i] * c - cc[i] * s)
        g1 += d * kf[i, 0]
        g2 += d * kf[i, 1]
    return w, g1, g2


@njit(cache=True)
def _rhs(kf, cc, cs, y, with_var, out):
    w, g1, g2 = _curl(kf, cc, cs, y[0], y[1])
    v1 = y[2]
    v2 = y[3]
    out[0] = v1
    out[1] = v2
    out[2] = w * v2
    out[3] = -w * v1
    if with_var:
        # columns of the 4x4 tangent matrix stored after the state
        for j in range(4):
            dx1 = y[4 + j]
            dx2 = y[8 + j]
            dv1 = y[12 + j]
            dv2 = y[16 + j]
            dw = g1 * dx1 + g2 * dx2
            out[4 + j] = dv1
            out[8 + j] = dv2
            out[12 + j] = dw * v2 + w * dv2
            out[16 + j] = -dw * v1 - w * dv1


@njit(cache=True)
def rk4(kf, cc, cs, y0, h, steps, with_var, v_cap):
    """Fixed-step RK4; returns (trajectory of the first 4 components, final state, ok)."""
    m = y0.shape[0]
    traj = np.empty((steps + 1, 4))
    y = y0.copy()
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    traj[0] = y[:4]
    for n in range(steps):
        _rhs(kf, cc, cs, y, with_var, k1)
        for i in range(m):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        _rhs(kf, cc, cs, tmp, with_var, k2)
        for i in range(m):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        _rhs(kf, cc, cs, tmp, with_var, k3)
        for i in range(m):
            tmp[i] = y[i] + h * k3[i]
        _rhs(kf, cc, cs, tmp, with_var, k4)
        for i in range(m):
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        traj[n + 1] = y[:4]
        if y[2] * y[2] + y[3] * y[3] > v_cap * v_cap:
            return traj[: n + 2], y, False
    return traj, y, True
