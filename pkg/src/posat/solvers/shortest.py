"""One-to-all shortest paths and all-or-nothing loading."""

from __future__ import annotations

from collections import deque

import numpy as np

from ..errors import DisconnectedOD, NegativeArcTime
from ..network import Instance, Network

_TIGHT_RTOL = 1e-12


def _distances(net: Network, times: np.ndarray, o: int) -> np.ndarray:
    # label-correcting with a FIFO deque
    dist = [np.inf] * net.n_nodes
    dist[o] = 0.0
    in_queue = [False] * net.n_nodes
    in_queue[o] = True
    queue = deque([o])
    head, out_arcs = net.head_list, net.out_arcs
    t = times.tolist()
    while queue:
        i = queue.popleft()
        in_queue[i] = False
        di = dist[i]
        for a in out_arcs[i]:
            j = head[a]
            nd = di + t[a]
            if nd < dist[j]:
                dist[j] = nd
                if not in_queue[j]:
                    in_queue[j] = True
                    queue.append(j)
    return np.array(dist)


def _tree(net: Network, times: np.ndarray, dist: np.ndarray, o: int) -> np.ndarray:
    """Predecessor arcs on tight arcs: fewest hops first, then smallest arc id.

    Working on hop counts rather than raw distances keeps the tree acyclic
    when zero-time arcs create ties.
    """
    dt, dh = dist[net.tail], dist[net.head]
    with np.errstate(invalid="ignore"):
        tight = (dt + times <= dh + _TIGHT_RTOL * np.maximum(1.0, np.abs(dh))) & np.isfinite(dt)
    tight = tight.tolist()
    head, tail = net.head_list, net.tail_list
    hops = [-1] * net.n_nodes
    hops[o] = 0
    pred = [-1] * net.n_nodes
    frontier = [o]
    while frontier:
        nxt = []
        for i in frontier:
            for a in net.out_arcs[i]:
                if tight[a]:
                    j = head[a]
                    if hops[j] < 0:
                        hops[j] = hops[i] + 1
                        nxt.append(j)
        for j in nxt:
            hj = hops[j] - 1
            for a in net.in_arcs[j]:  # sorted by arc id
                if tight[a] and hops[tail[a]] == hj:
                    pred[j] = a
                    break
        frontier = nxt
    return np.array(pred, dtype=np.int64)


def shortest_paths(network: Network, times, origin, *, index: bool = False):
    """Distances from ``origin`` to every node and the predecessor arc of each.

    ``origin`` is a node id (or a node index with ``index=True``).
    Unreachable nodes get distance ``inf`` and predecessor -1.
    """
    times = np.asarray(times, dtype=float)
    if times.shape != (network.n_arcs,):
        raise ValueError(f"expected {network.n_arcs} arc times, got shape {times.shape}")
    if (times < 0).any() or np.isnan(times).any():
        a = int(np.nonzero(~(times >= 0))[0][0])
        raise NegativeArcTime(f"arc {a} has time {times[a]!r}")
    o = int(origin) if index else network.index_of(origin)
    dist = _distances(network, times, o)
    return dist, _tree(network, times, dist, o)


def trace_path(network: Network, pred: np.ndarray, o: int, d: int) -> tuple[int, ...] | None:
    """Arc sequence from node index ``o`` to ``d`` along a predecessor tree."""
    path = []
    node = d
    while node != o:
        a = int(pred[node])
        if a < 0:
            return None
        path.append(a)
        node = network.tail_list[a]
    return tuple(reversed(path))


def od_shortest_path(instance: Instance, w: int, times: np.ndarray):
    """(cost, path) of a shortest path for OD ``w``; raises DisconnectedOD."""
    net = instance.network
    o, d = int(instance.od_origin[w]), int(instance.od_dest[w])
    dist, pred = shortest_paths(net, times, o, index=True)
    if not np.isfinite(dist[d]):
        org, dst = instance.demands.entries[w][:2]
        raise DisconnectedOD(w, org, dst)
    return float(dist[d]), trace_path(net, pred, o, d)


def all_or_nothing(instance: Instance, times) -> tuple[np.ndarray, np.ndarray]:
    """Load every OD on one shortest path.

    ``times`` is either one arc-time vector shared by all classes or a
    ``(n_od, n_arcs)`` array of class-specific (perceived) times.
    Returns the class flow and the per-OD shortest costs.
    """
    times = np.asarray(times, dtype=float)
    per_class = times.ndim == 2
    x = np.zeros((instance.n_od, instance.n_arcs))
    mu = np.zeros(instance.n_od)
    cache: dict[int, tuple] = {}
    net = instance.network
    for w in range(instance.n_od):
        o, d = int(instance.od_origin[w]), int(instance.od_dest[w])
        if per_class:
            dist, pred = shortest_paths(net, times[w], o, index=True)
        else:
            if o not in cache:
                cache[o] = shortest_paths(net, times, o, index=True)
            dist, pred = cache[o]
        if not np.isfinite(dist[d]):
            org, dst = instance.demands.entries[w][:2]
            raise DisconnectedOD(w, org, dst)
        mu[w] = dist[d]
        x[w, list(trace_path(net, pred, o, d))] = instance.q[w]
    return x, mu


def shortest_costs(instance: Instance, times) -> np.ndarray:
    """Per-OD shortest-path cost ``mu_w`` (shared or class-specific times)."""
    times = np.asarray(times, dtype=float)
    per_class = times.ndim == 2
    mu = np.zeros(instance.n_od)
    cache: dict[int, np.ndarray] = {}
    net = instance.network
    for w in range(instance.n_od):
        o, d = int(instance.od_origin[w]), int(instance.od_dest[w])
        if per_class:
            dist = _checked_distances(net, times[w], o)
        else:
            if o not in cache:
                cache[o] = _checked_distances(net, times, o)
            dist = cache[o]
        if not np.isfinite(dist[d]):
            org, dst = instance.demands.entries[w][:2]
            raise DisconnectedOD(w, org, dst)
        mu[w] = dist[d]
    return mu


def _checked_distances(net: Network, times: np.ndarray, o: int) -> np.ndarray:
    if (times < 0).any() or np.isnan(times).any():
        raise NegativeArcTime("arc times must be nonnegative")
    return _distances(net, times, o)
