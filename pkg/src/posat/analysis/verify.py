"""Certificates for satisficing equilibria and the aggregate necessary condition."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import CyclicResidual, NegativeKappa
from ..network import Instance, aggregate_to_arcflow, check_classflow, decompose_to_paths
from ..solvers.shortest import shortest_costs

CERTIFIED = "certified"
DECOMPOSITION_ONLY = "decomposition_only"
FAILED = "failed"


@dataclass
class ODCheck:
    od: int
    max_used_cost: float
    shortest: float
    excess: float  # ratio - 1 (multiplicative) or cost difference (additive)
    cyclic: bool = False
    zero_shortest_path: bool = False


@dataclass
class SatisficingVerdict:
    status: str
    threshold: float  # kappa or E being tested
    smallest: float  # smallest kappa (or E) certifying the flow
    per_od: list = field(default_factory=list)
    mode: str = "multiplicative"

    @property
    def passed(self) -> bool:
        return self.status in (CERTIFIED, DECOMPOSITION_ONLY)

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    @property
    def zero_shortest_path(self) -> list[int]:
        return [c.od for c in self.per_od if c.zero_shortest_path]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "mode": self.mode,
            "threshold": self.threshold,
            "smallest": self.smallest,
            "zero_shortest_path": self.zero_shortest_path,
        }


def _topo_order(net, used: np.ndarray, origin: int):
    """Topological order of nodes reachable from ``origin`` over used arcs, or None if cyclic."""
    reach = {origin}
    stack = [origin]
    while stack:
        i = stack.pop()
        for a in net.out_arcs[i]:
            if used[a]:
                j = net.head_list[a]
                if j not in reach:
                    reach.add(j)
                    stack.append(j)
    indeg = {i: 0 for i in reach}
    for a in np.nonzero(used)[0]:
        if net.tail_list[a] in reach:
            indeg[net.head_list[a]] += 1
    order = []
    ready = sorted(i for i, d in indeg.items() if d == 0)
    while ready:
        i = ready.pop()
        order.append(i)
        for a in net.out_arcs[i]:
            if used[a]:
                j = net.head_list[a]
                indeg[j] -= 1
                if indeg[j] == 0:
                    ready.append(j)
    if len(order) < len(reach):
        return None
    return order


def _longest_used_path(net, used, t, origin, dest):
    """Max cost over origin-dest paths in the used subgraph; None when cyclic."""
    order = _topo_order(net, used, origin)
    if order is None:
        return None
    best = {origin: 0.0}
    for i in order:
        if i not in best:
            continue
        for a in net.out_arcs[i]:
            if used[a]:
                j = net.head_list[a]
                cand = best[i] + t[a]
                if cand > best.get(j, -np.inf):
                    best[j] = cand
    return best.get(dest, np.nan)


def _used_costs(instance: Instance, x: np.ndarray, flow_tol):
    """(max used path cost, cyclic flag) per OD plus true shortest costs."""
    net = instance.network
    v = aggregate_to_arcflow(x)
    t = instance.cost.times(v)
    mu = shortest_costs(instance, t)
    out = []
    decomposition = None
    for w in range(instance.n_od):
        ftol = flow_tol if flow_tol is not None else 1e-9 * max(1.0, instance.q[w])
        used = x[w] > ftol
        o, d = int(instance.od_origin[w]), int(instance.od_dest[w])
        top = _longest_used_path(net, used, t, o, d)
        cyclic = top is None
        if cyclic:
            if decomposition is None:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", CyclicResidual)
                    decomposition = decompose_to_paths(instance, x, flow_tol)
            costs = [float(t[list(p)].sum()) for ww, p, f in decomposition.entries if ww == w]
            top = max(costs) if costs else np.nan
        out.append((top, cyclic))
    return out, mu


def verify_msatue(instance: Instance, x, kappa: float, tol: float = 1e-6, flow_tol: float | None = None) -> SatisficingVerdict:
    """Check that every used path costs at most ``(1 + kappa)`` times the shortest.

    For an acyclic used subgraph the longest path in it bounds every path
    of every decomposition, so a pass certifies the flow itself. A cyclic
    used subgraph is checked on one decomposition only.
    """
    if kappa < 0:
        raise NegativeKappa(f"kappa must be >= 0, got {kappa}")
    x = np.asarray(x, dtype=float)
    check_classflow(instance, x, rtol=max(1e-9, tol * 1e-3))
    costs, mu = _used_costs(instance, x, flow_tol)
    per_od = []
    smallest = 0.0
    any_cyclic = False
    for w, ((top, cyclic), m) in enumerate(zip(costs, mu)):
        any_cyclic |= cyclic
        if np.isnan(top):
            per_od.append(ODCheck(w, top, m, np.inf, cyclic))
            smallest = np.inf
            continue
        scale = max(abs(top), abs(m), 1e-300)
        if m <= 1e-12 * scale or m <= 0.0:
            if top <= 1e-12 * max(scale, 1.0) or top <= 0.0:
                excess = 0.0
                per_od.append(ODCheck(w, top, m, excess, cyclic))
            else:
                per_od.append(ODCheck(w, top, m, np.inf, cyclic, zero_shortest_path=True))
                smallest = np.inf
            continue
        excess = max(top / m - 1.0, 0.0)
        per_od.append(ODCheck(w, top, m, excess, cyclic))
        smallest = max(smallest, excess)
    if smallest <= kappa + tol:
        status = DECOMPOSITION_ONLY if any_cyclic else CERTIFIED
    else:
        status = FAILED
    return SatisficingVerdict(status, float(kappa), float(smallest), per_od)


def verify_asatue(instance: Instance, x, E: float, tol: float = 1e-6, flow_tol: float | None = None) -> SatisficingVerdict:
    """Check that every used path costs at most ``E`` more than the shortest.

    ``tol`` is relative to ``max(1, largest shortest-path cost)``.
    """
    if E < 0:
        raise ValueError(f"E must be >= 0, got {E}")
    x = np.asarray(x, dtype=float)
    check_classflow(instance, x, rtol=max(1e-9, tol * 1e-3))
    costs, mu = _used_costs(instance, x, flow_tol)
    per_od = []
    smallest = 0.0
    any_cyclic = False
    for w, ((top, cyclic), m) in enumerate(zip(costs, mu)):
        any_cyclic |= cyclic
        excess = np.inf if np.isnan(top) else max(top - m, 0.0)
        per_od.append(ODCheck(w, top, m, excess, cyclic))
        smallest = max(smallest, excess)
    scale = max(1.0, float(np.max(mu, initial=0.0)))
    if smallest <= E + tol * scale:
        status = DECOMPOSITION_ONLY if any_cyclic else CERTIFIED
    else:
        status = FAILED
    return SatisficingVerdict(status, float(E), float(smallest), per_od, mode="additive")


@dataclass
class NecessaryCondition:
    holds: bool
    slack: float  # (1 + kappa) sum_w Q_w mu_w - Z


def check_necessary_condition(instance: Instance, v, kappa: float, tol: float = 1e-9) -> NecessaryCondition:
    """Aggregate condition every ``kappa``-satisficing flow must meet.

    The minimum over feasible ``y`` of ``t(v) . ((1+kappa) y - v)`` is
    attained at an all-or-nothing load, so it equals
    ``(1+kappa) sum_w Q_w mu_w(t(v)) - Z(v)``. Holds iff the slack is at
    least ``-tol * max(1, Z)``.
    """
    if kappa < 0:
        raise NegativeKappa(f"kappa must be >= 0, got {kappa}")
    v = np.asarray(v, dtype=float)
    t = instance.cost.times(v)
    z = float(np.dot(t, v))
    mu = shortest_costs(instance, t)
    slack = (1.0 + kappa) * float(np.dot(instance.q, mu)) - z
    return NecessaryCondition(slack >= -tol * max(1.0, z), slack)
