"""KKT certificate for equilibria with perceived costs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..network import Instance, aggregate_to_arcflow, conservation_residual
from .report import as_lambda
from .shortest import _distances


@dataclass
class KKTCertificate:
    stationarity: float  # max(0, -(lam t + pi_i - pi_j))
    complementarity: float  # max |x * reduced cost|
    conservation: float  # max |outflow - inflow - balance|
    negativity: float  # max(0, -min x)
    tol: float
    relative: bool
    pi: np.ndarray  # (n_od, n_nodes) perceived distances

    @property
    def passed(self) -> bool:
        return max(self.stationarity, self.complementarity, self.conservation, self.negativity) <= self.tol

    def to_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "complementarity": self.complementarity,
            "conservation": self.conservation,
            "negativity": self.negativity,
            "tol": self.tol,
            "relative": self.relative,
            "passed": self.passed,
        }


def reduced_costs(instance: Instance, lam, x) -> tuple[np.ndarray, np.ndarray]:
    """Per-class reduced costs ``lam^w_a t_a + pi^w_tail - pi^w_head`` and potentials."""
    lam = as_lambda(lam, instance.n_od, instance.n_arcs)
    x = np.asarray(x, dtype=float)
    net = instance.network
    t = instance.cost.times(aggregate_to_arcflow(x))
    rc = np.zeros_like(x)
    pi = np.zeros((instance.n_od, net.n_nodes))
    for w in range(instance.n_od):
        c = lam[w] * t
        dist = _distances(net, c, int(instance.od_origin[w]))
        pi[w] = dist
        dt, dh = dist[net.tail], dist[net.head]
        with np.errstate(invalid="ignore"):
            r = c + dt - dh
        # arcs leaving unreachable nodes can carry no flow of this class
        r[~np.isfinite(dt)] = 0.0
        rc[w] = r
    return rc, pi


def kkt_certificate(instance: Instance, lam, x, tol: float = 1e-6, relative: bool = False) -> KKTCertificate:
    """Check the equilibrium conditions of class flow ``x`` under ``lam``.

    Node potentials are the perceived shortest distances. With
    ``relative=True`` cost residuals are divided by ``max(1e-300, max_w mu_w)``,
    complementarity additionally by ``max(1, max_w Q_w)`` and conservation by
    ``max(1, max_w Q_w)``; this makes one tolerance meaningful across
    instance scales.
    """
    x = np.asarray(x, dtype=float)
    rc, pi = reduced_costs(instance, lam, x)
    stat = float(np.max(np.maximum(0.0, -rc), initial=0.0))
    comp = float(np.max(np.abs(x * rc), initial=0.0))
    cons = float(np.max(np.abs(conservation_residual(instance, x)), initial=0.0))
    neg = float(max(0.0, -x.min())) if x.size else 0.0
    if relative:
        dests = pi[np.arange(instance.n_od), instance.od_dest]
        cscale = max(float(np.max(dests, initial=0.0)), 1e-300)
        qscale = max(1.0, float(instance.q.max(initial=0.0)))
        stat /= cscale
        comp /= cscale * qscale
        cons /= qscale
        neg /= qscale
    return KKTCertificate(stat, comp, cons, neg, tol, relative, pi)
