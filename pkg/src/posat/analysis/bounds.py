"""Closed-form PoSat bounds and the sufficient conditions behind them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import MultipleOrigins, NegativeDegree, NegativeKappa
from ..network import Instance, PathFlow, paths_to_arcflow


def _check(kappa: float, n: float) -> None:
    if kappa < 0:
        raise NegativeKappa(f"kappa must be >= 0, got {kappa}")
    if n < 0:
        raise NegativeDegree(f"degree must be >= 0, got {n}")


def zeta_threshold(n: float) -> float:
    """Kink of the piecewise bound, ``(n+1)^(1/n) - 1``; ``e - 1`` as ``n -> 0``."""
    if n == 0:
        return math.e - 1.0
    return (n + 1.0) ** (1.0 / n) - 1.0


def zeta_bound(kappa: float, n: float) -> float:
    """Upper bound on PoSat for polynomial costs of degree ``n``.

    ``(1+kappa)^(n+1)`` above the kink, otherwise
    ``1 / (1/(1+kappa) - n/(n+1)^((n+1)/n))``. For ``n = 0`` the second
    term vanishes and both branches give ``1 + kappa``.
    """
    _check(kappa, n)
    if n == 0:
        return 1.0 + kappa
    if kappa >= zeta_threshold(n):
        return (1.0 + kappa) ** (n + 1)
    return 1.0 / (1.0 / (1.0 + kappa) - n / (n + 1.0) ** ((n + 1.0) / n))


def simple_posat_bound(kappa: float, n: float) -> float:
    _check(kappa, n)
    return (1.0 + kappa) ** (n + 1)


def deviation_ratio_bound(instance: Instance, kappa: float) -> float:
    """``1 + kappa * ceil((|N|-1)/2) * Q`` for single-origin instances."""
    if kappa < 0:
        raise NegativeKappa(f"kappa must be >= 0, got {kappa}")
    origins = set(instance.demands.origins)
    if len(origins) != 1:
        raise MultipleOrigins(f"bound needs one common origin, instance has {len(origins)}")
    total = float(instance.q.sum())
    return 1.0 + kappa * math.ceil((instance.network.n_nodes - 1) / 2) * total


@dataclass
class ConditionCheck:
    holds: bool
    lhs: float
    rhs: float


def _union_costs(instance: Instance, f_a: PathFlow, f_b: PathFlow):
    va = paths_to_arcflow(instance, f_a)
    vb = paths_to_arcflow(instance, f_b)
    ta, tb = instance.cost.times(va), instance.cost.times(vb)
    da, db = f_a.as_dict(), f_b.as_dict()
    keys = sorted(set(da) | set(db))
    rows = []
    for key in keys:
        p = list(key[1])
        rows.append((float(ta[p].sum()), float(tb[p].sum()), da.get(key, 0.0), db.get(key, 0.0)))
    return np.array(rows).reshape(-1, 4)


def check_condition_21(instance: Instance, f_hat0: PathFlow, f_kappa: PathFlow, kappa: float, tol: float = 1e-12) -> ConditionCheck:
    """Sufficient condition for ``C(f_kappa) <= C(f_hat0)`` with separable costs.

    ``sum_p [c_p(f_hat0) - c_p(f_kappa)] (f_hat0_p - f_kappa_p)
    >= kappa sum_p c_p(f_kappa) |f_hat0_p - f_kappa_p|`` over the union of
    both path sets. Path flows are compared as given, so the result
    depends on the decomposition used to produce them.
    """
    r = _union_costs(instance, f_hat0, f_kappa)
    ch, ck, fh, fk = r.T
    lhs = float(np.sum((ch - ck) * (fh - fk)))
    rhs = float(kappa * np.sum(ck * np.abs(fh - fk)))
    return ConditionCheck(lhs >= rhs - tol, lhs, rhs)


def check_condition_23(
    instance: Instance, f_hat_sigma: PathFlow, f_kappa: PathFlow, kappa: float, n: int, tol: float = 1e-12
) -> ConditionCheck:
    """As :func:`check_condition_21` with weight ``max(c_p(f_hat), c_p(f_kappa))``
    and factor ``sigma = (1+kappa)^n - 1``."""
    sigma = (1.0 + kappa) ** n - 1.0
    r = _union_costs(instance, f_hat_sigma, f_kappa)
    ch, ck, fh, fk = r.T
    lhs = float(np.sum((ch - ck) * (fh - fk)))
    rhs = float(sigma * np.sum(np.maximum(ch, ck) * np.abs(fh - fk)))
    return ConditionCheck(lhs >= rhs - tol, lhs, rhs)
