"""Travel times, system travel time, potentials and marginal costs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import LambdaOutOfRange, NotSeparable
from .network import Instance, PathFlow, PolynomialCost, ipow, paths_to_arcflow


def arc_times(cost: PolynomialCost, v) -> np.ndarray:
    return cost.times(np.asarray(v, dtype=float))


def total_travel_time(cost: PolynomialCost, v) -> float:
    """``Z(v) = sum_a t_a(v) v_a``."""
    v = np.asarray(v, dtype=float)
    return float(np.dot(cost.times(v), v))


def path_cost(cost: PolynomialCost, v, path: Sequence[int]) -> float:
    if len(path) == 0:
        return 0.0
    t = cost.times(np.asarray(v, dtype=float))
    return float(t[list(path)].sum())


def path_system_cost(instance: Instance, f: PathFlow) -> float:
    """``C(f) = sum_p c_p(f) f_p`` computed path by path."""
    v = paths_to_arcflow(instance, f)
    t = instance.cost.times(v)
    return float(sum(t[list(p)].sum() * flow for _, p, flow in f.entries))


def _require_separable(cost: PolynomialCost) -> None:
    if not cost.separable:
        raise NotSeparable("closed-form potential needs unit interaction vectors on every term")


def beckmann_potential(cost: PolynomialCost, v) -> float:
    """``sum_a int_0^{v_a} t_a(u) du`` in closed form (separable costs)."""
    _require_separable(cost)
    v = np.asarray(v, dtype=float)
    x = v[cost.term_arc]
    m = cost.term_m
    return float(np.sum(cost.term_b * ipow(x, m + 1) / (m + 1)))


def perceived_potential(cost: PolynomialCost, v, lam) -> float:
    """Beckmann potential with arc ``a`` scaled by ``lam[a]``."""
    _require_separable(cost)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (cost.n_arcs,):
        raise LambdaOutOfRange(f"expected {cost.n_arcs} per-arc multipliers, got shape {lam.shape}")
    if (lam <= 0).any() or (lam > 1).any():
        raise LambdaOutOfRange("per-arc multipliers must lie in (0, 1]")
    v = np.asarray(v, dtype=float)
    x = v[cost.term_arc]
    m = cost.term_m
    return float(np.sum(lam[cost.term_arc] * cost.term_b * ipow(x, m + 1) / (m + 1)))


def line_potential(cost: PolynomialCost, v) -> float:
    """``int_0^1 t(s v) . v ds`` by Gauss-Legendre, exact for polynomial costs.

    For integrable (symmetric-Jacobian) costs this is the potential whose
    minimiser over the feasible set is the user equilibrium.
    """
    v = np.asarray(v, dtype=float)
    k = cost.degree // 2 + 1
    s, w = np.polynomial.legendre.leggauss(k)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    return float(sum(wi * np.dot(cost.times(si * v), v) for si, wi in zip(s, w)))


def so_marginal_costs(cost: PolynomialCost, v) -> np.ndarray:
    """Gradient of ``Z``: ``t_a(v) + sum_e v_e dt_e/dv_a``."""
    return cost.marginal(np.asarray(v, dtype=float))


def jacobian(cost: PolynomialCost, v) -> np.ndarray:
    return cost.jacobian(np.asarray(v, dtype=float))


def fd_step(v) -> float:
    return 1e-5 * max(1.0, float(np.abs(v).max()) if np.size(v) else 1.0)


def central_difference(fn: Callable[[np.ndarray], float], v) -> np.ndarray:
    """Central-difference gradient with step ``1e-5 * max(1, |v|_inf)``."""
    v = np.asarray(v, dtype=float)
    h = fd_step(v)
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (fn(v + e) - fn(v - e)) / (2 * h)
    return g


@dataclass
class MonotonicityReport:
    samples: int
    min_inner: float  # min of (t(v1) - t(v2)) . (v1 - v2)
    alpha: float  # min of the inner product over |v1 - v2|^2
    worst_pair: tuple

    @property
    def monotone(self) -> bool:
        return self.min_inner >= 0.0


def monotonicity_probe(
    cost: PolynomialCost,
    samples: int = 100,
    seed: int = 0,
    scale: float = 1.0,
    pairs: Sequence[tuple] | None = None,
) -> MonotonicityReport:
    """Sample the monotonicity inner product on random nonnegative flow pairs.

    Pairs are drawn uniformly from ``[0, scale]^A`` unless given explicitly.
    ``alpha`` estimates the strong-monotonicity modulus; it is a sample
    minimum, not a proof.
    """
    if pairs is None:
        if samples < 1:
            raise ValueError("samples must be >= 1")
        rng = np.random.default_rng(seed)
        pairs = [(rng.uniform(0, scale, cost.n_arcs), rng.uniform(0, scale, cost.n_arcs)) for _ in range(samples)]
    min_inner, alpha, worst = np.inf, np.inf, None
    for v1, v2 in pairs:
        v1, v2 = np.asarray(v1, dtype=float), np.asarray(v2, dtype=float)
        dv = v1 - v2
        inner = float(np.dot(cost.times(v1) - cost.times(v2), dv))
        if inner < min_inner:
            min_inner, worst = inner, (v1, v2)
        nrm = float(np.dot(dv, dv))
        if nrm > 0:
            alpha = min(alpha, inner / nrm)
    return MonotonicityReport(len(pairs), float(min_inner), float(alpha), worst)
